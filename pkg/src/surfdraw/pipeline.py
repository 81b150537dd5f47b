"""Configuration resolution and the built-in benchmark suite."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import shapes
from .mapping import METHODS, MappingConfig
from .meshio import load_mesh, load_point_cloud
from .strokes import StrokeSet2D, circle_stroke, lattice_strokes, read_strokes, scale_to_workspace
from .surface import PointCloudSurface, SurfaceError, SurfaceModel, TriangleMesh, estimate_normals

DEFAULTS = {
    "seed": 0,
    "methods": list(METHODS),
    "mapping": {"sample_count": 1_000_000, "k_neighbors": 10, "scale_mode": "fit",
                "direction": [0.0, 0.0, -1.0]},
    "trajectory": {"standoff": 10.0, "max_step_angle_deg": 5.0, "max_step_dist": 2.0},
    "recover": {"threshold": 2.0, "lift": 10.0},
    "template": {"count": 100_000},
}

BUILTIN_SHAPES = {
    "plane": shapes.plane_grid,
    "half_cylinder": shapes.half_cylinder,
    "cylinder_chart": shapes.cylinder_chart,
    "box": shapes.box,
    "hemisphere": shapes.hemisphere,
    "sphere": shapes.sphere,
    "hemisphere_with_walls": shapes.hemisphere_with_walls,
    "dome": shapes.dome,
}


class ConfigError(ValueError):
    """Invalid configuration or unreadable input (exit status 2)."""


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def input_paths(spec) -> list[Path]:
    """File paths referenced by a surface or stroke spec."""
    if isinstance(spec, str):
        return [Path(spec)]
    if isinstance(spec, dict) and "path" in spec:
        return [Path(spec["path"])]
    return []


def _check_readable(path: Path) -> None:
    if not path.is_file():
        raise ConfigError(f"cannot read input file: {path}")


def load_surface_spec(spec, *, sample_count: int, seed: int, chart_spec=None) -> SurfaceModel:
    """Build a :class:`SurfaceModel` from ``{"path": ..., "kind": ...}`` or ``{"builtin": name, ...}``."""
    if spec is None:
        raise ConfigError("no surface given")
    if isinstance(spec, str):
        spec = {"path": spec}
    chart = load_mesh_spec(chart_spec) if chart_spec is not None else None
    if "builtin" in spec and spec["builtin"] == "helmet":
        params = {k: v for k, v in spec.items() if k != "builtin"}
        params.setdefault("seed", seed)
        cloud = shapes.helmet_cloud(**params)
        return SurfaceModel.from_point_cloud(cloud, chart_mesh=chart, name="helmet")
    kind = spec.get("kind")
    if kind is None and "path" in spec:
        kind = "pointcloud" if Path(spec["path"]).suffix.lower() in (".xyz", ".txt", ".pts") else "mesh"
    if kind == "pointcloud":
        path = Path(spec["path"])
        _check_readable(path)
        try:
            pts, normals = load_point_cloud(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read point cloud {path}: {exc}") from exc
        if normals is None:
            normals = estimate_normals(pts, int(spec.get("k_normals", 20)),
                                       spec.get("viewpoint", (0.0, 0.0, 1e6)))
        return SurfaceModel.from_point_cloud(PointCloudSurface(pts, normals), chart_mesh=chart,
                                             name=path.stem)
    mesh = load_mesh_spec(spec)
    name = spec.get("builtin") or Path(spec["path"]).stem
    return SurfaceModel.from_mesh(mesh, sample_count, seed, chart_mesh=chart, name=name)


def load_mesh_spec(spec) -> TriangleMesh:
    if isinstance(spec, str):
        spec = {"path": spec}
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in BUILTIN_SHAPES:
            raise ConfigError(f"unknown built-in surface {name!r}")
        params = {k: v for k, v in spec.items() if k not in ("builtin", "kind")}
        return BUILTIN_SHAPES[name](**params)
    path = Path(spec["path"])
    _check_readable(path)
    try:
        return load_mesh(path)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read mesh {path}: {exc}") from exc


def load_stroke_spec(spec, workspace=None) -> StrokeSet2D:
    if spec is None:
        raise ConfigError("no strokes given")
    if isinstance(spec, str):
        spec = {"path": spec}
    if "path" in spec:
        path = Path(spec["path"])
        _check_readable(path)
        try:
            strokes = read_strokes(path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read strokes {path}: {exc}") from exc
    elif "lattice" in spec:
        strokes = lattice_strokes(**spec["lattice"])
    elif "circle" in spec:
        strokes = StrokeSet2D((circle_stroke(**spec["circle"]),))
    else:
        raise ConfigError("strokes need a path, a lattice or a circle")
    if workspace is not None:
        strokes = scale_to_workspace(strokes, workspace)
    return strokes


def mapping_config(cfg: dict, method: str, surface: SurfaceModel | None = None,
                   strokes: StrokeSet2D | None = None) -> MappingConfig:
    """Build a :class:`MappingConfig`; a missing start point comes from vertical projection."""
    m = cfg.get("mapping", {})
    start = m.get("start_point")
    normal = m.get("start_normal")
    if start is None and surface is not None and strokes is not None:
        start, normal = project_start(surface, strokes, m.get("direction", (0.0, 0.0, -1.0)))
    elif start is not None and normal is None and surface is not None:
        j, _ = surface.index.nearest_index(np.asarray(start, dtype=float))
        normal = surface.samples.normals[j]
    scale = m.get("scale_mode", "fit")
    return MappingConfig(
        method=method,
        sample_count=len(surface.samples) if surface is not None else int(m.get("sample_count", 1_000_000)),
        k_neighbors=int(m.get("k_neighbors", 10)),
        seed=int(cfg.get("seed", 0)),
        start_point_3d=None if start is None else np.asarray(start, dtype=float),
        start_normal=None if normal is None else np.asarray(normal, dtype=float),
        scale_mode=scale,
        direction=tuple(m.get("direction", (0.0, 0.0, -1.0))),
        snap_tolerance=m.get("snap_tolerance"),
    )


def project_start(surface: SurfaceModel, strokes: StrokeSet2D, direction):
    """Surface sample hit by casting the first stroke point along ``direction``."""
    from .mapping import _Projector, snap_tolerance

    proj = _Projector(surface.index, direction)
    j = proj.cast(strokes[0].points[0], snap_tolerance(surface.index))
    return surface.samples.positions[j].copy(), surface.samples.normals[j].copy()


@dataclass
class BenchCell:
    name: str
    surface: dict
    strokes: dict
    methods: list
    mapping: dict
    chart: dict | None = None


def builtin_suite(sample_count: int = 200_000) -> list[BenchCell]:
    """Analytic surfaces with their lattice layouts: plane, box, cylinder and sphere.

    Cells without a start point start where the first stroke point projects
    vertically onto the surface.
    """
    R = 50.0
    a = -40.0 / R
    cyl_start = [-40.0, R * np.sin(a), R * np.cos(a)]
    cyl_normal = [0.0, np.sin(a), np.cos(a)]
    return [
        # the plane is indexed by its 1 mm grid vertices alone, so every method is exact there
        BenchCell("plane", {"builtin": "plane"}, {"lattice": {}}, list(METHODS),
                  {"sample_count": 0, "start_point": [-40.0, -40.0, 0.0], "start_normal": [0, 0, 1.0]}),
        BenchCell("box", {"builtin": "box", "pitch": 2.0}, {"lattice": {}}, list(METHODS),
                  {"sample_count": sample_count, "start_point": [-40.0, -40.0, 50.0], "start_normal": [0, 0, 1.0]},
                  chart={"builtin": "box", "pitch": 2.0, "open_bottom": True}),
        BenchCell("cylinder", {"builtin": "half_cylinder"}, {"lattice": {}}, list(METHODS),
                  {"sample_count": sample_count, "start_point": cyl_start, "start_normal": cyl_normal},
                  chart={"builtin": "cylinder_chart"}),
        BenchCell("sphere", {"builtin": "hemisphere"},
                  {"lattice": {"width": 60.0, "height": 60.0, "lines": 7, "points_per_stroke": 61}},
                  list(METHODS),
                  {"sample_count": sample_count}),
    ]


__all__ = ["ConfigError", "DEFAULTS", "BenchCell", "builtin_suite", "load_mesh_spec", "load_stroke_spec",
           "load_surface_spec", "mapping_config", "merge", "SurfaceError"]
