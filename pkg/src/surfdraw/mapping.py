"""2D stroke to 3D surface mapping: vertical projection, frame transport (DI/EI) and chart lookup (SI/II)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Z_AXIS, rotation_between, rotation_matrix_between, unit
from .lscm import ParamChart, ParameterizationError, lscm_unfold, map_chart_points, register_strokes_to_chart
from .strokes import Stroke2D, Stroke3D, StrokeSet2D
from .surface import SpatialIndex, SurfaceModel

METHODS = ("baseline", "DI", "EI", "SI", "II")
SNAP_FACTOR = 5.0
BASELINE_LAYER = 10.0  # depth window, in gating radii, that counts as the front layer


class MappingError(ValueError):
    pass


@dataclass
class MappingConfig:
    method: str = "EI"
    sample_count: int = 1_000_000
    k_neighbors: int = 10
    seed: int = 0
    start_point_3d: np.ndarray | None = None
    start_normal: np.ndarray | None = None
    scale_mode: object = "fit"
    direction: tuple = (0.0, 0.0, -1.0)
    snap_tolerance: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.method in ("EI", "II") and self.k_neighbors < 3:
            raise ValueError("k_neighbors must be >= 3 for EI and II")


@dataclass
class MappingResult:
    method: str
    strokes: list[Stroke3D]
    diagnostics: dict = field(default_factory=dict)
    duration: float = 0.0


def snap_tolerance(index: SpatialIndex, cfg: MappingConfig | None = None) -> float:
    if cfg is not None and cfg.snap_tolerance is not None:
        return float(cfg.snap_tolerance)
    return SNAP_FACTOR * index.mean_spacing


def bridge_points(a, b, spacing: float) -> np.ndarray:
    """Interior points of the straight 2D segment a -> b at about ``spacing`` apart."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    length = float(np.linalg.norm(b - a))
    if length <= 1e-9:
        return np.zeros((0, 2))
    n = max(1, int(np.ceil(length / spacing - 1e-9)))
    t = np.arange(1, n) / n
    return a + t[:, None] * (b - a)


# --- vertical projection ---------------------------------------------------

class _Projector:
    """Samples expressed in a ray frame: (a, b) across the ray, t along it."""

    def __init__(self, index: SpatialIndex, direction):
        d = unit(direction)
        R = rotation_between(Z_AXIS, -d).rotation
        self.u, self.w, self.d = R[:, 0], R[:, 1], d
        P = index.positions
        self.ab = np.column_stack([P @ self.u, P @ self.w])
        self.t = P @ d
        self.tree = cKDTree(self.ab)
        self.index = index

    def cast(self, p2, gate: float) -> int:
        q = np.asarray(p2, dtype=float)
        cand = np.asarray(self.tree.query_ball_point(q, gate), dtype=np.int64)
        if cand.size == 0:
            raise MappingError(f"projection miss at {q.tolist()}")
        t = self.t[cand]
        front = cand[t <= t.min() + BASELINE_LAYER * gate]
        perp = np.sqrt(((self.ab[front] - q) ** 2).sum(axis=1))
        return int(front[np.lexsort((front, perp))[0]])


def _project_points(proj: _Projector, pts: np.ndarray, gate: float, skip_miss: bool = False):
    samples = proj.index.samples
    ids = []
    for p in pts:
        try:
            ids.append(proj.cast(p, gate))
        except MappingError:
            if not skip_miss:
                raise
            ids.append(-1)
    ids = np.asarray(ids, dtype=np.int64)
    ok = ids >= 0
    return samples.positions[ids[ok]], samples.normals[ids[ok]], ok


def map_baseline(strokes: StrokeSet2D, index: SpatialIndex, direction=(0.0, 0.0, -1.0),
                 gate: float | None = None, diagnostics: dict | None = None) -> list[Stroke3D]:
    """Cast each 2D point along ``direction`` and take the nearest front-most sample to the ray.

    Points whose snapped normal faces away from the viewer (angle to the ray
    of 90 degrees or more) are flagged.
    """
    gate = SNAP_FACTOR * index.mean_spacing if gate is None else gate
    proj = _Projector(index, direction)

    def pointwise(pts, travel):
        return _project_points(proj, pts, gate, skip_miss=travel)

    out = _map_pointwise(strokes, pointwise)
    flagged = 0
    view = -proj.d
    result = []
    for s in out:
        flags = s.normals @ view <= 0.0
        flags &= s.pen_down
        flagged += int(flags.sum())
        result.append(Stroke3D(s.id, s.points, s.normals, s.pen_down, s.color, flags))
    if diagnostics is not None:
        diagnostics.update(flagged=flagged, gate=gate)
    return result


def _map_pointwise(strokes: StrokeSet2D, fn) -> list[Stroke3D]:
    """Map every stroke point independently; bridge points that fail are dropped."""
    out = []
    prev = None
    for s in strokes:
        parts_p, parts_n, parts_d = [], [], []
        if prev is not None:
            br = bridge_points(prev.points[-1], s.points[0], float(prev.segment_lengths.mean()))
            if len(br):
                q, n, ok = fn(br, True)
                parts_p.append(q)
                parts_n.append(n)
                parts_d.append(np.zeros(int(ok.sum()), dtype=bool))
        q, n, _ = fn(s.points, False)
        parts_p.append(q)
        parts_n.append(n)
        parts_d.append(np.ones(len(s), dtype=bool))
        out.append(Stroke3D(s.id, np.vstack(parts_p), np.vstack(parts_n), np.concatenate(parts_d), s.color))
        prev = s
    return out


# --- frame transport -------------------------------------------------------

def _fit_plane(pts: np.ndarray):
    c = pts.mean(axis=0)
    w, V = np.linalg.eigh((pts - c).T @ (pts - c))
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        return None
    return c, V[:, 0]


class _Transport:
    def __init__(self, index: SpatialIndex, method: str, k: int, gate: float):
        self.index, self.method, self.k, self.gate = index, method, k, gate
        self.fallbacks = 0
        self.presnap: list[np.ndarray] = []

    def step(self, q, n, seg2: np.ndarray):
        """Advance one segment from surface point ``q`` with normal ``n``."""
        T = rotation_matrix_between(Z_AXIS, n)
        qp = q + T @ np.array([seg2[0], seg2[1], 0.0])
        self.presnap.append(qp)
        idx, dist = self.index.k_nearest_indices(qp, 1 if self.method == "DI" else self.k)
        if dist[0] > self.gate:
            raise MappingError(f"left surface near {qp.tolist()} (nearest sample {dist[0]:.4g} mm away)")
        samples = self.index.samples
        if self.method == "EI":
            fit = _fit_plane(samples.positions[idx])
            if fit is not None:
                c, nf = fit
                if nf @ n < 0.0:
                    nf = -nf
                return qp - ((qp - c) @ nf) * nf, nf
            self.fallbacks += 1
        j = int(idx[0])
        return samples.positions[j].copy(), samples.normals[j].copy()

    def run(self, pts2: np.ndarray, q0, n0):
        Q = np.empty((len(pts2), 3))
        N = np.empty((len(pts2), 3))
        Q[0], N[0] = q0, n0
        q, n = np.asarray(q0, dtype=float), unit(n0)
        for i, seg in enumerate(np.diff(pts2, axis=0)):
            q, n = self.step(q, n, seg)
            Q[i + 1], N[i + 1] = q, n
        return Q, N


def sequence_strokes(strokes: StrokeSet2D, index: SpatialIndex, cfg: MappingConfig,
                     diagnostics: dict | None = None) -> list[Stroke3D]:
    """Transport every stroke in order, walking pen-up bridges between them.

    The first stroke starts at ``cfg.start_point_3d`` with ``cfg.start_normal``;
    each later stroke starts where the transported bridge from the previous
    stroke's end arrives.  Bridge points are emitted with ``pen_down`` false.
    """
    if cfg.method not in ("DI", "EI"):
        raise ValueError("frame transport supports DI and EI only")
    if cfg.start_point_3d is None or cfg.start_normal is None:
        raise MappingError("transport needs a start point and normal")
    gate = snap_tolerance(index, cfg)
    q0 = np.asarray(cfg.start_point_3d, dtype=float)
    _, d0 = index.nearest_index(q0)
    if d0 > gate:
        raise MappingError("start point is not on the surface")
    tr = _Transport(index, cfg.method, cfg.k_neighbors, gate)
    q, n = q0, unit(cfg.start_normal)
    out = []
    prev = None
    for s in strokes:
        n_bridge = 0
        if prev is None:
            path = s.points
        else:
            br = bridge_points(prev.points[-1], s.points[0], float(prev.segment_lengths.mean()))
            n_bridge = len(br)
            path = np.vstack([prev.points[-1:], br, s.points])
        Q, N = tr.run(path, q, n)
        if prev is not None:
            Q, N = Q[1:], N[1:]
        pen = np.ones(len(Q), dtype=bool)
        pen[:n_bridge] = False
        out.append(Stroke3D(s.id, Q, N, pen, s.color))
        q, n = Q[-1], N[-1]
        prev = s
    if diagnostics is not None:
        diagnostics.update(gate=gate, ei_fallbacks=tr.fallbacks, presnap=np.asarray(tr.presnap))
    return out


def map_metrology(strokes: StrokeSet2D, index: SpatialIndex, cfg: MappingConfig,
                  diagnostics: dict | None = None) -> list[Stroke3D]:
    """DI snaps each transported point to the nearest sample; EI projects it on a local plane fit."""
    return sequence_strokes(strokes, index, cfg, diagnostics)


# --- chart lookup ----------------------------------------------------------

def map_parameterized(registered: StrokeSet2D, chart: ParamChart, cfg: MappingConfig,
                      diagnostics: dict | None = None) -> list[Stroke3D]:
    """Look registered uv strokes up on the chart (SI: nearest vertex, II: barycentric)."""
    if cfg.method not in ("SI", "II"):
        raise ValueError("chart lookup supports SI and II only")

    def pointwise(pts, travel):
        if not travel:
            try:
                q, n = map_chart_points(chart, pts, cfg.method, cfg.k_neighbors)
            except ParameterizationError as exc:
                raise MappingError(str(exc)) from exc
            return q, n, np.ones(len(pts), dtype=bool)
        try:
            q, n = map_chart_points(chart, pts, cfg.method, cfg.k_neighbors)
            return q, n, np.ones(len(pts), dtype=bool)
        except ParameterizationError:
            pass
        qs, ns, ok = [], [], []
        for p in pts:
            try:
                q, n = map_chart_points(chart, p[None, :], cfg.method, cfg.k_neighbors)
            except ParameterizationError:
                ok.append(False)
                continue
            qs.append(q[0])
            ns.append(n[0])
            ok.append(True)
        return np.reshape(qs, (-1, 3)), np.reshape(ns, (-1, 3)), np.asarray(ok, dtype=bool)

    out = _map_pointwise(registered, pointwise)
    if diagnostics is not None:
        diagnostics.update(conformal_energy=chart.conformal_energy, chart_scale=chart.edge_ratio)
    return out


def _restore_ids(mapped: list[Stroke3D], strokes: StrokeSet2D) -> list[Stroke3D]:
    return [Stroke3D(s.id, m.points, m.normals, m.pen_down, s.color, m.flags) for m, s in zip(mapped, strokes)]


def map_strokes(strokes: StrokeSet2D, surface: SurfaceModel, cfg: MappingConfig,
                chart: ParamChart | None = None) -> MappingResult:
    """Run one mapping method end to end and time it."""
    diag: dict = {}
    t0 = time.perf_counter()
    if cfg.method == "baseline":
        gate = snap_tolerance(surface.index, cfg)
        mapped = map_baseline(strokes, surface.index, cfg.direction, gate, diag)
    elif cfg.method in ("DI", "EI"):
        mapped = map_metrology(strokes, surface.index, cfg, diag)
    else:
        if chart is None:
            if surface.chart_mesh is None:
                raise MappingError("chart methods need a mesh segment")
            chart = lscm_unfold(surface.chart_mesh)
        if cfg.start_point_3d is None:
            raise MappingError("chart registration needs a start point")
        registered = register_strokes_to_chart(strokes, chart, cfg.start_point_3d, cfg.scale_mode,
                                               cfg.start_normal)
        mapped = _restore_ids(map_parameterized(registered, chart, cfg, diag), strokes)
    return MappingResult(cfg.method, mapped, diag, time.perf_counter() - t0)


__all__ = [
    "METHODS", "MappingConfig", "MappingError", "MappingResult", "Stroke2D", "bridge_points",
    "map_baseline", "map_metrology", "map_parameterized", "map_strokes", "sequence_strokes",
    "snap_tolerance",
]
