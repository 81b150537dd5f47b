"""2D input strokes, mapped 3D strokes, and stroke-file I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_SEGMENT = 1e-9  # mm


class StrokeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Stroke2D:
    """Ordered polyline of pen-down points in the drawing plane (mm)."""

    points: np.ndarray
    id: str = "stroke"
    color: str | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise StrokeError(f"stroke {self.id!r} needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise StrokeError(f"stroke {self.id!r} has non-finite points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= MIN_SEGMENT):
            raise StrokeError(f"stroke {self.id!r} has repeated consecutive points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)


@dataclass(frozen=True, eq=False)
class StrokeSet2D:
    strokes: tuple[Stroke2D, ...]

    def __post_init__(self):
        strokes = tuple(self.strokes)
        if not strokes:
            raise StrokeError("stroke set is empty")
        object.__setattr__(self, "strokes", strokes)

    def __len__(self) -> int:
        return len(self.strokes)

    def __iter__(self):
        return iter(self.strokes)

    def __getitem__(self, i) -> Stroke2D:
        return self.strokes[i]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        allp = np.vstack([s.points for s in self.strokes])
        return allp.min(axis=0), allp.max(axis=0)

    def transformed(self, fn) -> "StrokeSet2D":
        return StrokeSet2D(tuple(Stroke2D(fn(s.points), s.id, s.color) for s in self.strokes))

    def colors(self) -> list[str | None]:
        seen = []
        for s in self.strokes:
            if s.color not in seen:
                seen.append(s.color)
        return seen

    def subset(self, color) -> "StrokeSet2D":
        return StrokeSet2D(tuple(s for s in self.strokes if s.color == color))


@dataclass(frozen=True, eq=False)
class Stroke3D:
    """Mapped stroke: surface points with normals; pen-up points are travel only.

    The pen-down points correspond one-to-one, in order, with the source
    :class:`Stroke2D` points.
    """

    id: str
    points: np.ndarray
    normals: np.ndarray
    pen_down: np.ndarray
    color: str | None = None
    flags: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 3)
        n = np.array(self.normals, dtype=float).reshape(-1, 3)
        d = np.array(self.pen_down, dtype=bool).reshape(-1)
        if not (len(p) == len(n) == len(d)):
            raise StrokeError("stroke columns differ in length")
        for name, arr in (("points", p), ("normals", n), ("pen_down", d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def drawn_points(self) -> np.ndarray:
        return self.points[self.pen_down]

    @property
    def drawn_normals(self) -> np.ndarray:
        return self.normals[self.pen_down]

    @property
    def n_travel(self) -> int:
        return int((~self.pen_down).sum())


def scale_to_workspace(strokes: StrokeSet2D, workspace) -> StrokeSet2D:
    """Uniformly scale and centre the strokes so their bounding box is inscribed in ``workspace``.

    ``workspace`` is ``(xmin, ymin, xmax, ymax)`` in mm.
    """
    xmin, ymin, xmax, ymax = (float(v) for v in workspace)
    W, H = xmax - xmin, ymax - ymin
    if W <= 0 or H <= 0:
        raise StrokeError("workspace must have positive extent")
    lo, hi = strokes.bounds
    w, h = hi - lo
    if w <= 0 and h <= 0:
        raise StrokeError("stroke bounds are degenerate")
    scale = min(W / w if w > 0 else np.inf, H / h if h > 0 else np.inf)
    c_src = 0.5 * (lo + hi)
    c_dst = np.array([0.5 * (xmin + xmax), 0.5 * (ymin + ymax)])
    return strokes.transformed(lambda p: (p - c_src) * scale + c_dst)


def lattice_strokes(width: float = 80.0, height: float = 80.0, lines: int = 9,
                    points_per_stroke: int = 81, center=(0.0, 0.0)) -> StrokeSet2D:
    """Grid of boxes: ``lines`` horizontal strokes, then ``lines`` vertical strokes.

    Horizontal and vertical strokes share their crossing points exactly.
    """
    cx, cy = center
    xs = np.linspace(-width / 2, width / 2, points_per_stroke) + cx
    ys = np.linspace(-height / 2, height / 2, points_per_stroke) + cy
    step = (points_per_stroke - 1) // (lines - 1)
    if step * (lines - 1) != points_per_stroke - 1:
        raise StrokeError("lines must divide the stroke evenly so crossings coincide with points")
    out = []
    for j, y in enumerate(ys[::step]):
        out.append(Stroke2D(np.column_stack([xs, np.full_like(xs, y)]), f"h{j}"))
    for j, x in enumerate(xs[::step]):
        out.append(Stroke2D(np.column_stack([np.full_like(ys, x), ys]), f"v{j}"))
    return StrokeSet2D(tuple(out))


def circle_stroke(radius: float = 20.0, n: int = 72, center=(0.0, 0.0), closed: bool = False,
                  id: str = "circle") -> Stroke2D:
    t = 2.0 * np.pi * np.arange(n + (1 if closed else 0)) / n
    pts = np.column_stack([radius * np.cos(t), radius * np.sin(t)]) + np.asarray(center, dtype=float)
    if closed:
        pts[-1] = pts[0]
    return Stroke2D(pts, id)


def strokes_from_json(doc) -> StrokeSet2D:
    items = doc["strokes"] if isinstance(doc, dict) else doc
    out = []
    for i, item in enumerate(items):
        out.append(Stroke2D(np.asarray(item["points"], dtype=float), str(item.get("id", f"s{i}")),
                            item.get("color")))
    return StrokeSet2D(tuple(out))


def read_strokes(path) -> StrokeSet2D:
    with open(path, "r", encoding="utf-8") as fh:
        return strokes_from_json(json.load(fh))


def strokes_to_json(strokes: StrokeSet2D) -> dict:
    out = []
    for s in strokes:
        item = {"id": s.id, "points": s.points.tolist()}
        if s.color is not None:
            item["color"] = s.color
        out.append(item)
    return {"strokes": out}


def stroke3d_to_json(s: Stroke3D) -> dict:
    item = {"id": s.id, "points": s.points.tolist(), "normals": s.normals.tolist(),
            "pen_down": s.pen_down.tolist()}
    if s.color is not None:
        item["color"] = s.color
    return item


def stroke3d_from_json(item: dict) -> Stroke3D:
    return Stroke3D(item["id"], item["points"], item["normals"], item["pen_down"], item.get("color"))


def write_strokes(path, strokes: StrokeSet2D) -> None:
    Path(path).write_text(json.dumps(strokes_to_json(strokes), indent=1))
