"""Length-distortion measures for mapped strokes and the multi-method benchmark."""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .lscm import ParamChart, lscm_unfold
from .mapping import MappingConfig, map_strokes
from .strokes import Stroke2D, Stroke3D, StrokeSet2D
from .surface import SurfaceModel

PAIR_TOL = 1e-6  # mm; cross-stroke points closer than this count as shared


def local_error(stroke2d: Stroke2D, stroke3d: Stroke3D) -> np.ndarray:
    """Relative change of each segment length: ``(|q_i q_i+1| - |p_i p_i+1|) / |p_i p_i+1|``.

    Only pen-down points of the mapped stroke take part.
    """
    q = stroke3d.drawn_points
    if len(q) != len(stroke2d):
        raise ValueError(f"stroke {stroke2d.id!r}: {len(stroke2d)} input points but {len(q)} drawn points")
    lp = stroke2d.segment_lengths
    lq = np.linalg.norm(np.diff(q, axis=0), axis=1)
    return (lq - lp) / lp


@dataclass(frozen=True)
class GlobalErrorSeries:
    pairs: np.ndarray   # (n, 4) int: stroke_a, point_a, stroke_b, point_b
    values: np.ndarray  # mm

    def __len__(self) -> int:
        return len(self.values)


def closest_pairs(strokes: StrokeSet2D, tol: float = PAIR_TOL) -> np.ndarray:
    """Cross-stroke point pairs closer than ``tol`` in 2D.

    If the whole set has no such pair, the single closest pair of every
    stroke pair is used instead.  Rows are ``(stroke_a, i, stroke_b, j)``
    with ``stroke_a < stroke_b``, sorted.
    """
    if len(strokes) < 2:
        return np.zeros((0, 4), dtype=np.int64)
    pts = np.vstack([s.points for s in strokes])
    owner = np.concatenate([np.full(len(s), k) for k, s in enumerate(strokes)])
    local = np.concatenate([np.arange(len(s)) for s in strokes])
    near = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    if len(near):
        near = near[owner[near[:, 0]] != owner[near[:, 1]]]
    if len(near):
        a, b = near[:, 0], near[:, 1]
        swap = owner[a] > owner[b]
        a, b = np.where(swap, b, a), np.where(swap, a, b)
        rows = np.column_stack([owner[a], local[a], owner[b], local[b]])
    else:
        rows = []
        trees = [cKDTree(s.points) for s in strokes]
        for i in range(len(strokes)):
            for j in range(i + 1, len(strokes)):
                d, idx = trees[j].query(strokes[i].points)
                m = int(np.argmin(d))
                rows.append((i, m, j, int(idx[m])))
        rows = np.asarray(rows, dtype=np.int64)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return rows[np.lexsort(rows.T[::-1])]


def global_error(strokes: StrokeSet2D, mapped: list[Stroke3D], pairs: np.ndarray | None = None) -> GlobalErrorSeries:
    """``|q_m q_n| - |p_m p_n|`` over closest cross-stroke pairs (mm)."""
    if len(mapped) != len(strokes):
        raise ValueError("mapped set does not match the input strokes")
    pairs = closest_pairs(strokes) if pairs is None else pairs
    drawn = [m.drawn_points for m in mapped]
    vals = np.empty(len(pairs))
    for r, (a, i, b, j) in enumerate(pairs):
        d2 = np.linalg.norm(strokes[a].points[i] - strokes[b].points[j])
        d3 = np.linalg.norm(drawn[a][i] - drawn[b][j])
        vals[r] = d3 - d2
    return GlobalErrorSeries(pairs, vals)


def _mean_abs(x: np.ndarray) -> float:
    return float(np.mean(np.abs(x))) if len(x) else 0.0


def _mean(x: np.ndarray) -> float:
    return float(np.mean(x)) if len(x) else 0.0


@dataclass
class DeformationReport:
    method: str
    local: list[np.ndarray] = field(default_factory=list)
    global_: GlobalErrorSeries | None = None
    duration: float = 0.0
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def local_values(self) -> np.ndarray:
        return np.concatenate(self.local) if self.local else np.zeros(0)

    @property
    def global_values(self) -> np.ndarray:
        return self.global_.values if self.global_ is not None else np.zeros(0)

    @property
    def mean_local(self) -> float:
        return _mean_abs(self.local_values) if self.ok else float("nan")

    @property
    def mean_global(self) -> float:
        return _mean_abs(self.global_values) if self.ok else float("nan")

    @property
    def signed_mean_local(self) -> float:
        return _mean(self.local_values) if self.ok else float("nan")

    @property
    def signed_mean_global(self) -> float:
        return _mean(self.global_values) if self.ok else float("nan")

    def summary(self, include_duration: bool = True) -> dict:
        def num(x):
            return x if np.isfinite(x) else None

        out = {
            "method": self.method,
            "ok": self.ok,
            "error": self.error,
            "mean_abs_local_error": num(self.mean_local),
            "mean_abs_global_error": num(self.mean_global),
            "mean_signed_local_error": num(self.signed_mean_local),
            "mean_signed_global_error": num(self.signed_mean_global),
            "n_segments": int(len(self.local_values)),
            "n_pairs": int(len(self.global_values)),
        }
        if include_duration:
            out["duration_s"] = self.duration
        return out

    def to_json(self, include_duration: bool = True) -> dict:
        out = self.summary(include_duration)
        out["local_error"] = [s.tolist() for s in self.local]
        if self.global_ is not None:
            out["global_pairs"] = self.global_.pairs.tolist()
            out["global_error"] = self.global_.values.tolist()
        out["diagnostics"] = {k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str, bool))}
        return out


def evaluate(method: str, strokes: StrokeSet2D, mapped: list[Stroke3D], duration: float = 0.0,
             diagnostics: dict | None = None) -> DeformationReport:
    local = [local_error(s, m) for s, m in zip(strokes, mapped)]
    return DeformationReport(method, local, global_error(strokes, mapped), duration, None, dict(diagnostics or {}))


def benchmark(surface: SurfaceModel, strokes: StrokeSet2D, methods, cfg: MappingConfig,
              chart: ParamChart | None = None, keep_mapped: dict | None = None) -> list[DeformationReport]:
    """Map the same strokes with every method; failures are recorded, not raised.

    The chart for SI/II is unfolded once and its solve time is added to each
    chart method's duration.
    """
    reports = []
    chart_time = 0.0
    for method in methods:
        mcfg = dataclasses.replace(cfg, method=method)
        try:
            extra = 0.0
            if method in ("SI", "II") and chart is None:
                t0 = time.perf_counter()
                if surface.chart_mesh is None:
                    raise ValueError("chart methods need a mesh segment")
                chart = lscm_unfold(surface.chart_mesh)
                chart_time = time.perf_counter() - t0
            if method in ("SI", "II"):
                extra = chart_time
            res = map_strokes(strokes, surface, mcfg, chart)
            rep = evaluate(method, strokes, res.strokes, res.duration + extra, res.diagnostics)
            if keep_mapped is not None:
                keep_mapped[method] = res.strokes
        except (ValueError, ArithmeticError) as exc:
            rep = DeformationReport(method, error=f"{type(exc).__name__}: {exc}")
        reports.append(rep)
    return reports


def _fmt(x) -> str:
    return repr(float(x))


def write_report_csv(path, report: DeformationReport) -> None:
    """One row per segment (local) and per pair (global), full float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "stroke", "index", "other_stroke", "other_index", "value"])
        for k, series in enumerate(report.local):
            for i, v in enumerate(series):
                w.writerow(["local", k, i, "", "", _fmt(v)])
        if report.global_ is not None:
            for (a, i, b, j), v in zip(report.global_.pairs, report.global_.values):
                w.writerow(["global", a, i, b, j, _fmt(v)])
