"""Target surfaces: triangle meshes and point clouds, sampling and exact NN search."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .geometry import as_point

FACE, VERTEX, POINT = 0, 1, 2
_KIND_NAMES = {FACE: "face", VERTEX: "vertex", POINT: "point"}

MIN_FACE_AREA = 1e-12  # mm^2
MERGE_TOL = 1e-9  # mm


class SurfaceError(ValueError):
    """Raised for invalid or unusable surface input."""


def _face_geometry(vertices: np.ndarray, faces: np.ndarray):
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    cross = np.cross(b - a, c - a)
    twice_area = np.linalg.norm(cross, axis=1)
    return cross, 0.5 * twice_area


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle mesh with per-face unit normals.

    Construction validates indices and rejects zero-area faces; use
    :func:`clean_mesh` to repair raw loader output first.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray = field(init=False, repr=False)
    face_areas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise SurfaceError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise SurfaceError("non-finite vertex coordinates")
        cross, area = _face_geometry(v, f)
        if np.any(area <= MIN_FACE_AREA):
            raise SurfaceError("mesh contains degenerate faces; run clean_mesh first")
        normals = cross / (2.0 * area[:, None]) if len(f) else np.zeros((0, 3))
        for name, arr in (("vertices", v), ("faces", f), ("face_normals", normals), ("face_areas", area)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        acc = np.zeros_like(self.vertices)
        weighted = self.face_normals * self.face_areas[:, None]
        for i in range(3):
            np.add.at(acc, self.faces[:, i], weighted)
        n = np.linalg.norm(acc, axis=1)
        out = np.zeros_like(acc)
        ok = n > 1e-300
        out[ok] = acc[ok] / n[ok, None]
        # vertices whose adjacent normals cancel (or isolated ones) fall back to +z
        out[~ok] = (0.0, 0.0, 1.0)
        return out

    @cached_property
    def centroid(self) -> np.ndarray:
        """Area-weighted mean of face centroids."""
        centers = self.vertices[self.faces].mean(axis=1)
        return (centers * self.face_areas[:, None]).sum(axis=0) / self.face_areas.sum()

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())


def clean_mesh(vertices, faces) -> TriangleMesh:
    """Merge duplicate vertices (within 1e-9 mm), drop zero-area faces and unused vertices."""
    v = np.asarray(vertices, dtype=float).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise SurfaceError("face index out of range")
    if len(v) > 1:
        pairs = cKDTree(v).query_pairs(MERGE_TOL, output_type="ndarray")
        if len(pairs):
            g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(v), len(v)))
            _, labels = connected_components(g, directed=False)
            # representative = lowest original index in each cluster
            rep = np.full(labels.max() + 1, len(v))
            np.minimum.at(rep, labels, np.arange(len(v)))
            f = rep[labels][f]
    if len(f):
        distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
        f = f[distinct]
        _, area = _face_geometry(v, f)
        f = f[area > MIN_FACE_AREA]
    used = np.unique(f)
    remap = np.full(len(v), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(v[used], remap[f])


@dataclass(frozen=True)
class SurfaceSample:
    position: np.ndarray
    normal: np.ndarray
    source: int
    source_kind: str = "face"


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Column-oriented collection of surface samples."""

    positions: np.ndarray
    normals: np.ndarray
    sources: np.ndarray
    kinds: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=float).reshape(-1, 3)
        n = np.ascontiguousarray(self.normals, dtype=float).reshape(-1, 3)
        s = np.asarray(self.sources, dtype=np.int64).reshape(-1)
        k = np.asarray(self.kinds, dtype=np.int8).reshape(-1)
        if not (len(p) == len(n) == len(s) == len(k)):
            raise SurfaceError("sample columns differ in length")
        for name, arr in (("positions", p), ("normals", n), ("sources", s), ("kinds", k)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> SurfaceSample:
        return SurfaceSample(self.positions[i].copy(), self.normals[i].copy(), int(self.sources[i]),
                             _KIND_NAMES[int(self.kinds[i])])

    @classmethod
    def concat(cls, *sets: "SampleSet") -> "SampleSet":
        return cls(*(np.concatenate([getattr(s, a) for s in sets])
                     for a in ("positions", "normals", "sources", "kinds")))

    @classmethod
    def from_vertices(cls, mesh: TriangleMesh) -> "SampleSet":
        n = mesh.n_vertices
        return cls(mesh.vertices, mesh.vertex_normals, np.arange(n), np.full(n, VERTEX))

    @classmethod
    def from_points(cls, points, normals) -> "SampleSet":
        n = len(points)
        return cls(points, normals, np.arange(n), np.full(n, POINT))


def _points_in_faces(mesh: TriangleMesh, face_ids: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    r1 = rng.random(len(face_ids))
    r2 = rng.random(len(face_ids))
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    tri = mesh.vertices[mesh.faces[face_ids]]
    return tri[:, 0] + r1[:, None] * (tri[:, 1] - tri[:, 0]) + r2[:, None] * (tri[:, 2] - tri[:, 0])


def sample_mesh(mesh: TriangleMesh, count: int, seed: int = 0) -> SampleSet:
    """Draw ``count`` area-uniform samples; each carries its face normal."""
    if mesh.n_faces == 0:
        raise SurfaceError("empty surface")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    p = mesh.face_areas / mesh.face_areas.sum()
    face_ids = rng.choice(mesh.n_faces, size=count, p=p)
    pos = _points_in_faces(mesh, face_ids, rng)
    return SampleSet(pos, mesh.face_normals[face_ids], face_ids, np.full(count, FACE))


def viewpoint_density(theta):
    """Sampling weight for a face whose normal is ``theta`` radians off the view vector.

    ``1/(1+exp(theta - pi/2)) - 0.5``, clamped below at zero so back-facing
    faces get nothing.
    """
    t = np.asarray(theta, dtype=float)
    if np.any(t < 0.0) or np.any(t > np.pi) or not np.all(np.isfinite(t)):
        raise ValueError("theta must lie in [0, pi]")
    rho = np.maximum(1.0 / (1.0 + np.exp(t - np.pi / 2.0)) - 0.5, 0.0)
    return float(rho) if rho.ndim == 0 else rho


def allocate_counts(weights: np.ndarray, count: int) -> np.ndarray:
    """Largest-remainder split of ``count`` proportional to ``weights`` (sum is exact)."""
    exact = count * weights / weights.sum()
    base = np.floor(exact).astype(np.int64)
    short = count - int(base.sum())
    if short:
        frac = exact - base
        frac[weights <= 0] = -1.0
        order = np.argsort(-frac, kind="stable")
        base[order[:short]] += 1
    return base


def face_view_angles(mesh: TriangleMesh, sensor_pos) -> np.ndarray:
    view = np.asarray(sensor_pos, dtype=float) - mesh.centroid
    view = view / np.linalg.norm(view)
    return np.arccos(np.clip(mesh.face_normals @ view, -1.0, 1.0))


def sample_partial_view(mesh: TriangleMesh, sensor_pos, count: int, seed: int = 0) -> SampleSet:
    """Viewpoint-weighted template samples: faces toward the sensor get denser sampling."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if mesh.n_faces == 0:
        raise SurfaceError("empty surface")
    sensor = as_point(sensor_pos)
    lo, hi = mesh.bounds
    if np.all(sensor >= lo) and np.all(sensor <= hi):
        raise ValueError("sensor position must lie outside the mesh bounding box")
    rho = viewpoint_density(face_view_angles(mesh, sensor))
    weights = mesh.face_areas * rho
    if not np.any(weights > 0):
        raise SurfaceError("no visible surface")
    per_face = allocate_counts(weights, count)
    face_ids = np.repeat(np.arange(mesh.n_faces), per_face)
    rng = np.random.default_rng(seed)
    pos = _points_in_faces(mesh, face_ids, rng)
    return SampleSet(pos, mesh.face_normals[face_ids], face_ids, np.full(len(face_ids), FACE))


def _min_normals(pts: np.ndarray):
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    w, v = np.linalg.eigh(cov)
    return v[:, :, 0], w


def _degenerate(w: np.ndarray) -> np.ndarray:
    # collinear or coincident neighbourhoods have a vanishing middle eigenvalue
    return w[:, 1] <= 1e-12 * np.maximum(w[:, 2], 1e-300)


def estimate_normals(points, k: int = 20, viewpoint=(0.0, 0.0, 1e6)) -> np.ndarray:
    """PCA normals from k-nearest-neighbour covariance, oriented toward ``viewpoint``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(pts) < k:
        raise SurfaceError(f"need at least k={k} points, got {len(pts)}")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    normals, w = _min_normals(pts[idx])
    for i in np.flatnonzero(_degenerate(w)):
        kk = k
        while True:
            if kk >= len(pts):
                raise SurfaceError("degenerate neighborhood")
            kk = min(2 * kk, len(pts))
            _, nb = tree.query(pts[i], k=kk)
            n, wi = _min_normals(pts[nb][None])
            if not _degenerate(wi)[0]:
                normals[i] = n[0]
                break
    view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.einsum("ij,ij->i", normals, view) < 0.0
    normals[flip] *= -1.0
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PointCloudSurface:
    points: np.ndarray
    normals: np.ndarray

    @classmethod
    def from_points(cls, points, k: int = 20, viewpoint=(0.0, 0.0, 1e6)) -> "PointCloudSurface":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return cls(pts, estimate_normals(pts, k, viewpoint))


class SpatialIndex:
    """Exact Euclidean nearest-neighbour index over a :class:`SampleSet`.

    Ties in distance are broken by insertion order (lower index wins).
    """

    def __init__(self, samples: SampleSet):
        if len(samples) == 0:
            raise SurfaceError("empty index")
        self.samples = samples
        self._tree = cKDTree(samples.positions)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def positions(self) -> np.ndarray:
        return self.samples.positions

    @cached_property
    def mean_spacing(self) -> float:
        """Mean nearest-neighbour distance, estimated on an evenly strided subset."""
        if len(self) < 2:
            return 0.0
        stride = max(1, len(self) // 20000)
        sub = self.positions[::stride]
        d, _ = self._tree.query(sub, k=2)
        return float(d[:, 1].mean())

    def k_nearest_indices(self, p, k: int) -> tuple[np.ndarray, np.ndarray]:
        """The ``k`` nearest samples, ordered by (distance, index)."""
        p = np.asarray(p, dtype=float)
        if k < 1 or k > len(self):
            raise ValueError(f"k must be in [1, {len(self)}]")
        kk = min(k + 1, len(self))
        d, i = self._tree.query(p, k=kk)
        d, i = np.atleast_1d(d), np.atleast_1d(i)
        # the tree's order among equal distances is arbitrary; settle ties by index
        if kk == k or d[k - 1] == d[k]:
            dk = float(d[k - 1])
            cand = np.asarray(self._tree.query_ball_point(p, dk * (1.0 + 1e-12) + 1e-300), dtype=np.int64)
            diff = self.positions[cand] - p
            dist = np.sqrt((diff * diff).sum(axis=1))
            order = np.lexsort((cand, dist))[:k]
            return cand[order], dist[order]
        diff = self.positions[i[:k]] - p
        dist = np.sqrt((diff * diff).sum(axis=1))
        order = np.lexsort((i[:k], dist))
        return i[:k][order], dist[order]

    def nearest_index(self, p) -> tuple[int, float]:
        idx, dist = self.k_nearest_indices(p, 1)
        return int(idx[0]), float(dist[0])

    def within(self, p, radius: float) -> np.ndarray:
        return np.asarray(self._tree.query_ball_point(np.asarray(p, dtype=float), radius), dtype=np.int64)


def nearest(index: SpatialIndex, p) -> SurfaceSample:
    return index.samples[index.nearest_index(p)[0]]


def k_nearest(index: SpatialIndex, p, k: int) -> list[SurfaceSample]:
    idx, _ = index.k_nearest_indices(p, k)
    return [index.samples[int(i)] for i in idx]


@dataclass(eq=False)
class SurfaceModel:
    """A mapping target: searchable samples plus the mesh(es) they came from.

    ``chart_mesh`` is the disc-topology segment used by the parameterization
    methods; it defaults to ``mesh``.
    """

    index: SpatialIndex
    mesh: TriangleMesh | None = None
    chart_mesh: TriangleMesh | None = None
    name: str = "surface"

    @property
    def kind(self) -> str:
        return "mesh" if self.mesh is not None else "pointcloud"

    @property
    def samples(self) -> SampleSet:
        return self.index.samples

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, sample_count: int, seed: int = 0, *,
                  include_vertices: bool = True, chart_mesh: TriangleMesh | None = None,
                  name: str = "mesh") -> "SurfaceModel":
        """Index the mesh vertices plus ``sample_count`` random area-uniform samples."""
        parts = [SampleSet.from_vertices(mesh)] if include_vertices else []
        if sample_count > 0:
            parts.append(sample_mesh(mesh, sample_count, seed))
        if not parts:
            raise ValueError("no samples requested")
        samples = SampleSet.concat(*parts) if len(parts) > 1 else parts[0]
        return cls(SpatialIndex(samples), mesh, chart_mesh if chart_mesh is not None else mesh, name)

    @classmethod
    def from_point_cloud(cls, cloud: PointCloudSurface, *, chart_mesh: TriangleMesh | None = None,
                         name: str = "pointcloud") -> "SurfaceModel":
        return cls(SpatialIndex(SampleSet.from_points(cloud.points, cloud.normals)), None, chart_mesh, name)
