"""Least-squares conformal flattening of disc-shaped meshes, and chart lookups.

The chart is solved with two pinned vertices; free uv coordinates minimise
the conformal energy (the squared failure of each triangle's map to be
complex-linear in its own tangent frame).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import Z_AXIS, rotation_between, unit
from .strokes import StrokeSet2D
from .surface import TriangleMesh


class ParameterizationError(ValueError):
    pass


def conjugate_gradient(A, b, tol: float = 1e-10, maxiter: int | None = None, x0=None):
    """Jacobi-preconditioned CG for symmetric positive definite ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``.  Returns ``(x, iterations, relres)``.
    """
    n = len(b)
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    diag = A.diagonal()
    minv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    r = b - A @ x
    z = minv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < maxiter:
        if np.linalg.norm(r) <= tol * bnorm:
            break
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, float(np.linalg.norm(b - A @ x) / bnorm)


def _edges(faces: np.ndarray) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])


def _edge_keys(edges: np.ndarray) -> np.ndarray:
    lo, hi = edges.min(axis=1), edges.max(axis=1)
    return lo * (int(edges.max()) + 1) + hi


def _unique_edges(faces: np.ndarray) -> np.ndarray:
    e = _edges(faces)
    _, first = np.unique(_edge_keys(e), return_index=True)
    return np.sort(e[first], axis=1)


def boundary_loops(mesh: TriangleMesh) -> list[list[int]]:
    """Ordered boundary vertex loops; raises on non-manifold edges or vertices."""
    directed = _edges(mesh.faces)
    _, inv, counts = np.unique(_edge_keys(directed), return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    if np.any(counts > 2):
        raise ParameterizationError("requires disc segment (non-manifold edge)")
    bnd = directed[counts[inv] == 1]
    nxt: dict[int, int] = {}
    for a, b in bnd:
        if int(a) in nxt:
            raise ParameterizationError("requires disc segment (non-manifold boundary vertex)")
        nxt[int(a)] = int(b)
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, v = [], start
        while v not in seen:
            seen.add(v)
            loop.append(v)
            v = nxt.get(v)
            if v is None:
                raise ParameterizationError("requires disc segment (open boundary chain)")
        loops.append(loop)
    return loops


def check_disc(mesh: TriangleMesh) -> list[int]:
    """Return the single boundary loop of a disc-topology mesh or raise."""
    if mesh.n_faces == 0:
        raise ParameterizationError("requires disc segment (empty mesh)")
    loops = boundary_loops(mesh)
    n_edges = len(_unique_edges(mesh.faces))
    euler = mesh.n_vertices - n_edges + mesh.n_faces
    adj = sp.coo_matrix((np.ones(len(_edges(mesh.faces))), tuple(_edges(mesh.faces).T)),
                        shape=(mesh.n_vertices,) * 2)
    n_comp, _ = connected_components(adj, directed=False)
    if len(loops) != 1 or euler != 1 or n_comp != 1:
        raise ParameterizationError(
            f"requires disc segment (boundary loops={len(loops)}, euler={euler}, components={n_comp})")
    return loops[0]


def default_pins(mesh: TriangleMesh, loop: list[int]) -> tuple[int, int]:
    """The two boundary vertices farthest apart (lowest indices on ties)."""
    ids = np.asarray(loop)
    order = np.argsort(ids)
    ids = ids[order]
    pts = mesh.vertices[ids]
    best, pair = -1.0, (int(ids[0]), int(ids[-1]))
    # boundary loops are small enough for a blocked all-pairs scan
    for s in range(0, len(ids), 512):
        d = np.linalg.norm(pts[s:s + 512, None, :] - pts[None, :, :], axis=2)
        i, j = np.unravel_index(np.argmax(d), d.shape)
        if d[i, j] > best:
            best, pair = float(d[i, j]), (int(ids[s + i]), int(ids[j]))
    return tuple(sorted(pair))


def _lscm_matrix(mesh: TriangleMesh) -> sp.csr_matrix:
    v, f = mesh.vertices, mesh.faces
    p0, p1, p2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    e1 = p1 - p0
    l1 = np.linalg.norm(e1, axis=1)
    x_axis = e1 / l1[:, None]
    y_axis = np.cross(mesh.face_normals, x_axis)
    z = np.zeros((len(f), 3), dtype=complex)
    z[:, 1] = l1
    d2 = p2 - p0
    z[:, 2] = np.einsum("ij,ij->i", d2, x_axis) + 1j * np.einsum("ij,ij->i", d2, y_axis)
    # W_j = z_{j+2} - z_{j+1}, scaled by 1/sqrt(2*area)
    W = np.stack([z[:, 2] - z[:, 1], z[:, 0] - z[:, 2], z[:, 1] - z[:, 0]], axis=1)
    W /= np.sqrt(2.0 * mesh.face_areas)[:, None]
    n, nf = mesh.n_vertices, len(f)
    rows_re = np.repeat(np.arange(nf), 3)
    rows_im = rows_re + nf
    cols_u = f.reshape(-1)
    cols_v = cols_u + n
    wr, wi = W.real.reshape(-1), W.imag.reshape(-1)
    rows = np.concatenate([rows_re, rows_re, rows_im, rows_im])
    cols = np.concatenate([cols_u, cols_v, cols_u, cols_v])
    vals = np.concatenate([wr, -wi, wi, wr])
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * nf, 2 * n))


@dataclass(frozen=True, eq=False)
class ParamChart:
    """Flattened disc chart: one uv point per mesh vertex."""

    uv: np.ndarray
    vertex_xyz: np.ndarray
    faces: np.ndarray
    pins: tuple[int, int]
    conformal_energy: float
    diagnostics: dict = field(default_factory=dict)

    @cached_property
    def mesh(self) -> TriangleMesh:
        return TriangleMesh(self.vertex_xyz, self.faces)

    @cached_property
    def uv_tree(self) -> cKDTree:
        return cKDTree(self.uv)

    @cached_property
    def vertex_faces(self) -> sp.csr_matrix:
        nf = len(self.faces)
        return sp.csr_matrix((np.ones(3 * nf), (self.faces.reshape(-1), np.repeat(np.arange(nf), 3))),
                             shape=(len(self.uv), nf))

    @cached_property
    def edge_ratio(self) -> float:
        """Median 3D-length / uv-length over mesh edges (mm per uv unit)."""
        e = _unique_edges(self.faces)
        l3 = np.linalg.norm(self.vertex_xyz[e[:, 0]] - self.vertex_xyz[e[:, 1]], axis=1)
        l2 = np.linalg.norm(self.uv[e[:, 0]] - self.uv[e[:, 1]], axis=1)
        ok = l2 > 0
        return float(np.median(l3[ok] / l2[ok]))

    @cached_property
    def median_edge(self) -> float:
        e = _edges(self.faces)
        return float(np.median(np.linalg.norm(self.vertex_xyz[e[:, 0]] - self.vertex_xyz[e[:, 1]], axis=1)))

    def _barycentric(self, face_ids: np.ndarray, q: np.ndarray) -> np.ndarray:
        tri = self.uv[self.faces[face_ids]]
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        v0, v1, v2 = b - a, c - a, q - a
        den = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
        den = np.where(den == 0.0, np.nan, den)
        l1 = (v2[:, 0] * v1[:, 1] - v1[:, 0] * v2[:, 1]) / den
        l2 = (v0[:, 0] * v2[:, 1] - v2[:, 0] * v0[:, 1]) / den
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    @cached_property
    def _padded_vertex_faces(self) -> np.ndarray:
        vf = self.vertex_faces
        deg = np.diff(vf.indptr)
        out = np.full((len(self.uv), max(int(deg.max()), 1)), -1, dtype=np.int64)
        rows = np.repeat(np.arange(len(self.uv)), deg)
        cols = np.arange(len(vf.indices)) - np.repeat(vf.indptr[:-1], deg)
        out[rows, cols] = vf.indices
        return out

    def locate(self, q, k: int = 10, tol: float = 1e-9) -> tuple[int, np.ndarray]:
        """Host face and barycentric weights of uv point ``q``; raises outside the chart."""
        faces, lam = self.locate_many(np.asarray(q, dtype=float)[None, :], k, tol)
        return int(faces[0]), lam[0]

    def locate_many(self, Q: np.ndarray, k: int = 10, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`locate`: the lowest-index face containing each point.

        Candidates are the faces around the ``k`` nearest uv vertices; points
        not found there are checked against every face.
        """
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        k = min(k, len(self.uv))
        _, near = self.uv_tree.query(Q, k=k)
        near = near.reshape(len(Q), -1)
        cand = self._padded_vertex_faces[near].reshape(len(Q), -1)
        big = len(self.faces)
        cand = np.where(cand < 0, big, cand)
        lam = self._barycentric_grid(np.minimum(cand, big - 1), Q)
        inside = np.all(lam >= -tol, axis=2) & (cand < big)
        pick = np.where(inside, cand, big).min(axis=1)
        found = pick < big
        out_f = np.full(len(Q), -1, dtype=np.int64)
        out_l = np.zeros((len(Q), 3))
        rows = np.flatnonzero(found)
        col = np.argmax(inside[rows] & (cand[rows] == pick[rows, None]), axis=1)
        out_f[rows] = pick[rows]
        out_l[rows] = lam[rows, col]
        everything = np.arange(big)
        for i in np.flatnonzero(~found):
            lam_all = self._barycentric(everything, Q[i])
            hit = np.flatnonzero(np.all(lam_all >= -tol, axis=1))
            if hit.size == 0:
                raise ParameterizationError("stroke exceeds chart")
            out_f[i], out_l[i] = hit[0], lam_all[hit[0]]
        return out_f, out_l

    def _barycentric_grid(self, face_ids: np.ndarray, Q: np.ndarray) -> np.ndarray:
        tri = self.uv[self.faces[face_ids]]  # (m, c, 3, 2)
        a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
        v0, v1, v2 = b - a, c - a, Q[:, None, :] - a
        den = v0[..., 0] * v1[..., 1] - v1[..., 0] * v0[..., 1]
        den = np.where(den == 0.0, np.nan, den)
        l1 = (v2[..., 0] * v1[..., 1] - v1[..., 0] * v2[..., 1]) / den
        l2 = (v0[..., 0] * v2[..., 1] - v2[..., 0] * v0[..., 1]) / den
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)

    def nearest_vertices_uv(self, Q: np.ndarray, k: int = 8) -> np.ndarray:
        """Nearest uv vertex per point, lowest index among exact ties."""
        Q = np.asarray(Q, dtype=float).reshape(-1, 2)
        k = min(k, len(self.uv))
        _, idx = self.uv_tree.query(Q, k=k)
        idx = idx.reshape(len(Q), -1)
        diff = self.uv[idx] - Q[:, None, :]
        dist = np.sqrt(diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1])
        best = dist.min(axis=1, keepdims=True)
        return np.where(dist == best, idx, len(self.uv)).min(axis=1)


def lscm_unfold(mesh: TriangleMesh, pins: tuple[int, int] | None = None, *, solver: str = "direct",
                tol: float = 1e-10, maxiter: int | None = None) -> ParamChart:
    """Flatten a disc-topology mesh with two pinned vertices at (0, 0) and (d, 0).

    ``d`` is the 3D distance between the pins.  Pins default to the two
    most distant boundary vertices.  The normal equations are solved by a
    sparse LU factorisation (``solver="direct"``) or by preconditioned
    conjugate gradients (``solver="cg"``, stopping at relative residual
    ``tol``).  CG stalls near 1e-12 relative residual, which leaves uv
    errors around 1e-8; the direct route is the default for that reason.
    """
    if solver not in ("direct", "cg"):
        raise ValueError(f"unknown solver {solver!r}")
    loop = check_disc(mesh)
    if pins is None:
        pins = default_pins(mesh, loop)
    a, b = (int(p) for p in pins)
    if a == b:
        raise ParameterizationError("pins must be distinct vertices")
    n = mesh.n_vertices
    A = _lscm_matrix(mesh)
    d = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
    pinned = np.array([a, b, a + n, b + n])
    pin_vals = np.array([0.0, d, 0.0, 0.0])
    free = np.setdiff1d(np.arange(2 * n), pinned)
    Af = A[:, free].tocsc()
    b_ls = -(A[:, pinned] @ pin_vals)
    rhs = Af.T @ b_ls
    N = (Af.T @ Af).tocsc()
    if solver == "cg":
        xf, iters, relres = conjugate_gradient(N, rhs, tol=tol, maxiter=maxiter)
    else:
        lu = splu(N, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        xf = lu.solve(rhs)
        # refine against the least-squares residual, not the normal-equation one;
        # this removes the error amplified by squaring the condition number
        for _ in range(2):
            xf = xf + lu.solve(Af.T @ (b_ls - Af @ xf))
        iters = 0
        relres = float(np.linalg.norm(rhs - N @ xf) / max(np.linalg.norm(rhs), 1e-300))
    x = np.empty(2 * n)
    x[free] = xf
    x[pinned] = pin_vals
    uv = np.column_stack([x[:n], x[n:]])
    residual = A @ x
    tri = uv[mesh.faces]
    e1, e2 = tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    uv_area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]).sum()
    energy = float(residual @ residual / uv_area) if uv_area > 0 else float("inf")
    diag = {"solver": solver, "iterations": iters, "relative_residual": relres, "pin_distance": d,
            "n_vertices": n, "n_faces": mesh.n_faces}
    return ParamChart(uv, mesh.vertices.copy(), mesh.faces.copy(), (a, b), energy, diag)


def anchor_vertex(chart: ParamChart, anchor_3d, tol: float | None = None) -> int:
    p = np.asarray(anchor_3d, dtype=float)
    dist = np.linalg.norm(chart.vertex_xyz - p, axis=1)
    i = int(np.argmin(dist))
    tol = chart.median_edge if tol is None else tol
    if dist[i] > tol:
        raise ParameterizationError(f"anchor not on chart (nearest vertex {dist[i]:.4g} mm away)")
    return i


def _vertex_jacobian(chart: ParamChart, v: int) -> np.ndarray:
    """Area-weighted mean of the 3D->uv linear maps of faces around vertex ``v``."""
    faces = chart.vertex_faces[v].indices
    J = np.zeros((2, 3))
    total = 0.0
    for fi in faces:
        i, j, k = chart.faces[fi]
        E3 = np.column_stack([chart.vertex_xyz[j] - chart.vertex_xyz[i], chart.vertex_xyz[k] - chart.vertex_xyz[i]])
        E2 = np.column_stack([chart.uv[j] - chart.uv[i], chart.uv[k] - chart.uv[i]])
        area = 0.5 * np.linalg.norm(np.cross(E3[:, 0], E3[:, 1]))
        J += area * (E2 @ np.linalg.pinv(E3))
        total += area
    return J / total


def register_strokes_to_chart(strokes: StrokeSet2D, chart: ParamChart, anchor_3d,
                              scale_mode="fit", start_normal=None) -> StrokeSet2D:
    """Place drawing-plane strokes (mm) into chart uv space.

    The first stroke's first point lands on the anchor vertex's uv.  Lengths
    are converted with the chart's median mm-per-uv ratio (or an explicit
    ratio), and the drawing x/y axes follow the surface tangent frame
    ``rotation_between(+z, normal)`` at the anchor, so all methods share one
    drawing orientation.
    """
    v = anchor_vertex(chart, anchor_3d)
    ratio = chart.edge_ratio if scale_mode in (None, "fit") else float(scale_mode)
    if not ratio > 0:
        raise ParameterizationError("chart scale must be positive")
    normal = unit(start_normal) if start_normal is not None else chart.mesh.vertex_normals[v]
    R = rotation_between(Z_AXIS, normal).rotation
    J = _vertex_jacobian(chart, v)
    a1, a2 = J @ R[:, 0], J @ R[:, 1]
    theta = np.arctan2(a1[1], a1[0])
    mirror = -1.0 if a1[0] * a2[1] - a1[1] * a2[0] < 0 else 1.0
    c, s = np.cos(theta), np.sin(theta)
    M = np.array([[c, -s], [s, c]]) @ np.diag([1.0, mirror]) / ratio
    p0 = strokes[0].points[0].copy()
    origin = chart.uv[v].copy()
    return strokes.transformed(lambda p: (p - p0) @ M.T + origin)


def map_chart_points(chart: ParamChart, uv_points: np.ndarray, method: str, k: int = 10):
    """Map registered uv points to 3D: ``SI`` snaps to the nearest chart vertex, ``II`` interpolates.

    Normals come from the host face.  Raises if any point lies outside the chart.
    """
    Q = np.asarray(uv_points, dtype=float).reshape(-1, 2)
    faces, lam = chart.locate_many(Q, k=k)
    if method == "SI":
        out = chart.vertex_xyz[chart.nearest_vertices_uv(Q)]
    else:
        corners = chart.vertex_xyz[chart.faces[faces]]
        out = lam[:, 0, None] * corners[:, 0] + lam[:, 1, None] * corners[:, 1] + lam[:, 2, None] * corners[:, 2]
    return out, chart.mesh.face_normals[faces]
