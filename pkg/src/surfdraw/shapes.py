"""Analytic test surfaces (mm), all wound so face normals point outward/up."""

from __future__ import annotations

import numpy as np

from .surface import PointCloudSurface, TriangleMesh, clean_mesh, estimate_normals, sample_mesh


def _grid_faces(nu: int, nv: int) -> np.ndarray:
    """Two triangles per cell of an ``nu`` x ``nv`` vertex grid indexed ``i * nv + j``."""
    i, j = np.meshgrid(np.arange(nu - 1), np.arange(nv - 1), indexing="ij")
    a = (i * nv + j).ravel()
    b, c, d = a + nv, a + nv + 1, a + 1
    return np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])


def plane_grid(width: float = 100.0, height: float = 100.0, pitch: float = 1.0,
               center=(0.0, 0.0), z: float = 0.0) -> TriangleMesh:
    nx = int(round(width / pitch)) + 1
    ny = int(round(height / pitch)) + 1
    xs = np.linspace(-width / 2, width / 2, nx) + center[0]
    ys = np.linspace(-height / 2, height / 2, ny) + center[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    v = np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, float(z))])
    return TriangleMesh(v, _grid_faces(nx, ny))


def _cylinder_patch(radius: float, phis: np.ndarray, xs: np.ndarray) -> TriangleMesh:
    X, P = np.meshgrid(xs, phis, indexing="ij")
    v = np.column_stack([X.ravel(), radius * np.sin(P.ravel()), radius * np.cos(P.ravel())])
    return TriangleMesh(v, _grid_faces(len(xs), len(phis)))


def half_cylinder(radius: float = 50.0, length: float = 100.0, arc_points: int = 180,
                  rings: int = 2) -> TriangleMesh:
    """Upper half of a cylinder about the x axis (bounding box length x 2R x R).

    The default is a coarse tessellation: ``arc_points`` vertices around the
    half circle on each of two end rings, i.e. long thin facets.
    """
    phis = np.linspace(-np.pi / 2, np.pi / 2, arc_points)
    xs = np.linspace(-length / 2, length / 2, rings)
    return _cylinder_patch(radius, phis, xs)


def cylinder_chart(radius: float = 50.0, length: float = 100.0, pitch: float = 1.0) -> TriangleMesh:
    """Half-cylinder with vertices at ``pitch`` arc length from the crest and along the axis.

    Arc positions are ``k * pitch`` measured from the top line, so a lattice
    drawn with the same pitch lands on vertices.
    """
    half = np.pi / 2
    step = pitch / radius
    k = int(np.floor(half / step - 1e-9))
    inner = step * np.arange(-k, k + 1)
    phis = np.concatenate([[-half], inner, [half]])
    xs = np.linspace(-length / 2, length / 2, int(round(length / pitch)) + 1)
    return _cylinder_patch(radius, phis, xs)


def box(size=(100.0, 100.0, 50.0), pitch: float | None = None, open_bottom: bool = False) -> TriangleMesh:
    """Axis-aligned box resting on z=0, centred in x and y.

    ``pitch`` subdivides every face into a grid; ``open_bottom`` drops the
    z=0 face, leaving a disc-topology shell.
    """
    sx, sy, sz = (float(s) for s in size)
    lo = np.array([-sx / 2, -sy / 2, 0.0])
    hi = np.array([sx / 2, sy / 2, sz])

    def face(origin, du, dv):
        lu, lv = np.linalg.norm(du), np.linalg.norm(dv)
        nu = 2 if pitch is None else int(round(lu / pitch)) + 1
        nv = 2 if pitch is None else int(round(lv / pitch)) + 1
        s, t = np.meshgrid(np.linspace(0, 1, nu), np.linspace(0, 1, nv), indexing="ij")
        pts = origin + s.ravel()[:, None] * du + t.ravel()[:, None] * dv
        return pts, _grid_faces(nu, nv)

    ex, ey, ez = np.diag(hi - lo)
    # (origin, du, dv) with du x dv pointing outward
    specs = [
        (np.array([lo[0], lo[1], hi[2]]), ex, ey),   # top
        (lo, ex, ez),                                 # y min
        (np.array([lo[0], hi[1], 0.0]), ez, ex),      # y max
        (lo, ez, ey),                                 # x min
        (np.array([hi[0], lo[1], 0.0]), ey, ez),      # x max
    ]
    if not open_bottom:
        specs.append((lo, ey, ex))                    # bottom
    verts, faces, off = [], [], 0
    for origin, du, dv in specs:
        p, f = face(origin, du, dv)
        verts.append(p)
        faces.append(f + off)
        off += len(p)
    return clean_mesh(np.vstack(verts), np.vstack(faces))


def _sphere_cap_arrays(radius: float, n_lat: int, n_lon: int, theta_max: float):
    thetas = np.linspace(0.0, theta_max, n_lat + 1)[1:]
    lons = 2 * np.pi * np.arange(n_lon) / n_lon
    T, L = np.meshgrid(thetas, lons, indexing="ij")
    ring = np.column_stack([np.sin(T.ravel()) * np.cos(L.ravel()), np.sin(T.ravel()) * np.sin(L.ravel()),
                            np.cos(T.ravel())])
    v = np.vstack([[0.0, 0.0, 1.0], ring]) * radius
    faces = [[0, 1 + j, 1 + (j + 1) % n_lon] for j in range(n_lon)]
    for i in range(n_lat - 1):
        for j in range(n_lon):
            a = 1 + i * n_lon + j
            b = 1 + i * n_lon + (j + 1) % n_lon
            faces.append([a, a + n_lon, b + n_lon])
            faces.append([a, b + n_lon, b])
    return v, np.asarray(faces)


def _sphere_cap(radius: float, n_lat: int, n_lon: int, theta_max: float) -> TriangleMesh:
    return TriangleMesh(*_sphere_cap_arrays(radius, n_lat, n_lon, theta_max))


def hemisphere(radius: float = 50.0, n_lat: int = 60, n_lon: int = 240) -> TriangleMesh:
    """Upper hemisphere (z >= 0), a disc with the equator as boundary."""
    return _sphere_cap(radius, n_lat, n_lon, np.pi / 2)


def sphere(radius: float = 50.0, n_lat: int = 40, n_lon: int = 80) -> TriangleMesh:
    """Closed sphere: a cap reaching the south pole, whose last ring is fused into one point."""
    v, faces = _sphere_cap_arrays(radius, n_lat, n_lon, np.pi)
    v[-n_lon:] = (0.0, 0.0, -radius)
    return clean_mesh(v, faces)


def hemisphere_with_walls(radius: float = 50.0, wall_height: float = 20.0, n_lat: int = 30,
                          n_lon: int = 120, wall_rows: int = 10) -> TriangleMesh:
    """Hemisphere on a vertical cylindrical skirt that hangs from the equator."""
    cap = _sphere_cap(radius, n_lat, n_lon, np.pi / 2)
    lons = 2 * np.pi * np.arange(n_lon) / n_lon
    zs = np.linspace(0.0, -wall_height, wall_rows + 1)[1:]
    Z, L = np.meshgrid(zs, lons, indexing="ij")
    wall = np.column_stack([radius * np.cos(L.ravel()), radius * np.sin(L.ravel()), Z.ravel()])
    v = np.vstack([cap.vertices, wall])
    first = 1 + (n_lat - 1) * n_lon  # equator ring of the cap
    faces = [cap.faces]
    rows = [first + np.arange(n_lon)] + [len(cap.vertices) + r * n_lon + np.arange(n_lon)
                                          for r in range(wall_rows)]
    for top, bot in zip(rows[:-1], rows[1:]):
        nxt = np.roll(np.arange(n_lon), -1)
        faces.append(np.column_stack([top, bot, bot[nxt]]))
        faces.append(np.column_stack([top, bot[nxt], top[nxt]]))
    return TriangleMesh(v, np.vstack(faces))


def dome(semi_axes=(83.0, 99.5, 72.0), n_lat: int = 60, n_lon: int = 240) -> TriangleMesh:
    """Upper half of an ellipsoid, a helmet-like shell."""
    a, b, c = semi_axes
    cap = _sphere_cap(1.0, n_lat, n_lon, np.pi / 2)
    return TriangleMesh(cap.vertices * np.array([a, b, c]), cap.faces)


def helmet_cloud(count: int = 200_000, noise: float = 0.02, seed: int = 0,
                 semi_axes=(83.0, 99.5, 72.0), k: int = 20) -> PointCloudSurface:
    """Noisy scan-like point cloud of a helmet-sized dome (166 x 199 x 72 mm), normals estimated."""
    rng = np.random.default_rng(seed)
    pts = sample_mesh(dome(semi_axes), count, seed).positions
    pts = pts + rng.normal(scale=noise, size=pts.shape)
    normals = estimate_normals(pts, k, viewpoint=(0.0, 0.0, 1e6))
    # orient away from the dome centre rather than toward a single far viewpoint
    flip = np.einsum("ij,ij->i", normals, pts) < 0
    normals[flip] *= -1.0
    return PointCloudSurface(pts, normals)
