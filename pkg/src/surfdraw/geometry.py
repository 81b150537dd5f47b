"""Small linear-algebra kernel: points, unit vectors, rigid transforms, quaternions.

Points and vectors are plain ``numpy`` float arrays (shape ``(2,)`` or
``(3,)``); lengths are millimetres throughout.  Transforms and quaternions
are immutable value objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-9
Z_AXIS = np.array([0.0, 0.0, 1.0])


def as_point(p, dim: int = 3) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (dim,):
        raise ValueError(f"expected a {dim}-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite point {arr!r}")
    return arr


def unit(v, eps: float = 1e-15) -> np.ndarray:
    """Return ``v`` scaled to unit length; raises on (near) zero vectors."""
    arr = np.asarray(v, dtype=float)
    n = np.linalg.norm(arr)
    if not np.isfinite(n) or n <= eps:
        raise ValueError(f"cannot normalize vector {arr!r}")
    return arr / n


def as_unit(v) -> np.ndarray:
    arr = as_point(v, 3)
    if abs(np.linalg.norm(arr) - 1.0) > UNIT_TOL:
        raise ValueError(f"not a unit vector: {arr!r}")
    return arr


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    a = unit(axis)
    K = skew(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _antiparallel_axis(u: np.ndarray) -> np.ndarray:
    # smallest-index coordinate axis least aligned with u
    k = int(np.argmin(np.abs(u)))
    e = np.zeros(3)
    e[k] = 1.0
    return unit(e - (e @ u) * u)


def rotation_matrix_between(from_vec, to_vec) -> np.ndarray:
    """Matrix form of :func:`rotation_between`, without the transform wrapper."""
    u = unit(from_vec)
    v = unit(to_vec)
    c = float(u @ v)
    w = np.cross(u, v)
    s = float(np.sqrt(w @ w))
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        a = _antiparallel_axis(u)
        return 2.0 * np.outer(a, a) - np.eye(3)
    K = skew(w / s)
    angle = np.arctan2(s, c)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation_between(from_vec, to_vec) -> "RigidTransform":
    """Minimal-angle rotation taking unit vector ``from_vec`` onto ``to_vec``.

    The antiparallel case rotates by pi about a deterministic axis
    orthogonal to ``from_vec`` (the x-axis when ``from_vec`` is +z).
    """
    return RigidTransform(rotation_matrix_between(from_vec, to_vec), np.zeros(3))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("rotation must be a finite 3x3 matrix and translation a finite 3-vector")
        if np.max(np.abs(R.T @ R - np.eye(3))) > UNIT_TOL or abs(np.linalg.det(R) - 1.0) > UNIT_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q: "UnitQuaternion", translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(q.to_matrix(), np.asarray(translation, dtype=float))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: RigidTransform) -> RigidTransform:
    Rt = a.rotation.T
    return RigidTransform(Rt, -(Rt @ a.translation))


def _canonical(q: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(q)
    if nz.size and q[nz[0]] < 0.0:
        return -q
    return q


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion ``(w, x, y, z)`` with canonical sign.

    The sign is fixed so that the first nonzero component is positive
    (so ``w >= 0``, and ties at ``w == 0`` resolve on x, then y, then z).
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        q = np.array([self.w, self.x, self.y, self.z], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > UNIT_TOL:
            raise ValueError(f"quaternion is not unit length (norm={n})")
        q = _canonical(q)
        for name, val in zip("wxyz", q):
            object.__setattr__(self, name, float(val))

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = unit(np.asarray(q, dtype=float))
        return cls(*q)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        a = unit(axis)
        h = 0.5 * angle
        return cls.from_array(np.r_[np.cos(h), np.sin(h) * a])

    @classmethod
    def from_matrix(cls, R) -> "UnitQuaternion":
        return cls.from_array(matrix_to_quat(np.asarray(R, dtype=float)))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def to_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())

    def angle_to(self, other: "UnitQuaternion") -> float:
        return quat_angle(self.as_array(), other.as_array())


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: pivot on the largest diagonal term
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return _canonical(q / np.linalg.norm(q))


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation angle (radians, in [0, pi]) between two unit quaternions."""
    if np.dot(a, b) < 0.0:
        b = -b
    return 2.0 * _arc(a, b)


def _arc(a: np.ndarray, b: np.ndarray) -> float:
    # 4D angle between the quaternions; atan2 stays accurate for tiny angles where acos does not
    return 2.0 * float(np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def slerp_array(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    if np.dot(q0, q1) < 0.0:
        q1 = -q1
    theta = _arc(q0, q1)
    if theta < 1e-12:
        out = q0 + t * (q1 - q0)
    else:
        s = np.sin(theta)
        out = (np.sin((1.0 - t) * theta) / s) * q0 + (np.sin(t * theta) / s) * q1
    return _canonical(out / np.linalg.norm(out))


def slerp(q0: UnitQuaternion, q1: UnitQuaternion, t: float) -> UnitQuaternion:
    """Constant-angular-velocity interpolation along the shorter arc."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 0.0:
        return q0
    if t == 1.0:
        return q1
    return UnitQuaternion.from_array(slerp_array(q0.as_array(), q1.as_array(), t))
