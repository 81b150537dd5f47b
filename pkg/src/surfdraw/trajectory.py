"""Pen poses along mapped strokes: orientation, SLERP densification, grasp correction, deviation recovery."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import (RigidTransform, UnitQuaternion, compose, invert, matrix_to_quat, quat_angle,
                       quat_to_matrix, rotation_matrix_between, slerp_array)
from .strokes import Stroke3D

DEFAULT_MAX_STEP_ANGLE = np.deg2rad(5.0)
DEFAULT_MAX_STEP_DIST = 2.0  # mm
DEFAULT_THRESHOLD = 2.0  # mm
DEFAULT_LIFT = 10.0  # mm
DEFAULT_STANDOFF = 10.0  # mm


@dataclass(frozen=True)
class PenPose:
    tip: np.ndarray
    orientation: UnitQuaternion
    pen_down: bool
    normal: np.ndarray
    stroke_id: str = ""

    @property
    def axis(self) -> np.ndarray:
        """Pen axis in world coordinates (local +z)."""
        return self.orientation.to_matrix()[:, 2]

    def as_transform(self) -> RigidTransform:
        return RigidTransform(self.orientation.to_matrix(), self.tip)


@dataclass(frozen=True, eq=False)
class PoseTrajectory:
    """Column-stored pose sequence.  Quaternions are ``(w, x, y, z)`` rows."""

    positions: np.ndarray
    quats: np.ndarray
    pen_down: np.ndarray
    normals: np.ndarray
    stroke_ids: tuple = ()
    source_index: np.ndarray | None = None  # original pose index, -1 for inserted poses

    def __post_init__(self):
        p = np.array(self.positions, dtype=float).reshape(-1, 3)
        q = np.array(self.quats, dtype=float).reshape(-1, 4)
        d = np.array(self.pen_down, dtype=bool).reshape(-1)
        n = np.array(self.normals, dtype=float).reshape(-1, 3)
        if len(p) == 0:
            raise ValueError("trajectory is empty")
        if not (len(p) == len(q) == len(d) == len(n)):
            raise ValueError("trajectory columns differ in length")
        if np.max(np.abs(np.linalg.norm(q, axis=1) - 1.0)) > 1e-9:
            raise ValueError("orientations must be unit quaternions")
        ids = tuple(self.stroke_ids) if len(self.stroke_ids) else ("",) * len(p)
        if len(ids) != len(p):
            raise ValueError("stroke_ids must give one id per pose")
        src = np.arange(len(p)) if self.source_index is None else np.asarray(self.source_index, dtype=np.int64)
        for name, arr in (("positions", p), ("quats", q), ("pen_down", d), ("normals", n), ("source_index", src)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "stroke_ids", ids)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> PenPose:
        return PenPose(self.positions[i].copy(), UnitQuaternion.from_array(self.quats[i]), bool(self.pen_down[i]),
                       self.normals[i].copy(), self.stroke_ids[i])

    @property
    def poses(self) -> list[PenPose]:
        return [self[i] for i in range(len(self))]

    @property
    def axes(self) -> np.ndarray:
        return np.array([quat_to_matrix(q)[:, 2] for q in self.quats])

    def step_angles(self) -> np.ndarray:
        return np.array([quat_angle(self.quats[i], self.quats[i + 1]) for i in range(len(self) - 1)])

    def subset(self, mask) -> "PoseTrajectory":
        mask = np.asarray(mask, dtype=bool)
        return PoseTrajectory(self.positions[mask], self.quats[mask], self.pen_down[mask], self.normals[mask],
                              tuple(np.asarray(self.stroke_ids, dtype=object)[mask]), self.source_index[mask])


def _tangent_x(axis: np.ndarray) -> np.ndarray:
    for ref in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        x = ref - (ref @ axis) * axis
        nx = np.linalg.norm(x)
        if nx > 1e-9:
            return x / nx
    raise AssertionError("unreachable: x and y cannot both be parallel to the axis")


def _frame(axis: np.ndarray, x_hint: np.ndarray) -> np.ndarray:
    x = x_hint - (x_hint @ axis) * axis
    nx = np.linalg.norm(x)
    x = x / nx if nx > 1e-9 else _tangent_x(axis)
    return np.column_stack([x, np.cross(axis, x), axis])


def attach_poses(strokes: list[Stroke3D], standoff: float = DEFAULT_STANDOFF) -> PoseTrajectory:
    """One pose per stroke point with the pen axis along the inward normal.

    The roll about the axis starts with local x on the world x axis projected
    into the tangent plane (world y if x is parallel to the axis) and is then
    carried from pose to pose by the minimal rotation between successive
    axes.  Pen-up points are raised ``standoff`` mm along their normal.
    """
    pos, quats, down, normals, ids = [], [], [], [], []
    prev_axis, prev_x = None, None
    for s in strokes:
        for p, n, d in zip(s.points, s.normals, s.pen_down):
            n = n / np.linalg.norm(n)
            axis = -n
            if prev_axis is None:
                R = _frame(axis, _tangent_x(axis))
            else:
                R = _frame(axis, rotation_matrix_between(prev_axis, axis) @ prev_x)
            prev_axis, prev_x = axis, R[:, 0]
            pos.append(p if d else p + standoff * n)
            quats.append(matrix_to_quat(R))
            down.append(bool(d))
            normals.append(n)
            ids.append(s.id)
    return PoseTrajectory(np.array(pos), np.array(quats), np.array(down), np.array(normals), tuple(ids))


def densify_slerp(traj: PoseTrajectory, max_step_angle: float = DEFAULT_MAX_STEP_ANGLE,
                  max_step_dist: float = DEFAULT_MAX_STEP_DIST) -> PoseTrajectory:
    """Insert SLERP/linear in-between poses wherever a step exceeds either bound.

    A gap with angle ``a`` and distance ``d`` gets
    ``ceil(max(a / max_step_angle, d / max_step_dist)) - 1`` new poses at
    even parameter steps.  Inserted poses are pen-down only when both ends are.
    """
    if not (max_step_angle > 0 and max_step_dist > 0):
        raise ValueError("step bounds must be positive")
    P, Q, D, N = traj.positions, traj.quats, traj.pen_down, traj.normals
    out_p, out_q, out_d, out_n, out_id, out_src = [], [], [], [], [], []
    for i in range(len(traj)):
        out_p.append(P[i])
        out_q.append(Q[i])
        out_d.append(D[i])
        out_n.append(N[i])
        out_id.append(traj.stroke_ids[i])
        out_src.append(traj.source_index[i])
        if i + 1 == len(traj):
            break
        ang = quat_angle(Q[i], Q[i + 1])
        dist = float(np.linalg.norm(P[i + 1] - P[i]))
        m = int(np.ceil(max(ang / max_step_angle, dist / max_step_dist) - 1e-9))
        for k in range(1, m):
            t = k / m
            q = slerp_array(Q[i], Q[i + 1], t)
            out_p.append((1.0 - t) * P[i] + t * P[i + 1])
            out_q.append(q)
            out_d.append(bool(D[i] and D[i + 1]))
            out_n.append(-quat_to_matrix(q)[:, 2])
            out_id.append(traj.stroke_ids[i])
            out_src.append(-1)
    return PoseTrajectory(np.array(out_p), np.array(out_q), np.array(out_d), np.array(out_n), tuple(out_id),
                          np.array(out_src))


def discontinuity_report(traj: PoseTrajectory, max_step_angle: float = DEFAULT_MAX_STEP_ANGLE) -> list[tuple[int, float]]:
    """``(index, jump)`` for every pen-down pose whose orientation differs from the previous pen-down pose by more than the bound."""
    out = []
    for i in range(1, len(traj)):
        if traj.pen_down[i] and traj.pen_down[i - 1]:
            a = quat_angle(traj.quats[i - 1], traj.quats[i])
            if a > max_step_angle * (1.0 + 1e-9):
                out.append((i, a))
    return out


# --- in-hand correction ----------------------------------------------------

@dataclass(frozen=True)
class GraspCorrection:
    """Simulated and estimated pen poses in the world, plus the ideal grasp.

    ``T_hand_sim`` is the hand pose expressed in the pen frame.
    """

    T_sim_world: RigidTransform
    T_real_world: RigidTransform
    T_hand_sim: RigidTransform


def correct_grasp(c: GraspCorrection) -> RigidTransform:
    """Refined grasp in the real pen frame: ``inv(T_real_world) . T_sim_world . T_hand_sim``."""
    return compose(compose(invert(c.T_real_world), c.T_sim_world), c.T_hand_sim)


def _pose_transforms(traj: PoseTrajectory) -> list[RigidTransform]:
    return [RigidTransform(quat_to_matrix(q), p) for p, q in zip(traj.positions, traj.quats)]


def _from_transforms(traj: PoseTrajectory, poses: list[RigidTransform]) -> PoseTrajectory:
    pos = np.array([T.translation for T in poses])
    quats = np.array([matrix_to_quat(T.rotation) for T in poses])
    return PoseTrajectory(pos, quats, traj.pen_down, traj.normals, traj.stroke_ids, traj.source_index)


def apply_correction(traj: PoseTrajectory, c: GraspCorrection) -> PoseTrajectory:
    """Pen poses to command (assuming the ideal grasp) so the displaced pen follows ``traj``.

    Each pose becomes ``P . correct_grasp(c) . inv(T_hand_sim)``: the hand
    then sits at ``P . T_hand_real`` and the real pen lands exactly on ``P``.
    """
    K = compose(correct_grasp(c), invert(c.T_hand_sim))
    return _from_transforms(traj, [compose(P, K) for P in _pose_transforms(traj)])


def execute_with_grasp(commanded: PoseTrajectory, T_hand_sim: RigidTransform,
                       T_hand_real: RigidTransform) -> PoseTrajectory:
    """Pen poses actually reached when the hand follows ``commanded`` under the real grasp."""
    K = compose(T_hand_sim, invert(T_hand_real))
    return _from_transforms(commanded, [compose(P, K) for P in _pose_transforms(commanded)])


# --- deviation recovery ----------------------------------------------------

@dataclass(frozen=True)
class LiftSegment:
    """Pen-up detour around a skipped point: rise, travel, descend."""

    skipped: int  # index into the pen-down poses
    waypoints: np.ndarray  # (k, 3) tip positions in order


@dataclass(eq=False)
class RecoveryAnnotatedTrajectory:
    planned: PoseTrajectory
    status: list[str]  # one per pose: "executed" or "skipped"
    deviation: np.ndarray  # mm, one per pen-down pose
    lifts: list[LiftSegment] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD
    lift: float = DEFAULT_LIFT

    @property
    def skipped(self) -> list[int]:
        return [i for i, s in enumerate(self.status) if s == "skipped"]

    def executable(self) -> PoseTrajectory:
        """Executed poses with the lift waypoints inserted as pen-up poses."""
        t = self.planned
        down_idx = np.flatnonzero(t.pen_down)
        lift_at = {int(down_idx[seg.skipped]): seg for seg in self.lifts}
        rows = []
        for i in range(len(t)):
            if i in lift_at:
                for w in lift_at[i].waypoints:
                    rows.append((w, t.quats[i], False, t.normals[i], t.stroke_ids[i], -1))
                continue
            rows.append((t.positions[i], t.quats[i], bool(t.pen_down[i]), t.normals[i], t.stroke_ids[i],
                         int(t.source_index[i])))
        p, q, d, n, ids, src = zip(*rows)
        return PoseTrajectory(np.array(p), np.array(q), np.array(d), np.array(n), ids, np.array(src))


def detect_and_recover(planned: PoseTrajectory, measured, threshold: float = DEFAULT_THRESHOLD,
                       lift: float = DEFAULT_LIFT) -> RecoveryAnnotatedTrajectory:
    """Skip the first point of every run of tip deviations above ``threshold``.

    ``measured`` holds one tip position per pen-down pose.  Each skip inserts
    a detour: up ``lift`` mm along the normal at the last good point, across
    to above the next point, and down onto it.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    down = np.flatnonzero(planned.pen_down)
    m = np.asarray(measured, dtype=float).reshape(-1, 3)
    if len(m) != len(down):
        raise ValueError(f"measured trace has {len(m)} points, planned has {len(down)} pen-down poses")
    tips = planned.positions[down]
    dev = np.linalg.norm(m - tips, axis=1)
    above = dev > threshold
    starts = np.flatnonzero(above & ~np.r_[False, above[:-1]])
    status = ["executed"] * len(planned)
    lifts = []
    normals = planned.normals[down]
    for s in starts:
        status[int(down[s])] = "skipped"
        prev = s - 1 if s > 0 else s
        way = [tips[prev] + lift * normals[prev]]
        if s + 1 < len(down):
            way.append(tips[s + 1] + lift * normals[s + 1])
        lifts.append(LiftSegment(int(s), np.array(way)))
    return RecoveryAnnotatedTrajectory(planned, status, dev, lifts, threshold, lift)


# --- export ----------------------------------------------------------------

def _f(x) -> str:
    return repr(float(x))


def trajectory_to_json(traj: PoseTrajectory, status: list[str] | None = None) -> dict:
    poses = []
    for i in range(len(traj)):
        item = {"position": traj.positions[i].tolist(), "quaternion_wxyz": traj.quats[i].tolist(),
                "pen_down": bool(traj.pen_down[i]), "normal": traj.normals[i].tolist(),
                "stroke": traj.stroke_ids[i], "source_index": int(traj.source_index[i])}
        if status is not None:
            item["status"] = status[i]
        poses.append(item)
    return {"units": "mm", "poses": poses}


def trajectory_from_json(doc: dict) -> PoseTrajectory:
    poses = doc["poses"]
    if not poses:
        raise ValueError("trajectory is empty")
    return PoseTrajectory(
        np.array([p["position"] for p in poses], dtype=float),
        np.array([p["quaternion_wxyz"] for p in poses], dtype=float),
        np.array([p["pen_down"] for p in poses], dtype=bool),
        np.array([p.get("normal", [0.0, 0.0, 1.0]) for p in poses], dtype=float),
        tuple(p.get("stroke", "") for p in poses),
        np.array([p.get("source_index", i) for i, p in enumerate(poses)]),
    )


def write_trajectory_csv(path, traj: PoseTrajectory, status: list[str] | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "stroke", "x", "y", "z", "qw", "qx", "qy", "qz", "pen_down", "status"])
        for i in range(len(traj)):
            w.writerow([i, traj.stroke_ids[i], *map(_f, traj.positions[i]), *map(_f, traj.quats[i]),
                        int(traj.pen_down[i]), status[i] if status is not None else "executed"])


def write_deviation_csv(path, result: RecoveryAnnotatedTrajectory) -> None:
    down = np.flatnonzero(result.planned.pen_down)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "pose_index", "deviation_mm", "above_threshold", "status"])
        for k, i in enumerate(down):
            w.writerow([k, int(i), _f(result.deviation[k]), int(result.deviation[k] > result.threshold),
                        result.status[int(i)]])
