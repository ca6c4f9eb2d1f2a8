"""Waypoint extraction: the shortest frame subsequence whose piecewise
interpolation stays inside the reconstruction budget on every channel.

Position error is the point-to-line distance to the segment's chord; rotation
error is the angle to the slerp between the segment's end rotations at the
frame's time fraction. Torso, both arms and both grippers share one index set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .geometry import _DEGENERATE_SEGMENT, Pose, _slerp, rotation_distances
from .trajectory import Trajectory


@dataclass(frozen=True)
class WaypointThresholds:
    pos_eps: float = 0.01
    rot_eps: float = 0.05
    # gripper interpolation error that forces a waypoint
    grip_eps: float = 0.1

    def __post_init__(self):
        for name in ("pos_eps", "rot_eps", "grip_eps"):
            v = getattr(self, name)
            if not v > 0 or np.isnan(v):
                raise ValueError(f"{name} must be > 0, got {v}")

    @classmethod
    def unbounded(cls) -> "WaypointThresholds":
        return cls(np.inf, np.inf, np.inf)


@dataclass(frozen=True)
class WaypointIndexSet:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2 or idx[0] != 0:
            raise ValueError(f"waypoints must start at frame 0 and hold at least two frames: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"waypoint indices must be strictly increasing: {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, k):
        return self.indices[k]

    def segments(self):
        return list(zip(self.indices, self.indices[1:]))


def _interior_fractions(i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    ks = np.arange(i + 1, j)
    return ks, (ks - i) / (j - i)


def _line_distances(p: np.ndarray, s: np.ndarray, e: np.ndarray) -> np.ndarray:
    d = e - s
    n = np.linalg.norm(d)
    if n < 1e-12:
        return np.linalg.norm(p - s, axis=-1)
    return np.linalg.norm(np.cross(p - s, d), axis=-1) / n


def channel_error(positions, orientations, i: int, j: int) -> tuple[float, float]:
    """Maximum (position, rotation) interpolation error over frames strictly between i and j."""
    positions = np.asarray(positions, dtype=float)
    orientations = np.asarray(orientations, dtype=float)
    last = positions.shape[0] - 1
    if not 0 <= i < j <= last:
        raise ValueError(f"need 0 <= i < j <= {last}, got i={i}, j={j}")
    ks, t = _interior_fractions(i, j)
    if ks.size == 0:
        return 0.0, 0.0
    pe = _line_distances(positions[ks], positions[i], positions[j])
    interp = _slerp(np.broadcast_to(orientations[i], (ks.size, 4)), np.broadcast_to(orientations[j], (ks.size, 4)), t)
    re = rotation_distances(orientations[ks], interp)
    return float(pe.max()), float(re.max())


def gripper_error(values, i: int, j: int) -> float:
    values = np.asarray(values, dtype=float)
    ks, t = _interior_fractions(i, j)
    if ks.size == 0:
        return 0.0
    lerp = (1 - t) * values[i] + t * values[j]
    return float(np.abs(values[ks] - lerp).max())


def segment_within(traj: Trajectory, i: int, j: int, th: WaypointThresholds) -> bool:
    """Whether every channel of the segment i -> j meets the thresholds."""
    for c in range(traj.positions.shape[1]):
        pe, re = channel_error(traj.positions[:, c], traj.orientations[:, c], i, j)
        if pe > th.pos_eps or re > th.rot_eps:
            return False
    return all(gripper_error(traj.grippers[:, g], i, j) <= th.grip_eps for g in range(traj.grippers.shape[1]))


def _as_trajectory(traj) -> Trajectory:
    return traj if isinstance(traj, Trajectory) else Trajectory.from_states(traj)


def extract_waypoints(traj, th: WaypointThresholds = WaypointThresholds()) -> WaypointIndexSet:
    """Minimal synchronized waypoint set for a trajectory (``Trajectory`` or RobotState list)."""
    traj = _as_trajectory(traj)
    if len(traj) < 2:
        raise ValueError(f"waypoint extraction needs at least 2 frames, got {len(traj)}")
    idx = _kernels.waypoint_dp(
        np.ascontiguousarray(traj.positions),
        np.ascontiguousarray(traj.orientations),
        np.ascontiguousarray(traj.grippers),
        float(th.pos_eps),
        float(th.rot_eps),
        float(th.grip_eps),
    )
    return WaypointIndexSet(tuple(idx.tolist()))


def _frame_segments(wps: Sequence[int], T: int) -> tuple[np.ndarray, np.ndarray]:
    """Segment index and interpolation fraction of every frame 0..T-1."""
    idx = np.asarray(wps)
    k = np.arange(T)
    seg = np.clip(np.searchsorted(idx, k, side="right") - 1, 0, len(idx) - 2)
    t = (k - idx[seg]) / (idx[seg + 1] - idx[seg])
    return seg, t


def reconstruct_arrays(traj_len: int, wps: Sequence[int], positions, orientations) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`reconstruct`; ``positions`` ``(m, ..., 3)``, ``orientations`` ``(m, ..., 4)``."""
    wps = list(wps)
    positions = np.asarray(positions, dtype=float)
    orientations = np.asarray(orientations, dtype=float)
    if len(wps) != positions.shape[0] or len(wps) != orientations.shape[0]:
        raise ValueError(f"{len(wps)} waypoint indices but {positions.shape[0]} positions / {orientations.shape[0]} orientations")
    if not wps or wps[0] != 0 or wps[-1] != traj_len - 1:
        raise ValueError(f"waypoints must span frames 0..{traj_len - 1}")
    if len(wps) == 1:
        return positions.copy(), orientations.copy()
    seg, t = _frame_segments(wps, traj_len)
    tp = t.reshape((-1,) + (1,) * (positions.ndim - 1))
    out_p = (1 - tp) * positions[seg] + tp * positions[seg + 1]
    out_q = _slerp(orientations[seg], orientations[seg + 1], t.reshape((-1,) + (1,) * (orientations.ndim - 2)))
    # waypoint frames are copied exactly, not re-interpolated
    out_p[wps] = positions
    out_q[wps] = orientations
    return out_p, out_q


def reconstruct(traj_len: int, wps, poses_at_wps: Sequence[Pose]) -> list[Pose]:
    """Linear/slerp interpolation between waypoint poses, one pose per frame."""
    idx = list(wps)
    if len(idx) != len(poses_at_wps):
        raise ValueError(f"{len(idx)} waypoint indices but {len(poses_at_wps)} poses")
    p, q = reconstruct_arrays(
        traj_len, idx, [x.position for x in poses_at_wps], [x.orientation for x in poses_at_wps]
    )
    return [Pose(p[k], q[k]) for k in range(traj_len)]


def reconstruction_errors(traj: Trajectory, wps, positions=None, orientations=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame, per-channel (position, rotation) error of a waypoint reconstruction.

    Waypoint poses default to the trajectory's own frames; pass decoded
    ``(m, 3, 3)`` positions and ``(m, 3, 4)`` orientations to score a decode.
    Position error uses the chord-line distance, rotation error the slerp
    angle, matching :func:`channel_error`; at waypoint frames both reduce to the
    distance between the frame and its waypoint pose.
    """
    idx = list(wps)
    if positions is None:
        positions = traj.positions[idx]
        orientations = traj.orientations[idx]
    positions = np.asarray(positions, dtype=float)
    orientations = np.asarray(orientations, dtype=float)
    T = idx[-1] + 1
    P, Q = traj.positions[:T], traj.orientations[:T]
    if len(idx) == 1:
        return np.linalg.norm(P - positions, axis=-1), rotation_distances(Q, orientations)
    seg, t = _frame_segments(idx, T)
    s, e = positions[seg], positions[seg + 1]
    d = e - s
    n = np.linalg.norm(d, axis=-1)
    v = P - s
    with np.errstate(divide="ignore", invalid="ignore"):
        line = np.linalg.norm(np.cross(v, d), axis=-1) / n
    pos_err = np.where(n < _DEGENERATE_SEGMENT, np.linalg.norm(v, axis=-1), line)
    interp = _slerp(orientations[seg], orientations[seg + 1], t[:, None])
    rot_err = rotation_distances(Q, interp)
    pos_err[idx] = np.linalg.norm(P[idx] - positions, axis=-1)
    rot_err[idx] = rotation_distances(Q[idx], orientations)
    return pos_err, rot_err
