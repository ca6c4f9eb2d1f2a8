"""Array-backed trajectories.

Frames are stored column-wise so the waypoint and tokenizer kernels can work on
contiguous arrays; :class:`~trajtok.geometry.RobotState` objects are produced on
demand.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import RobotState, Pose, canonical, UNIT_TOL, _ALREADY_UNIT

CHANNELS = ("torso", "left", "right")
GRIPPERS = ("left_gripper", "right_gripper")


def _check_quats(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1)
    if not np.all(np.abs(n - 1.0) <= UNIT_TOL):
        bad = np.argwhere(np.abs(n - 1.0) > UNIT_TOL)[0]
        raise ValueError(f"orientation at frame {bad[0]} has norm {n[tuple(bad)]!r}")
    fix = np.abs(n - 1.0) > _ALREADY_UNIT
    if np.any(fix):
        q = np.where(fix[..., None], q / n[..., None], q)
    return canonical(q)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered robot states.

    Attributes:
        timestamps: ``(T,)`` seconds, strictly increasing.
        positions: ``(T, 3, 3)`` end-effector positions for torso, left, right.
        orientations: ``(T, 3, 4)`` unit quaternions for the same channels.
        grippers: ``(T, 2)`` left and right gripper openings in ``[0, 1]``.
    """

    timestamps: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray
    grippers: np.ndarray

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float).reshape(-1)
        T = ts.shape[0]
        pos = np.array(self.positions, dtype=float).reshape(T, 3, 3)
        quat = np.array(self.orientations, dtype=float).reshape(T, 3, 4)
        grip = np.array(self.grippers, dtype=float).reshape(T, 2)
        for name, arr in (("timestamps", ts), ("positions", pos), ("orientations", quat), ("grippers", grip)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contain non-finite values")
        if T > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        quat = _check_quats(quat)
        grip = np.clip(grip, 0.0, 1.0)
        for name, arr in (("timestamps", ts), ("positions", pos), ("orientations", quat), ("grippers", grip)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @classmethod
    def from_states(cls, states: Sequence[RobotState]) -> "Trajectory":
        return cls(
            timestamps=[s.timestamp for s in states],
            positions=[[s.pose(c).position for c in CHANNELS] for s in states],
            orientations=[[s.pose(c).orientation for c in CHANNELS] for s in states],
            grippers=[[s.left_gripper, s.right_gripper] for s in states],
        )

    def state(self, k: int) -> RobotState:
        poses = [Pose(self.positions[k, c], self.orientations[k, c]) for c in range(3)]
        return RobotState(*poses, self.grippers[k, 0], self.grippers[k, 1], self.timestamps[k])

    def states(self) -> list[RobotState]:
        return [self.state(k) for k in range(len(self))]

    def slice(self, start: int, stop: int) -> "Trajectory":
        # a contiguous slice of validated data is itself valid; skip re-checking
        out = object.__new__(Trajectory)
        for name in ("timestamps", "positions", "orientations", "grippers"):
            object.__setattr__(out, name, getattr(self, name)[start:stop])
        return out

    def equals(self, other: "Trajectory") -> bool:
        """Bit-exact equality of every field."""
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("timestamps", "positions", "orientations", "grippers")
        )
