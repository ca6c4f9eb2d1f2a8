"""Deterministic synthetic trajectories and episodes.

These stand in for recorded robot data in tests, benchmarks and the sample
dataset shipped with the CLI (``trajtok synth``).
"""
from __future__ import annotations

import numpy as np

from .datapipe import Episode
from .geometry import quat_from_rotvec, quat_mul
from .trajectory import Trajectory

FPS = 30.0

# nominal end-effector base positions (m): torso, left arm, right arm; kept off
# the 5 cm dedup lattice so sub-mm noise does not flip the starting cell
_BASES = np.array([[0.013, 0.012, 0.912], [0.437, 0.262, 1.018], [0.437, -0.262, 1.018]])
_OBJECTS = ("cup", "bottle", "sponge", "block", "bowl")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _random_quat(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def _smooth_path(rng, n: int, dim: int, amplitude: float, n_modes: int = 3) -> np.ndarray:
    """Sum of a few low-frequency sinusoids plus a linear drift; zero at t=0."""
    t = np.linspace(0.0, 1.0, n)[:, None]
    out = rng.normal(scale=amplitude, size=(1, dim)) * t
    for _ in range(n_modes):
        f = rng.uniform(0.2, 1.2)
        phase = rng.uniform(0, 2 * np.pi)
        a = rng.normal(scale=amplitude / 2, size=(1, dim))
        out = out + a * (np.sin(2 * np.pi * f * t + phase) - np.sin(phase))
    return out


def _gripper_track(rng, n: int) -> np.ndarray:
    """Constant opening with, most of the time, one open/close ramp of 2-5 frames."""
    start = float(rng.random() < 0.5)
    g = np.full(n, start)
    if rng.random() < 0.7 and n > 8:
        at = int(rng.integers(2, n - 6))
        ramp = int(rng.integers(2, 6))
        g[at : at + ramp] = np.linspace(start, 1.0 - start, ramp + 2)[1:-1]
        g[at + ramp :] = 1.0 - start
    return g


def smooth_trajectory(seed=None, n_frames: int = 40, amplitude: float = 0.12, rot_amplitude: float = 0.4) -> Trajectory:
    """Random smooth whole-body motion; the torso moves at a quarter of the arms' amplitude."""
    rng = _rng(seed)
    pos = np.empty((n_frames, 3, 3))
    quat = np.empty((n_frames, 3, 4))
    for c in range(3):
        scale = 0.25 if c == 0 else 1.0
        pos[:, c] = _BASES[c] + _smooth_path(rng, n_frames, 3, amplitude * scale)
        rv = _smooth_path(rng, n_frames, 3, rot_amplitude * scale)
        quat[:, c] = quat_mul(_random_quat(rng), quat_from_rotvec(rv))
    grip = np.stack([_gripper_track(rng, n_frames), _gripper_track(rng, n_frames)], axis=1)
    return Trajectory(np.arange(n_frames) / FPS, pos, quat, grip)


def straight_trajectory(seed=None, n_frames: int = 40, max_speed: float = 0.3) -> Trajectory:
    """Constant-velocity straight-line motion with constant angular velocity on every channel."""
    rng = _rng(seed)
    t = np.arange(n_frames) / FPS
    pos = np.empty((n_frames, 3, 3))
    quat = np.empty((n_frames, 3, 4))
    for c in range(3):
        v = rng.normal(size=3)
        v *= rng.uniform(0, max_speed) / np.linalg.norm(v)
        w = rng.normal(scale=0.3, size=3)
        pos[:, c] = _BASES[c] + t[:, None] * v
        quat[:, c] = quat_mul(quat_from_rotvec(t[:, None] * w), _random_quat(rng))
    grip = np.full((n_frames, 2), float(rng.integers(0, 2)))
    return Trajectory(t, pos, quat, grip)


def polyline_trajectory(seed=None, n_frames: int = 20, n_corners: int = 3, step: float = 0.02, jitter: float = 0.002) -> Trajectory:
    """Piecewise-linear motion with random corners and small noise.

    Used where waypoint counts should be small but non-trivial.
    """
    rng = _rng(seed)
    corners = np.sort(rng.choice(np.arange(1, n_frames - 1), size=min(n_corners, n_frames - 2), replace=False))
    knots = np.concatenate([[0], corners, [n_frames - 1]])
    pos = np.empty((n_frames, 3, 3))
    quat = np.empty((n_frames, 3, 4))
    k = np.arange(n_frames)
    for c in range(3):
        pts = np.cumsum(rng.normal(scale=step * (knots[1:] - knots[:-1])[:, None] / 3, size=(len(knots) - 1, 3)), axis=0)
        pts = np.vstack([np.zeros(3), pts])
        path = np.stack([np.interp(k, knots, pts[:, d]) for d in range(3)], axis=1)
        pos[:, c] = _BASES[c] + path + rng.normal(scale=jitter, size=(n_frames, 3))
        rvk = np.cumsum(rng.normal(scale=0.05, size=(len(knots), 3)), axis=0)
        rv = np.stack([np.interp(k, knots, rvk[:, d]) for d in range(3)], axis=1)
        quat[:, c] = quat_mul(_random_quat(rng), quat_from_rotvec(rv + rng.normal(scale=jitter, size=(n_frames, 3))))
    grip = np.stack([_gripper_track(rng, n_frames), _gripper_track(rng, n_frames)], axis=1)
    return Trajectory(k / FPS, pos, quat, grip)


def smooth_corpus(n: int, seed=0, n_frames: int = 40, **kw) -> list[Trajectory]:
    rng = _rng(seed)
    return [smooth_trajectory(rng, n_frames, **kw) for _ in range(n)]


def _perturbed(traj: Trajectory, rng, scale: float) -> Trajectory:
    return Trajectory(
        traj.timestamps,
        traj.positions + rng.normal(scale=scale, size=traj.positions.shape),
        traj.orientations,
        traj.grippers,
    )


def sample_episodes(n_groups: int = 12, per_group: int = 4, n_frames: int = 120, seed: int = 0, digits: int | None = 6) -> list[Episode]:
    """Sample dataset: ``n_groups`` (instruction, subtask) groups of ``per_group`` episodes.

    Within a group the second episode is a near copy of the first (1 mm of
    noise), so de-duplication has something to find. ``digits`` rounds
    positions, timestamps and grippers to keep files compact.
    """
    rng = _rng(seed)
    episodes = []
    for g in range(n_groups):
        obj = _OBJECTS[g % len(_OBJECTS)]
        side = "right" if g % 3 else "left"
        instruction = f"pick up the {obj} with the {side} hand"
        subtask = f"grasp the {obj}" if g % 2 == 0 else f"lift the {obj}"
        base = smooth_trajectory(rng, n_frames)
        for m in range(per_group):
            traj = base if m == 0 else (_perturbed(base, rng, 0.001) if m == 1 else smooth_trajectory(rng, n_frames))
            if digits is not None:
                traj = Trajectory(
                    np.round(traj.timestamps, digits),
                    np.round(traj.positions, digits),
                    traj.orientations,
                    np.round(traj.grippers, digits),
                )
            episodes.append(Episode(f"ep{g:03d}-{m}", instruction, subtask, traj))
    return episodes
