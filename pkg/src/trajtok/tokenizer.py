"""Spatial action tokenizer.

Waypoint deltas are clustered (translation and rotation separately) into a
motion token library. A trajectory window is encoded as up to five 8-slot
steps::

    [torso_xyz, torso_rot, left_xyz, left_rot, left_grip, right_xyz, right_rot, right_grip]

Each step moves every end-effector from its *simulated* state toward the next
waypoint using the library entry whose application lands closest to it, so
quantization error is corrected at the following step instead of piling up.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .geometry import (
    COMPOSITION_CONVENTION,
    DeltaAction,
    Pose,
    RobotState,
    canonical,
    quat_conj,
    quat_mul,
    rotation_distances,
)
from ._kernels import greedy_tokens, lloyd_assign
from .trajectory import Trajectory
from .waypoints import WaypointThresholds, extract_waypoints, reconstruction_errors

FORMAT_VERSION = 1
SLOTS = (
    "torso_xyz",
    "torso_rot",
    "left_xyz",
    "left_rot",
    "left_grip",
    "right_xyz",
    "right_rot",
    "right_grip",
)
SLOT_WIDTH = len(SLOTS)
# slot positions of the per-channel translation/rotation tokens and of the grippers
_TRANS_SLOTS = (0, 2, 5)
_ROT_SLOTS = (1, 3, 6)
_GRIP_SLOTS = (4, 7)

MAX_STEPS = 5
MAX_HORIZON = 40
GRIPPER_LEVELS = 256
TOP_K = 3

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-8


class InsufficientDataError(ValueError):
    pass


class LibraryFormatError(ValueError):
    pass


class TokenError(ValueError):
    pass


# ---------------------------------------------------------------- k-means


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[nxt : nxt + 1])[:, 0])
    return X[chosen].copy()


def kmeans(X, k: int, seed, *, unit_norm: bool = False, max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOL):
    """Lloyd's algorithm from a k-means++ start.

    With ``unit_norm`` the centroids are renormalized after every update
    (chordal k-means on the unit sphere). Empty clusters are re-seeded with the
    point worst served by the current centroids. Returns
    ``(centroids, labels, iterations)``.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, k, rng)
    if unit_norm:
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    it = 0
    X = np.ascontiguousarray(X)
    for it in range(1, max_iter + 1):
        labels, served, sums, counts = lloyd_assign(X, np.ascontiguousarray(centers))
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            order = np.argsort(-served, kind="stable")
            for c, p in zip(np.flatnonzero(~filled), order):
                new[c] = X[p]
        if unit_norm:
            new /= np.linalg.norm(new, axis=1, keepdims=True)
        shift = float(np.abs(new - centers).max())
        centers = new
        if shift < tol:
            break
    labels = lloyd_assign(X, np.ascontiguousarray(centers))[0]
    return centers, labels, it


# ---------------------------------------------------------------- library


@dataclass(frozen=True, eq=False)
class MotionTokenLibrary:
    trans_centroids: np.ndarray
    rot_centroids: np.ndarray
    thresholds: WaypointThresholds = WaypointThresholds()
    fit_seed: int = 0
    # largest nearest-centroid distance over the fitted deltas
    quant_radius_trans: float = 0.0
    quant_radius_rot: float = 0.0
    composition_convention: str = COMPOSITION_CONVENTION
    format_version: int = FORMAT_VERSION
    gripper_levels: int = GRIPPER_LEVELS

    def __post_init__(self):
        t = np.array(self.trans_centroids, dtype=float).reshape(-1, 3)
        r = np.array(self.rot_centroids, dtype=float).reshape(-1, 4)
        if t.shape[0] == 0 or r.shape[0] == 0:
            raise LibraryFormatError("library needs at least one translation and one rotation centroid")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise LibraryFormatError("library centroids must be finite")
        if np.any(np.abs(np.linalg.norm(r, axis=1) - 1.0) > 1e-9):
            raise LibraryFormatError("rotation centroids must be unit quaternions")
        if np.any(r[:, 0] < 0):
            raise LibraryFormatError("rotation centroids must satisfy w >= 0")
        if self.composition_convention != COMPOSITION_CONVENTION:
            raise LibraryFormatError(f"unsupported composition convention {self.composition_convention!r}")
        if self.format_version != FORMAT_VERSION:
            raise LibraryFormatError(
                f"library format_version {self.format_version} is not supported (expected {FORMAT_VERSION})"
            )
        if not 2 <= self.gripper_levels <= 256:
            raise LibraryFormatError(f"gripper_levels must be in [2, 256], got {self.gripper_levels}")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "trans_centroids", t)
        object.__setattr__(self, "rot_centroids", r)

    @property
    def k_trans(self) -> int:
        return self.trans_centroids.shape[0]

    @property
    def k_rot(self) -> int:
        return self.rot_centroids.shape[0]

    def to_dict(self) -> dict:
        th = self.thresholds
        return {
            "format_version": self.format_version,
            "composition_convention": self.composition_convention,
            "fit_seed": self.fit_seed,
            "thresholds": {"pos_eps": th.pos_eps, "rot_eps": th.rot_eps, "grip_eps": th.grip_eps},
            "k_trans": self.k_trans,
            "k_rot": self.k_rot,
            "gripper_levels": self.gripper_levels,
            "quant_radius_trans": self.quant_radius_trans,
            "quant_radius_rot": self.quant_radius_rot,
            "trans_centroids": self.trans_centroids.tolist(),
            "rot_centroids": self.rot_centroids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionTokenLibrary":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise LibraryFormatError(f"library format_version {version!r} is not supported (expected {FORMAT_VERSION})")
        try:
            lib = cls(
                trans_centroids=d["trans_centroids"],
                rot_centroids=d["rot_centroids"],
                thresholds=WaypointThresholds(**d["thresholds"]),
                fit_seed=int(d["fit_seed"]),
                quant_radius_trans=float(d["quant_radius_trans"]),
                quant_radius_rot=float(d["quant_radius_rot"]),
                composition_convention=d["composition_convention"],
                format_version=version,
                gripper_levels=int(d["gripper_levels"]),
            )
        except KeyError as e:
            raise LibraryFormatError(f"library is missing field {e.args[0]!r}") from None
        if lib.k_trans != d.get("k_trans") or lib.k_rot != d.get("k_rot"):
            raise LibraryFormatError("centroid counts do not match k_trans/k_rot")
        return lib

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MotionTokenLibrary":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise LibraryFormatError(f"library file is not valid JSON: {e}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "MotionTokenLibrary":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _delta_arrays(deltas) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(deltas, tuple) and len(deltas) == 2 and isinstance(deltas[0], np.ndarray):
        d_pos, d_rot = deltas
    else:
        deltas = list(deltas)
        d_pos = np.array([d.d_pos for d in deltas], dtype=float).reshape(-1, 3)
        d_rot = np.array([d.d_rot for d in deltas], dtype=float).reshape(-1, 4)
    return np.asarray(d_pos, dtype=float).reshape(-1, 3), canonical(np.asarray(d_rot, dtype=float).reshape(-1, 4))


def fit_library(
    deltas,
    k_trans: int = 150,
    k_rot: int = 150,
    seed: int = 0,
    thresholds: WaypointThresholds = WaypointThresholds(),
) -> MotionTokenLibrary:
    """Cluster waypoint deltas into a motion token library.

    ``deltas`` is a sequence of :class:`DeltaAction` or a ``(d_pos, d_rot)``
    pair of ``(N, 3)`` / ``(N, 4)`` arrays.
    """
    d_pos, d_rot = _delta_arrays(deltas)
    n = d_pos.shape[0]
    need = max(k_trans, k_rot)
    if k_trans < 1 or k_rot < 1:
        raise ValueError("cluster counts must be >= 1")
    if n < need:
        raise InsufficientDataError(f"fitting needs at least {need} deltas (max of k_trans, k_rot); got {n}")
    trans_seed, rot_seed = np.random.SeedSequence(seed).spawn(2)
    tc, _, _ = kmeans(d_pos, k_trans, trans_seed)
    rc, _, _ = kmeans(d_rot, k_rot, rot_seed, unit_norm=True)
    rc = canonical(rc)
    r_t = float(np.sqrt(lloyd_assign(np.ascontiguousarray(d_pos), np.ascontiguousarray(tc))[1]).max())
    r_r = float(rotation_distances(d_rot[:, None, :], rc[None, :, :]).min(axis=1).max())
    return MotionTokenLibrary(
        trans_centroids=tc,
        rot_centroids=rc,
        thresholds=thresholds,
        fit_seed=int(seed),
        quant_radius_trans=r_t,
        quant_radius_rot=r_r,
    )


# ---------------------------------------------------------------- tokens


@dataclass(frozen=True)
class TokenId:
    channel: str
    index: int

    def __post_init__(self):
        if self.channel not in SLOTS:
            raise TokenError(f"unknown channel {self.channel!r}")


class NearestTokens(NamedTuple):
    trans: list[tuple[int, float]]
    rot: list[tuple[int, float]]


def _rank(dists: np.ndarray, m: int) -> list[tuple[int, float]]:
    order = np.argsort(dists, kind="stable")[:m]
    return [(int(i), float(dists[i])) for i in order]


def nearest_tokens(lib: MotionTokenLibrary, target: DeltaAction, m: int = TOP_K) -> NearestTokens:
    """Rank translation and rotation centroids by distance to a delta (ties: lower index)."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    dt = np.linalg.norm(lib.trans_centroids - target.d_pos, axis=1)
    dr = rotation_distances(lib.rot_centroids, target.d_rot)
    return NearestTokens(_rank(dt, min(m, lib.k_trans)), _rank(dr, min(m, lib.k_rot)))


@dataclass(frozen=True)
class ActionTokenSequence:
    """Encoded action window.

    ``waypoint_offsets`` holds the frame offset (within the window) reached at
    the end of each step; it is what lets a decode be laid back onto frames.
    """

    steps: tuple[tuple[int, ...], ...]
    horizon_frames: int
    waypoint_offsets: tuple[int, ...] = field(default=())

    def __post_init__(self):
        steps = tuple(tuple(int(x) for x in s) for s in self.steps)
        offsets = tuple(int(x) for x in self.waypoint_offsets)
        if any(len(s) != SLOT_WIDTH for s in steps):
            raise TokenError(f"every step must hold {SLOT_WIDTH} tokens")
        if len(steps) > MAX_STEPS:
            raise TokenError(f"at most {MAX_STEPS} steps per window, got {len(steps)}")
        if not 0 <= self.horizon_frames <= MAX_HORIZON:
            raise TokenError(f"horizon_frames must be in [0, {MAX_HORIZON}], got {self.horizon_frames}")
        if offsets:
            if len(offsets) != len(steps):
                raise TokenError("waypoint_offsets must have one entry per step")
            if any(b <= a for a, b in zip((0,) + offsets, offsets)) or offsets[-1] != self.horizon_frames - 1:
                raise TokenError(f"waypoint_offsets {offsets} inconsistent with horizon {self.horizon_frames}")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "waypoint_offsets", offsets)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def n_tokens(self) -> int:
        return SLOT_WIDTH * len(self.steps)

    def tokens(self) -> list[int]:
        return [x for s in self.steps for x in s]

    def token_ids(self) -> list[TokenId]:
        return [TokenId(SLOTS[i], x) for s in self.steps for i, x in enumerate(s)]

    def to_flat(self, lib: MotionTokenLibrary) -> list[int]:
        """Map slot-local indices onto one shared vocabulary: translation, rotation, then gripper ids."""
        base = {"xyz": 0, "rot": lib.k_trans, "grip": lib.k_trans + lib.k_rot}
        return [base[SLOTS[i].split("_")[1]] + x for s in self.steps for i, x in enumerate(s)]

    def to_dict(self) -> dict:
        return {
            "channels": list(SLOTS),
            "steps": [list(s) for s in self.steps],
            "horizon_frames": self.horizon_frames,
            "waypoint_offsets": list(self.waypoint_offsets),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionTokenSequence":
        if list(d.get("channels", SLOTS)) != list(SLOTS):
            raise TokenError(f"unexpected channel layout {d.get('channels')}")
        return cls(tuple(map(tuple, d["steps"])), int(d["horizon_frames"]), tuple(d.get("waypoint_offsets", ())))


def quantize_gripper(g, levels: int = GRIPPER_LEVELS):
    return np.rint(np.clip(np.asarray(g, dtype=float), 0.0, 1.0) * (levels - 1)).astype(np.int64)


def dequantize_gripper(level, levels: int = GRIPPER_LEVELS):
    return np.asarray(level, dtype=float) / (levels - 1)


def _make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _start_arrays(start, window: Trajectory):
    if start is None:
        return window.positions[0].copy(), window.orientations[0].copy()
    if isinstance(start, RobotState):
        return (
            np.array([start.pose(c).position for c in ("torso", "left", "right")]),
            np.array([start.pose(c).orientation for c in ("torso", "left", "right")]),
        )
    pos, quat = start
    return np.array(pos, dtype=float).reshape(3, 3), np.array(quat, dtype=float).reshape(3, 4)


def encode(
    traj,
    lib: MotionTokenLibrary,
    mode: str = "greedy",
    seed=None,
    *,
    start=None,
    update_state: bool = True,
    horizon: int = MAX_HORIZON,
) -> ActionTokenSequence:
    """Encode the first ``horizon`` frames of a trajectory.

    ``mode`` is ``"greedy"`` (nearest token) or ``"top3"`` (uniform over the
    three nearest; ``seed`` is an int or a numpy Generator). ``start`` overrides
    the simulated starting state, which is how consecutive windows chain in
    :func:`encode_episode`. ``update_state=False`` picks tokens against the
    true waypoint deltas instead of the simulated state; it exists for
    comparison only.
    """
    if mode not in ("greedy", "top3"):
        raise ValueError(f"mode must be 'greedy' or 'top3', got {mode!r}")
    if not 2 <= horizon <= MAX_HORIZON:
        raise ValueError(f"horizon must be in [2, {MAX_HORIZON}], got {horizon}")
    traj = traj if isinstance(traj, Trajectory) else Trajectory.from_states(traj)
    window = traj.slice(0, min(len(traj), horizon))
    if len(window) < 2:
        raise ValueError(f"encoding needs a window of at least 2 frames, got {len(window)}")
    wps = extract_waypoints(window, lib.thresholds).indices[: MAX_STEPS + 1]
    rng = _make_rng(seed) if mode == "top3" else None

    pos, quat = _start_arrays(start, window)
    n_steps = len(wps) - 1
    if rng is None:
        ranks = np.zeros((n_steps, 3, 2), dtype=np.int64)
    else:
        kt, kr = min(TOP_K, lib.k_trans), min(TOP_K, lib.k_rot)
        ranks = rng.integers(0, [kt, kr], size=(n_steps, 3, 2)).astype(np.int64)
    idx = np.asarray(wps)
    ti, ri = greedy_tokens(
        np.ascontiguousarray(window.positions[idx]),
        np.ascontiguousarray(window.orientations[idx]),
        np.ascontiguousarray(pos, dtype=float),
        np.ascontiguousarray(quat, dtype=float),
        lib.trans_centroids,
        lib.rot_centroids,
        ranks,
        bool(update_state),
    )
    grip_levels = quantize_gripper(window.grippers[idx[1:]], lib.gripper_levels)
    steps = [
        tuple(int(v) for v in (t[0], r[0], t[1], r[1], g[0], t[2], r[2], g[1]))
        for t, r, g in zip(ti, ri, grip_levels)
    ]
    return ActionTokenSequence(tuple(steps), wps[-1] + 1, tuple(wps[1:]))


def _check_indices(seq: ActionTokenSequence, lib: MotionTokenLibrary) -> np.ndarray:
    arr = np.array(seq.steps, dtype=np.int64).reshape(-1, SLOT_WIDTH)
    limits = np.array(
        [lib.k_trans, lib.k_rot, lib.k_trans, lib.k_rot, lib.gripper_levels, lib.k_trans, lib.k_rot, lib.gripper_levels]
    )
    bad = np.argwhere((arr < 0) | (arr >= limits))
    if bad.size:
        s, slot = bad[0]
        raise TokenError(f"token {arr[s, slot]} out of range for {SLOTS[slot]} (limit {limits[slot]}) at step {s}")
    return arr


def decode_arrays(seq: ActionTokenSequence, lib: MotionTokenLibrary, start_pos, start_quat, start_grip):
    """Decoded waypoint states as arrays: positions ``(S+1, 3, 3)``,
    orientations ``(S+1, 3, 4)``, grippers ``(S+1, 2)``; row 0 is the start."""
    arr = _check_indices(seq, lib)
    S = arr.shape[0]
    pos = np.empty((S + 1, 3, 3))
    quat = np.empty((S + 1, 3, 4))
    grip = np.empty((S + 1, 2))
    pos[0], quat[0], grip[0] = start_pos, start_quat, start_grip
    for s in range(S):
        row = arr[s]
        pos[s + 1] = pos[s] + lib.trans_centroids[row[list(_TRANS_SLOTS)]]
        quat[s + 1] = canonical(quat_mul(lib.rot_centroids[row[list(_ROT_SLOTS)]], quat[s]))
        grip[s + 1] = dequantize_gripper(row[list(_GRIP_SLOTS)], lib.gripper_levels)
    return pos, quat, grip


def decode(seq: ActionTokenSequence, lib: MotionTokenLibrary, start: RobotState, dt: float = 1 / 30) -> list[RobotState]:
    """Replay a token sequence from ``start``; returns the start plus one state per step.

    Timestamps advance by ``dt`` per frame of ``waypoint_offsets`` (one frame
    per step when offsets are absent).
    """
    sp = np.array([start.pose(c).position for c in ("torso", "left", "right")])
    sq = np.array([start.pose(c).orientation for c in ("torso", "left", "right")])
    pos, quat, grip = decode_arrays(seq, lib, sp, sq, [start.left_gripper, start.right_gripper])
    offsets = seq.waypoint_offsets or tuple(range(1, len(seq) + 1))
    out = [start]
    for s, off in enumerate(offsets, start=1):
        poses = [Pose(pos[s, c], quat[s, c]) for c in range(3)]
        out.append(RobotState(*poses, grip[s, 0], grip[s, 1], start.timestamp + off * dt))
    return out


# ---------------------------------------------------------------- whole episodes


def encode_episode(
    traj: Trajectory,
    lib: MotionTokenLibrary,
    mode: str = "greedy",
    seed=None,
    *,
    update_state: bool = True,
    horizon: int = MAX_HORIZON,
):
    """Cover a full trajectory with consecutive windows of at most ``horizon`` frames.

    Each window starts on the last frame of the previous one, from the state
    the previous window decodes to.
    """
    rng = _make_rng(seed) if mode == "top3" else None
    seqs = []
    cursor = 0
    pos, quat = traj.positions[0].copy(), traj.orientations[0].copy()
    grip = traj.grippers[0].copy()
    while cursor < len(traj) - 1:
        window = traj.slice(cursor, cursor + horizon)
        seq = encode(window, lib, mode, rng, start=(pos, quat), update_state=update_state, horizon=horizon)
        p, q, g = decode_arrays(seq, lib, pos, quat, grip)
        pos, quat, grip = p[-1], q[-1], g[-1]
        seqs.append(seq)
        cursor += seq.horizon_frames - 1
    return seqs


def decode_episode_waypoints(seqs: Sequence[ActionTokenSequence], lib: MotionTokenLibrary, start_pos, start_quat, start_grip):
    """Chain window decodes. Returns global waypoint frame indices and the decoded states at them."""
    idx = [0]
    P, Q, G = [np.asarray(start_pos, float)], [np.asarray(start_quat, float)], [np.asarray(start_grip, float)]
    cursor = 0
    for seq in seqs:
        p, q, g = decode_arrays(seq, lib, P[-1], Q[-1], G[-1])
        offsets = seq.waypoint_offsets or tuple(range(1, len(seq) + 1))
        for s, off in enumerate(offsets, start=1):
            idx.append(cursor + off)
            P.append(p[s])
            Q.append(q[s])
            G.append(g[s])
        cursor += offsets[-1] if offsets else 0
    return idx, np.array(P), np.array(Q), np.array(G)


def decode_episode(seqs, lib: MotionTokenLibrary, start: RobotState, n_frames: int | None = None, dt: float = 1 / 30) -> Trajectory:
    """Per-frame reconstruction of an encoded episode (lerp/slerp between decoded waypoints)."""
    from .waypoints import reconstruct_arrays

    sp = np.array([start.pose(c).position for c in ("torso", "left", "right")])
    sq = np.array([start.pose(c).orientation for c in ("torso", "left", "right")])
    idx, P, Q, G = decode_episode_waypoints(seqs, lib, sp, sq, [start.left_gripper, start.right_gripper])
    T = idx[-1] + 1
    if n_frames is not None and n_frames != T:
        raise TokenError(f"token windows cover {T} frames, expected {n_frames}")
    if len(idx) == 1:
        return Trajectory([start.timestamp], sp[None], sq[None], G[:1])
    pos, quat = reconstruct_arrays(T, idx, P, Q)
    grip = np.empty((T, 2))
    for g in range(2):
        grip[:, g] = np.interp(np.arange(T), idx, G[:, g])
    return Trajectory(start.timestamp + dt * np.arange(T), pos, quat, grip)


def roundtrip_errors(traj: Trajectory, seqs: Sequence[ActionTokenSequence], lib: MotionTokenLibrary):
    """Per-frame (position, rotation) error of the decoded episode against ``traj``.

    Measured exactly like the waypoint budget: chord-line distance for
    positions and slerp angle for rotations, each against the decoded
    waypoint states. Returns two ``(T, 3)`` arrays.
    """
    idx, P, Q, _ = decode_episode_waypoints(seqs, lib, traj.positions[0], traj.orientations[0], traj.grippers[0])
    if idx[-1] != len(traj) - 1:
        raise TokenError(f"token windows cover {idx[-1] + 1} frames, trajectory has {len(traj)}")
    return reconstruction_errors(traj, idx, P, Q)


def collect_deltas(trajs: Iterable[Trajectory], thresholds: WaypointThresholds) -> tuple[np.ndarray, np.ndarray]:
    """Waypoint-to-waypoint deltas of every channel, windowed the same way the encoder windows."""
    d_pos, d_rot = [], []
    for traj in trajs:
        cursor = 0
        while cursor < len(traj) - 1:
            window = traj.slice(cursor, cursor + MAX_HORIZON)
            wps = extract_waypoints(window, thresholds).indices[: MAX_STEPS + 1]
            for a, b in zip(wps, wps[1:]):
                d_pos.append(window.positions[b] - window.positions[a])
                d_rot.append(quat_mul(window.orientations[b], quat_conj(window.orientations[a])))
            cursor += wps[-1]
    if not d_pos:
        return np.zeros((0, 3)), np.zeros((0, 4))
    return np.concatenate(d_pos), canonical(np.concatenate(d_rot))


# ---------------------------------------------------------------- binning baseline


@dataclass(frozen=True, eq=False)
class BinningSpec:
    mins: np.ndarray
    maxs: np.ndarray
    bins_per_dim: int = 256

    def __post_init__(self):
        lo = np.array(self.mins, dtype=float).reshape(-1)
        hi = np.array(self.maxs, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("mins and maxs must have the same length")
        if self.bins_per_dim < 2:
            raise ValueError(f"bins_per_dim must be >= 2, got {self.bins_per_dim}")
        if not np.all(lo < hi):
            raise ValueError("each dimension needs min < max")
        object.__setattr__(self, "mins", lo)
        object.__setattr__(self, "maxs", hi)

    @property
    def dims(self) -> int:
        return self.mins.shape[0]

    @property
    def bin_width(self) -> np.ndarray:
        return (self.maxs - self.mins) / self.bins_per_dim

    @classmethod
    def fit(cls, values, bins_per_dim: int = 256, margin: float = 0.01) -> "BinningSpec":
        """Per-dimension data range widened by ``margin`` of its span on each side."""
        v = np.asarray(values, dtype=float)
        v = v.reshape(-1, v.shape[-1])
        lo, hi = v.min(axis=0), v.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(lo - margin * span, hi + margin * span, bins_per_dim)

    @classmethod
    def uniform(cls, dims: int, low: float = -1.0, high: float = 1.0, bins_per_dim: int = 256) -> "BinningSpec":
        return cls(np.full(dims, low), np.full(dims, high), bins_per_dim)


def binning_encode(chunk, spec: BinningSpec) -> np.ndarray:
    """Flattened ``(H, D)`` chunk -> ``H * D`` bin indices; out-of-range values clamp to the edge bins."""
    v = np.asarray(chunk, dtype=float).reshape(-1, spec.dims)
    b = np.floor((v - spec.mins) / (spec.maxs - spec.mins) * spec.bins_per_dim)
    return np.clip(b, 0, spec.bins_per_dim - 1).astype(np.int64).reshape(-1)


def binning_decode(tokens, spec: BinningSpec) -> np.ndarray:
    """Bin indices -> ``(H, D)`` bin centers."""
    t = np.asarray(tokens, dtype=np.int64).reshape(-1, spec.dims)
    if np.any((t < 0) | (t >= spec.bins_per_dim)):
        raise TokenError("bin index out of range")
    return spec.mins + (t + 0.5) * spec.bin_width


@dataclass
class CompressionRow:
    index: int
    frames: int
    windows: int
    spatial_tokens: int
    binning_tokens: int

    @property
    def ratio(self) -> float:
        return self.binning_tokens / self.spatial_tokens if self.spatial_tokens else math.inf


def compression_report(trajs: Iterable[Trajectory], lib: MotionTokenLibrary, spec: BinningSpec, horizon: int = MAX_HORIZON):
    """Spatial-token versus binning token counts per trajectory.

    Binning emits ``spec.dims * horizon`` tokens for every fixed ``horizon``-frame
    chunk; the spatial tokenizer emits 8 tokens per step of its adaptive windows.
    """
    rows = []
    for n, traj in enumerate(trajs):
        seqs = encode_episode(traj, lib)
        chunks = max(1, math.ceil(len(traj) / horizon))
        rows.append(
            CompressionRow(
                index=n,
                frames=len(traj),
                windows=len(seqs),
                spatial_tokens=sum(s.n_tokens for s in seqs),
                binning_tokens=spec.dims * horizon * chunks,
            )
        )
    return rows
