"""SE(3)/SO(3) primitives shared by the rest of the toolkit.

Quaternions are ``(w, x, y, z)`` numpy arrays. Every function that returns a
rotation returns it in the ``w >= 0`` hemisphere so that equal rotations have
equal representatives.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-6
_ALREADY_UNIT = 1e-12
_DEGENERATE_SEGMENT = 1e-12

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
# reflection across the world x-z plane (negates y)
MIRROR = np.diag([1.0, -1.0, 1.0])

# world-frame left composition: orientation' = d_rot * orientation
COMPOSITION_CONVENTION = "world_left"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_vec3(v) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"vector has non-finite components: {arr}")
    return arr


def canonical(q: np.ndarray) -> np.ndarray:
    """Flip quaternions into the w >= 0 hemisphere (vectorized over leading axes)."""
    q = np.asarray(q, dtype=float)
    w = q[..., 0]
    flip = w < 0
    # on the w == 0 great circle, use the first non-zero vector component
    on_edge = w == 0
    if np.any(on_edge):
        v = q[..., 1:]
        nz = v != 0
        first = np.argmax(nz, axis=-1)
        lead = np.take_along_axis(v, first[..., None], axis=-1)[..., 0]
        flip = flip | (on_edge & (lead < 0))
    return np.where(flip[..., None], -q, q)


def as_rotation(q) -> np.ndarray:
    """Validate a quaternion, normalizing it when within ``UNIT_TOL`` of unit norm."""
    arr = np.array(q, dtype=float).reshape(4)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"quaternion has non-finite components: {arr}")
    n = float(np.linalg.norm(arr))
    if abs(n - 1.0) > UNIT_TOL:
        raise ValueError(f"quaternion norm {n!r} is not within {UNIT_TOL} of 1")
    if abs(n - 1.0) > _ALREADY_UNIT:
        arr = arr / n
    return canonical(arr)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return canonical(np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis]))


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = theta / 2
    # sin(theta/2)/theta, with its Taylor limit near zero
    small = theta < 1e-8
    scale = np.where(small, 0.5 - theta**2 / 48, np.sin(half) / np.where(small, 1.0, theta))
    return canonical(np.concatenate([np.cos(half), scale * rv], axis=-1))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = canonical(q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    theta = 2 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    return np.where(small, 2 * v, v * theta / np.where(small, 1.0, s))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; ``m`` must be a proper rotation matrix."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return canonical(q / np.linalg.norm(q))


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def _angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    rel = quat_mul(quat_conj(a), b)
    s = np.linalg.norm(rel[..., 1:], axis=-1)
    return 2 * np.arctan2(s, np.abs(rel[..., 0]))


def rotation_distance(a, b) -> float:
    """Geodesic angle in radians between two rotations, in ``[0, pi]``.

    The ``atan2`` form keeps full precision for tiny angles, where
    ``2 * arccos(|<a, b>|)`` loses about half the significant digits.
    """
    return float(_angle_between(as_rotation(a), as_rotation(b)))


def rotation_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unchecked, broadcasting version of :func:`rotation_distance`."""
    return _angle_between(a, b)


def _slerp(a: np.ndarray, b: np.ndarray, t) -> np.ndarray:
    # a * exp(t * log(a^-1 b)) along the shorter arc
    rel = canonical(quat_mul(quat_conj(a), b))
    rv = quat_to_rotvec(rel)
    t = np.asarray(t, dtype=float)[..., None]
    return canonical(quat_mul(a, quat_from_rotvec(t * rv)))


def slerp(a, b, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"slerp parameter must lie in [0, 1], got {t}")
    a = as_rotation(a)
    b = as_rotation(b)
    if t == 0.0:
        return a
    if t == 1.0:
        return b
    return _slerp(a, b, t)


def point_to_line_distance(p, seg_start, seg_end) -> float:
    """Distance from ``p`` to the infinite line through ``seg_start`` and ``seg_end``.

    A zero-length segment degrades to the point distance to ``seg_start``.
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(seg_start, dtype=float)
    e = np.asarray(seg_end, dtype=float)
    d = e - s
    n = np.linalg.norm(d)
    if n < _DEGENERATE_SEGMENT:
        return float(np.linalg.norm(p - s))
    return float(np.linalg.norm(np.cross(p - s, d)) / n)


@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _readonly(as_vec3(self.position)))
        object.__setattr__(self, "orientation", _readonly(as_rotation(self.orientation)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), IDENTITY)

    def compose(self, other: "Pose") -> "Pose":
        """Rigid-transform product ``self * other``."""
        return Pose(
            self.position + rotate(self.orientation, other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        inv = quat_conj(self.orientation)
        return Pose(-rotate(inv, self.position), inv)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.position, other.position, rtol=0, atol=atol)
            and float(_angle_between(self.orientation, other.orientation)) <= atol
        )

    def __repr__(self):
        return f"Pose(position={self.position.tolist()}, orientation={self.orientation.tolist()})"


@dataclass(frozen=True, eq=False)
class DeltaAction:
    d_pos: np.ndarray
    d_rot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_pos", _readonly(as_vec3(self.d_pos)))
        object.__setattr__(self, "d_rot", _readonly(as_rotation(self.d_rot)))

    @classmethod
    def zero(cls) -> "DeltaAction":
        return cls(np.zeros(3), IDENTITY)

    def __repr__(self):
        return f"DeltaAction(d_pos={self.d_pos.tolist()}, d_rot={self.d_rot.tolist()})"


def _clamp01(g: float) -> float:
    g = float(g)
    if not np.isfinite(g):
        raise ValueError(f"gripper value must be finite, got {g}")
    return min(1.0, max(0.0, g))


@dataclass(frozen=True, eq=False)
class RobotState:
    torso: Pose
    left: Pose
    right: Pose
    left_gripper: float = 0.0
    right_gripper: float = 0.0
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "left_gripper", _clamp01(self.left_gripper))
        object.__setattr__(self, "right_gripper", _clamp01(self.right_gripper))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    def pose(self, channel: str) -> Pose:
        return getattr(self, channel)


def apply_delta(s: Pose, d: DeltaAction) -> Pose:
    return Pose(s.position + d.d_pos, quat_mul(d.d_rot, s.orientation))


def delta_between(a: Pose, b: Pose) -> DeltaAction:
    return DeltaAction(b.position - a.position, quat_mul(b.orientation, quat_conj(a.orientation)))


def mirror_quat(q: np.ndarray) -> np.ndarray:
    """Quaternion of ``M R M`` with ``M = diag(1, -1, 1)``."""
    return canonical(np.asarray(q, dtype=float) * np.array([1.0, -1.0, 1.0, -1.0]))


def mirror_pose(p: Pose, world_from_local: Pose, target_world_from_local: Pose) -> Pose:
    """Mirror a pose across the world x-z plane and express it in another base frame.

    ``p`` is given in the base frame described by ``world_from_local``; the
    result is expressed in the base frame ``target_world_from_local``.
    """
    world = world_from_local.compose(p)
    reflected = Pose(MIRROR @ world.position, mirror_quat(world.orientation))
    return target_world_from_local.inverse().compose(reflected)


def mirror_poses(positions, orientations, world_from_local: Pose, target_world_from_local: Pose):
    """Vectorized :func:`mirror_pose` over ``(N, 3)`` positions and ``(N, 4)`` orientations."""
    positions = np.asarray(positions, dtype=float)
    orientations = np.asarray(orientations, dtype=float)
    src, dst = world_from_local, target_world_from_local
    world_p = positions @ quat_to_matrix(src.orientation).T + src.position
    world_q = quat_mul(src.orientation, orientations)
    refl_p = world_p * np.array([1.0, -1.0, 1.0])
    refl_q = mirror_quat(world_q)
    local_p = (refl_p - dst.position) @ quat_to_matrix(dst.orientation)
    local_q = canonical(quat_mul(quat_conj(dst.orientation), refl_q))
    return local_p, local_q
