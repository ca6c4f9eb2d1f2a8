import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_quats
from oracles import channel_error_scan, min_waypoints
from trajtok import _kernels
from trajtok.geometry import IDENTITY, Pose, quat_from_axis_angle, rotation_distance
from trajtok.synth import polyline_trajectory, smooth_trajectory, straight_trajectory
from trajtok.trajectory import Trajectory
from trajtok.waypoints import (
    WaypointIndexSet,
    WaypointThresholds,
    channel_error,
    extract_waypoints,
    reconstruct,
    reconstruction_errors,
    segment_within,
)

seeds = st.integers(0, 2**32 - 1)


def _traj_from_right_arm(path, quats=None):
    n = len(path)
    pos = np.zeros((n, 3, 3))
    pos[:, 2] = path
    quat = np.tile(IDENTITY, (n, 3, 1))
    if quats is not None:
        quat[:, 2] = quats
    return Trajectory(np.arange(n) / 30, pos, quat, np.zeros((n, 2)))


# ---------------------------------------------------------------- channel_error


def test_collinear_uniform_rotation_has_no_error():
    n = 9
    path = np.outer(np.arange(n), [0.01, 0.02, 0.0])
    quats = np.array([quat_from_axis_angle([0, 1, 1], 0.05 * k) for k in range(n)])
    pe, re = channel_error(path, quats, 0, n - 1)
    assert pe == pytest.approx(0.0, abs=1e-15)
    assert re == pytest.approx(0.0, abs=1e-12)


def test_single_outlier_sets_position_error():
    path = np.outer(np.arange(7), [0.1, 0, 0])
    path[3, 2] = 0.037
    pe, _ = channel_error(path, np.tile(IDENTITY, (7, 1)), 0, 6)
    assert pe == pytest.approx(0.037, abs=1e-15)


@given(seeds, st.integers(0, 8), st.integers(1, 10))
def test_channel_error_matches_per_frame_scan(seed, i, span):
    traj = smooth_trajectory(seed, n_frames=20)
    j = min(i + span, 19)
    got = channel_error(traj.positions[:, 1], traj.orientations[:, 1], i, j)
    want = channel_error_scan(traj.positions[:, 1], traj.orientations[:, 1], i, j)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_channel_error_rejects_bad_indices():
    with pytest.raises(ValueError):
        channel_error(np.zeros((5, 3)), np.tile(IDENTITY, (5, 1)), 3, 3)


# ---------------------------------------------------------------- extraction


@given(seeds)
def test_constant_velocity_line_needs_only_endpoints(seed):
    traj = straight_trajectory(seed, n_frames=30)
    assert extract_waypoints(traj).indices == (0, 29)


@given(seeds)
def test_infinite_thresholds_need_only_endpoints(seed):
    traj = smooth_trajectory(seed, n_frames=25)
    assert extract_waypoints(traj, WaypointThresholds.unbounded()).indices == (0, 24)


def test_l_shaped_path_has_three_waypoints():
    k = np.arange(20.0)
    path = np.zeros((20, 3))
    path[:, 0] = np.minimum(k, 10) * 0.02
    path[:, 1] = np.maximum(k - 10, 0) * 0.02
    traj = _traj_from_right_arm(path)
    th = WaypointThresholds()
    wps = extract_waypoints(traj, th)
    assert wps.indices == (0, 10, 19)
    assert len(wps) == min_waypoints(traj, th)


def test_gripper_step_forces_a_waypoint():
    n = 12
    traj = _traj_from_right_arm(np.zeros((n, 3)))
    grip = np.zeros((n, 2))
    grip[6:, 1] = 1.0
    traj = Trajectory(traj.timestamps, traj.positions, traj.orientations, grip)
    wps = extract_waypoints(traj).indices
    assert 5 in wps and 6 in wps


def test_accepts_state_lists():
    traj = smooth_trajectory(5, n_frames=15)
    assert extract_waypoints(traj.states()) == extract_waypoints(traj)


def test_two_frame_minimum():
    with pytest.raises(ValueError):
        extract_waypoints(smooth_trajectory(1, n_frames=1))


@given(seeds, st.integers(4, 14))
def test_minimal_against_exhaustive_search(seed, n):
    traj = polyline_trajectory(seed, n_frames=n)
    th = WaypointThresholds()
    assert len(extract_waypoints(traj, th)) == min_waypoints(traj, th)


@given(seeds)
def test_every_segment_is_within_thresholds(seed):
    traj = smooth_trajectory(seed, n_frames=40)
    th = WaypointThresholds()
    wps = extract_waypoints(traj, th)
    assert all(segment_within(traj, i, j, th) for i, j in wps.segments())


@given(seeds, st.floats(1.0, 4.0))
def test_looser_thresholds_never_add_waypoints(seed, factor):
    traj = smooth_trajectory(seed, n_frames=40)
    tight = WaypointThresholds(0.005, 0.03, 0.1)
    loose = WaypointThresholds(0.005 * factor, 0.03 * factor, 0.1 * factor)
    assert len(extract_waypoints(traj, loose)) <= len(extract_waypoints(traj, tight))


@given(seeds)
def test_kernel_feasibility_matches_numpy_reference(seed):
    rng = np.random.default_rng(seed)
    traj = smooth_trajectory(seed, n_frames=25)
    th = WaypointThresholds(0.004, 0.02, 0.1)
    for _ in range(20):
        i, j = sorted(rng.choice(25, 2, replace=False))
        ok, _ = _kernels.segment_cost(traj.positions, traj.orientations, traj.grippers, i, j, th.pos_eps, th.rot_eps, th.grip_eps)
        assert ok == segment_within(traj, i, j, th)


def test_extraction_is_deterministic():
    traj = smooth_trajectory(11, n_frames=40)
    assert extract_waypoints(traj) == extract_waypoints(traj)


# ---------------------------------------------------------------- reconstruction


def test_reconstruct_with_all_frames_is_identity():
    traj = smooth_trajectory(2, n_frames=8)
    poses = [Pose(traj.positions[k, 1], traj.orientations[k, 1]) for k in range(8)]
    out = reconstruct(8, range(8), poses)
    for a, b in zip(out, poses):
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.orientation, b.orientation)


def test_reconstruct_midpoint():
    a = Pose([0, 0, 0], IDENTITY)
    b = Pose([2, 0, 0], quat_from_axis_angle([0, 0, 1], 0.8))
    mid = reconstruct(3, [0, 2], [a, b])[1]
    np.testing.assert_allclose(mid.position, [1, 0, 0])
    assert rotation_distance(mid.orientation, quat_from_axis_angle([0, 0, 1], 0.4)) < 1e-12


@given(seeds)
def test_reconstruction_error_within_thresholds(seed):
    traj = smooth_trajectory(seed, n_frames=40)
    th = WaypointThresholds()
    pe, re = reconstruction_errors(traj, extract_waypoints(traj, th))
    assert pe.max() <= th.pos_eps
    assert re.max() <= th.rot_eps


@given(seeds)
def test_reconstruction_errors_match_scan(seed):
    traj = smooth_trajectory(seed, n_frames=20)
    wps = extract_waypoints(traj, WaypointThresholds(0.003, 0.02, 0.1))
    pe, re = reconstruction_errors(traj, wps)
    for c in range(3):
        for i, j in wps.segments():
            want = channel_error_scan(traj.positions[:, c], traj.orientations[:, c], i, j)
            np.testing.assert_allclose((pe[i + 1 : j, c].max(initial=0), re[i + 1 : j, c].max(initial=0)), want, atol=1e-12)
    np.testing.assert_allclose(pe[list(wps)], 0, atol=0)


def test_index_set_validation():
    with pytest.raises(ValueError):
        WaypointIndexSet((1, 3))
    with pytest.raises(ValueError):
        WaypointIndexSet((0, 3, 3))
    with pytest.raises(ValueError):
        WaypointIndexSet((0,))


def test_thresholds_must_be_positive():
    with pytest.raises(ValueError):
        WaypointThresholds(pos_eps=0)
    with pytest.raises(ValueError):
        WaypointThresholds(rot_eps=float("nan"))


def test_synchronized_index_set_serves_all_channels():
    # only the torso bends; the shared set must still carry the corner for every channel
    k = np.arange(15.0)
    pos = np.zeros((15, 3, 3))
    pos[:, 0, 0] = np.minimum(k, 7) * 0.03
    pos[:, 0, 1] = np.maximum(k - 7, 0) * 0.03
    traj = Trajectory(k / 30, pos, np.tile(IDENTITY, (15, 3, 1)), np.zeros((15, 2)))
    assert extract_waypoints(traj).indices == (0, 7, 14)
