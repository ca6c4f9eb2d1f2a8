import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from conftest import random_quats
from oracles import dtw_brute, iou_pixels, nsr_count
from trajtok import config
from trajtok.geometry import IDENTITY, quat_from_axis_angle, rotation_distance
from trajtok.rewards import (
    ACTION_SLOTS,
    DEFAULT_ACTION_DECAY,
    GRPO_BETA,
    GRPO_EPS_HIGH,
    GRPO_EPS_LOW,
    ActionVector8,
    BBox,
    FixedJudge,
    JudgeError,
    JudgeRequest,
    MockJudge,
    RewardWeights,
    dtw,
    filter_groups,
    grpo_advantages,
    grpo_objective,
    nsr,
    r_action,
    r_bbox,
    r_consistency,
    r_format,
    r_keypoint,
    r_waypoint,
    score_sample,
    total_reward,
)

seeds = st.integers(0, 2**32 - 1)

FULL_OUTPUT = (
    "<subtask>grasp the cup</subtask>\n"
    "<reasoning>the cup is left of the bowl, move the right arm forward</reasoning>\n"
    "<bbox>[0.1, 0.2, 0.35, 0.5]</bbox>\n"
    "<keypoints>[[0.5, 0.5], [0.52, 0.48]]</keypoints>\n"
    "<waypoints><left>[[0.1, 0.1], [0.2, 0.25]]</left><right>[[0.6, 0.4], [0.55, 0.3]]</right></waypoints>\n"
    "<action>[12, 40, 3, 7, 255, 9, 81, 0]</action>"
)
PARTIAL_OUTPUT = "<subtask>lift the cup</subtask> <action>[1, 2, 3, 4, 5, 6, 7, 8]</action>"


def _grid_box(rng, res=20):
    x = np.sort(rng.choice(res + 1, 2, replace=False)) / res
    y = np.sort(rng.choice(res + 1, 2, replace=False)) / res
    return (x[0], y[0], x[1], y[1])


def _random_action(rng, scale=0.05):
    v = []
    for slot in ACTION_SLOTS:
        if slot.endswith("xyz"):
            v.append(rng.normal(0, scale, 3))
        elif slot.endswith("rot"):
            v.append(random_quats(rng))
        else:
            v.append(float(rng.uniform()))
    return ActionVector8(*v)


# ---------------------------------------------------------------- r_bbox


def test_bbox_identical():
    assert r_bbox((0.1, 0.1, 0.4, 0.6), (0.1, 0.1, 0.4, 0.6)) == 1.0


def test_bbox_disjoint():
    assert r_bbox((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


def test_bbox_half_overlap():
    assert r_bbox((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


@given(seeds)
def test_bbox_matches_pixel_count(seed):
    rng = np.random.default_rng(seed)
    a, b = _grid_box(rng), _grid_box(rng)
    assert r_bbox(a, b) == pytest.approx(iou_pixels(a, b, 80), abs=1e-10)
    assert r_bbox(a, b) == r_bbox(b, a)


@given(seeds, st.floats(0, 1), st.floats(0, 1))
def test_bbox_improves_as_prediction_moves_toward_truth(seed, s1, s2):
    rng = np.random.default_rng(seed)
    pred, gt = np.array(_grid_box(rng)), np.array(_grid_box(rng))
    lo, hi = sorted((s1, s2))
    near = (1 - hi) * pred + hi * gt
    far = (1 - lo) * pred + lo * gt
    assert r_bbox(near, gt) >= r_bbox(far, gt) - 1e-12


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(0.5, 0, 0.1, 1)
    with pytest.raises(ValueError):
        r_bbox((0, 0, 1), (0, 0, 1, 1))


def test_zero_area_boxes_score_zero():
    assert r_bbox((0.2, 0.2, 0.2, 0.2), (0.2, 0.2, 0.2, 0.2)) == 0.0


# ---------------------------------------------------------------- r_keypoint


def test_keypoints_all_inside():
    assert r_keypoint([[0.2, 0.2], [0.3, 0.4]], (0.1, 0.1, 0.5, 0.5)) == 1.0


def test_keypoints_none_inside():
    assert r_keypoint([[0.9, 0.9]], (0.1, 0.1, 0.5, 0.5)) == 0.0


def test_two_of_four_keypoints():
    pts = [[0.2, 0.2], [0.5, 0.5], [0.6, 0.2], [0.05, 0.3]]
    assert r_keypoint(pts, (0.1, 0.1, 0.5, 0.5)) == 0.5


@given(seeds)
def test_keypoints_match_membership_count(seed):
    rng = np.random.default_rng(seed)
    box = _grid_box(rng)
    pts = rng.uniform(0, 1, (int(rng.integers(1, 12)), 2))
    want = sum(box[0] <= x <= box[2] and box[1] <= y <= box[3] for x, y in pts) / len(pts)
    assert r_keypoint(pts, box) == pytest.approx(want, abs=1e-15)


def test_keypoints_need_at_least_one():
    with pytest.raises(ValueError):
        r_keypoint([], (0, 0, 1, 1))


# ---------------------------------------------------------------- dtw


def test_dtw_identical_is_zero():
    a = [[0.1, 0.2], [0.3, 0.3], [0.5, 0.1]]
    assert dtw(a, a) == 0.0


def test_dtw_single_points():
    assert dtw([[0.0, 0.0]], [[0.3, 0.4]]) == pytest.approx(0.5)


@given(seeds)
def test_dtw_matches_exhaustive_alignment(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 1, (3, 2)), rng.uniform(0, 1, (4, 2))
    assert dtw(a, b) == pytest.approx(dtw_brute(a, b), abs=1e-10)


@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_dtw_symmetric_and_non_negative(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 1, (n, 2)), rng.uniform(0, 1, (m, 2))
    assert dtw(a, b) == pytest.approx(dtw(b, a), abs=1e-12)
    assert dtw(a, b) >= 0


@given(seeds, st.integers(2, 6))
def test_dtw_zero_exactly_when_runs_collapse_to_same_sequence(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (n, 2))
    reps = rng.integers(1, 4, n)
    stretched = np.repeat(a, reps, axis=0)
    assert dtw(a, stretched) == 0.0
    b = a.copy()
    b[rng.integers(n)] += 0.01
    assert dtw(a, b) > 0.0


# ---------------------------------------------------------------- r_waypoint


def test_waypoint_identical():
    w = {"left": [[0.1, 0.1], [0.2, 0.3]], "right": [[0.7, 0.2], [0.6, 0.6]]}
    assert r_waypoint(w, w) == 1.0


def test_waypoint_far_prediction_scores_zero():
    gt = [[[0.0, 0.0], [0.0, 0.0]]]
    pred = [[[1.0, 1.0], [1.0, 0.8]]]
    assert r_waypoint(pred, gt) == 0.0


def test_waypoint_start_offset_hand_evaluation():
    gt = [[0.2, 0.2], [0.4, 0.4], [0.6, 0.6]]
    pred = [[0.3, 0.2], [0.4, 0.4], [0.6, 0.6]]
    d = dtw_brute(np.array(gt), np.array(pred))
    r_goal = 0.5 * ((1 - 0.01) + 1)
    want = 0.5 * r_goal + 0.5 * (1 - d)
    assert r_waypoint([pred], [gt]) == pytest.approx(want, abs=1e-12)


@given(seeds)
def test_waypoint_term_by_term(seed):
    rng = np.random.default_rng(seed)
    arms = ("left", "right")
    gt = {k: rng.uniform(0, 1, (int(rng.integers(1, 5)), 2)) for k in arms}
    pred = {k: rng.uniform(0, 1, (int(rng.integers(1, 5)), 2)) for k in arms}
    vals = []
    for k in arms:
        g, p = gt[k], pred[k]
        goal = 0.5 * (max(0, 1 - np.sum((g[0] - p[0]) ** 2)) + max(0, 1 - np.sum((g[-1] - p[-1]) ** 2)))
        vals.append(0.5 * goal + 0.5 * max(0, 1 - dtw_brute(g, p)))
    got = r_waypoint(pred, gt)
    assert got == pytest.approx(np.mean(vals), abs=1e-10)
    assert 0 <= got <= 1


def test_waypoint_arm_mismatch():
    with pytest.raises(ValueError):
        r_waypoint({"left": [[0, 0]]}, {"right": [[0, 0]]})


def test_waypoints_must_be_normalized():
    with pytest.raises(ValueError):
        r_waypoint([[[2.0, 0.0]]], [[[0.0, 0.0]]])


# ---------------------------------------------------------------- r_action


def test_action_identical():
    a = _random_action(np.random.default_rng(0))
    assert r_action(a, a) == pytest.approx(1.0, abs=1e-15)


@given(seeds, st.integers(0, 7), st.floats(0.0, 0.5))
def test_single_component_error(seed, slot, e):
    gt = _random_action(np.random.default_rng(seed))
    d = gt.to_dict()
    name = ACTION_SLOTS[slot]
    if name.endswith("xyz"):
        d[name] = (np.array(d[name]) + [e, 0, 0]).tolist()
    elif name.endswith("rot"):
        from trajtok.geometry import quat_mul

        d[name] = quat_mul(quat_from_axis_angle([0, 0, 1], e), d[name]).tolist()
    else:
        assume(d[name] + e <= 1.0)
        d[name] = d[name] + e
    w = 1 / 8
    k = DEFAULT_ACTION_DECAY[slot]
    assert r_action(d, gt) == pytest.approx(1 - w * (1 - math.exp(-k * e)), abs=1e-10)


@given(seeds)
def test_action_term_by_term(seed):
    rng = np.random.default_rng(seed)
    p, g = _random_action(rng), _random_action(rng)
    total = 0.0
    for slot, k in zip(ACTION_SLOTS, (10, 2, 10, 2, 5, 10, 2, 5)):
        a, b = getattr(p, slot), getattr(g, slot)
        if slot.endswith("xyz"):
            f = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
        elif slot.endswith("rot"):
            dot = abs(sum(x * y for x, y in zip(a, b)))
            f = 2 * math.acos(min(1.0, dot))
        else:
            f = abs(a - b)
        total += math.exp(-k * f) / 8
    assert r_action(p, g) == pytest.approx(total, abs=1e-7)
    assert 0 <= r_action(p, g) <= 1


@given(seeds, st.integers(0, 7))
def test_action_strictly_decreasing_in_each_error(seed, slot):
    gt = _random_action(np.random.default_rng(seed))
    name = ACTION_SLOTS[slot]
    scores = []
    for e in (0.0, 0.05, 0.1, 0.2):
        d = gt.to_dict()
        if name.endswith("xyz"):
            d[name] = (np.array(d[name]) + [0, e, 0]).tolist()
        elif name.endswith("rot"):
            from trajtok.geometry import quat_mul

            d[name] = quat_mul(quat_from_axis_angle([1, 0, 0], e), d[name]).tolist()
        else:
            d[name] = d[name] + e if d[name] + 0.2 <= 1 else d[name] - e
        scores.append(r_action(d, gt))
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_action_validation():
    bad = _random_action(np.random.default_rng(0)).to_dict()
    bad["left_grip"] = 1.5
    with pytest.raises(ValueError):
        ActionVector8.of(bad)


# ---------------------------------------------------------------- r_format


def test_format_conforming_outputs():
    assert r_format(FULL_OUTPUT, "full") == 1.0
    assert r_format(PARTIAL_OUTPUT, "partial") == 1.0


def test_format_truncated():
    assert r_format(FULL_OUTPUT[:-5], "full") == 0.0
    assert r_format(PARTIAL_OUTPUT[:30], "partial") == 0.0


def test_format_reordered_sections():
    parts = FULL_OUTPUT.split("\n")
    swapped = "\n".join([parts[1], parts[0]] + parts[2:])
    assert r_format(swapped, "full") == 0.0


def test_format_optional_visual_sections():
    no_box = "\n".join(l for l in FULL_OUTPUT.split("\n") if not l.startswith(("<bbox>", "<keypoints>")))
    assert r_format(no_box, "full") == 1.0


def test_format_custom_template():
    assert r_format("<a>x</a>", r"<a>\w+</a>") == 1.0
    with pytest.raises(ValueError):
        r_format("x", "(")


# ---------------------------------------------------------------- consistency


def _request(**kw):
    base = dict(image_ref="img0", instruction="pick", gt_text="move left then up", parsed_output="move left then up")
    base.update(kw)
    return JudgeRequest(**base)


def test_consistency_perfect_judge():
    assert r_consistency(FixedJudge(1.0, 1.0), _request()) == 1.0


def test_consistency_text_only():
    assert r_consistency(FixedJudge(0.0, 1.0), _request()) == 0.5


def test_mock_judge_on_matching_fixture():
    box = BBox(0.1, 0.1, 0.4, 0.4)
    assert r_consistency(MockJudge(), _request(pred_bbox=box, gt_bbox=box)) == 1.0


def test_mock_judge_penalizes_wrong_direction():
    r = r_consistency(MockJudge(), _request(parsed_output="move right then up"))
    assert 0.0 < r < 1.0


def test_judge_failures_surface_as_judge_error():
    class Broken:
        concurrent_safe = True

        def judge(self, request):
            raise TimeoutError("no answer")

    with pytest.raises(JudgeError):
        r_consistency(Broken(), _request())
    with pytest.raises(JudgeError):
        FixedJudge(1.5, 0.0).judge(_request())


# ---------------------------------------------------------------- total reward


def test_total_all_ones():
    comps = {k: 1.0 for k in ("bbox", "keypoint", "waypoint", "consistency", "action", "format")}
    assert total_reward(comps, "full") == pytest.approx(1.0)
    assert total_reward(comps, "partial") == pytest.approx(1.0)


def test_partial_mode_ignores_visual_components():
    comps = {"bbox": 0.0, "keypoint": 0.0, "waypoint": 0.0, "action": 0.6, "format": 1.0}
    assert total_reward(comps, "partial") == pytest.approx(0.1 * 1.0 + 0.9 * 0.6)


def test_full_mode_hand_computation():
    comps = {"bbox": 0.5, "keypoint": 1.0, "waypoint": 0.25, "consistency": 0.75, "action": 0.5, "format": 0.0}
    assert total_reward(comps, "full") == pytest.approx(0.9 * (0.5 + 1.0 + 0.25 + 0.75 + 0.5) / 5, abs=1e-15)


def test_missing_required_components():
    with pytest.raises(ValueError, match="waypoint"):
        total_reward({"action": 1.0, "format": 1.0}, "full")
    with pytest.raises(ValueError):
        total_reward({"format": 1.0}, "partial")


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        RewardWeights(action_weights=(0.2,) * 8)


# ---------------------------------------------------------------- GRPO


def test_advantages_zero_variance():
    np.testing.assert_array_equal(grpo_advantages([0.7, 0.7, 0.7]), [0, 0, 0])


def test_advantages_one_two_three():
    np.testing.assert_allclose(grpo_advantages([1, 2, 3]), [-1.224744871391589, 0, 1.224744871391589], atol=1e-12)


@given(seeds, st.integers(2, 16))
def test_advantages_are_z_scores(seed, n):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0, 1, n)
    assume(r.std() > 1e-6)
    a = grpo_advantages(r)
    assert abs(a.mean()) <= 1e-12
    assert abs(a.std() - 1.0) <= 1e-12
    c, s = rng.uniform(0.1, 10), rng.uniform(-5, 5)
    np.testing.assert_allclose(grpo_advantages(c * r + s), a, atol=1e-9)


def test_objective_neutral_ratios():
    a = grpo_advantages([0.1, 0.4, 0.9, 0.3])
    assert grpo_objective(np.ones(4), a, np.zeros(4)) == pytest.approx(0.0, abs=1e-15)


def test_objective_defaults_from_config():
    g = config.load()["rewards"]["grpo"]
    assert (g["beta"], g["eps_low"], g["eps_high"]) == (0.04, 0.2, 0.28) == (GRPO_BETA, GRPO_EPS_LOW, GRPO_EPS_HIGH)
    assert g["group_size"] == 8


def test_objective_two_sample_hand_case():
    ratios, adv, kl = [1.5, 0.5], [1.0, -1.0], [0.1, 0.3]
    # clipped: min(1.5*1, 1.28*1) = 1.28 ; min(0.5*-1, 0.8*-1) = -0.8
    want = ((1.28 - 0.04 * 0.1) + (-0.8 - 0.04 * 0.3)) / 2
    assert grpo_objective(ratios, adv, kl) == pytest.approx(want, abs=1e-15)


@given(seeds)
def test_objective_unclipped_limit(seed):
    rng = np.random.default_rng(seed)
    r, a, k = rng.uniform(0.2, 3, 8), rng.normal(size=8), rng.uniform(0, 1, 8)
    want = np.mean(r * a - 0.04 * k)
    assert grpo_objective(r, a, k, 0.04, (math.inf, math.inf)) == pytest.approx(want, abs=1e-12)


def test_filter_groups():
    groups = [[1, 1, 1], [0, 1, 0, 1], [0.2, 0.3], [0.5]]
    assert filter_groups(groups) == [1, 2]
    assert filter_groups(groups, mean_range=(0.3, 1.0)) == [1]


# ---------------------------------------------------------------- NSR


def test_nsr_all_better():
    assert nsr([(2, 1), (3, 0)]) == 1.0


def test_nsr_all_ties():
    assert nsr([(1, 1), (0.5, 0.5)]) == 0.0


def test_nsr_six_two_two():
    pairs = [(1, 0)] * 6 + [(0, 1)] * 2 + [(1, 1)] * 2
    assert nsr(pairs) == pytest.approx(0.4)


@given(seeds)
def test_nsr_matches_count_and_is_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, 3, (int(rng.integers(1, 30)), 2)).tolist()
    assert nsr(pairs) == nsr_count(pairs)
    assert nsr([(b, a) for a, b in pairs]) == -nsr(pairs)


# ---------------------------------------------------------------- sample scoring


def _record(rng):
    a = _random_action(rng).to_dict()
    return {
        "id": "s1",
        "output": FULL_OUTPUT,
        "bbox": [0.1, 0.2, 0.35, 0.5],
        "keypoints": [[0.2, 0.3]],
        "waypoints": {"left": [[0.1, 0.1], [0.2, 0.25]], "right": [[0.6, 0.4], [0.55, 0.3]]},
        "action": a,
        "text": "move left",
    }


def test_identical_prediction_scores_one():
    rec = _record(np.random.default_rng(0))
    gt = dict(rec, place_region=[0.1, 0.2, 0.4, 0.5])
    rep = score_sample(rec, gt, "full", judge=MockJudge())
    assert rep.total == pytest.approx(1.0, abs=1e-12)
    assert set(rep.components) == {"bbox", "keypoint", "waypoint", "action", "format", "consistency"}


def test_partial_report_has_no_visual_components():
    rec = _record(np.random.default_rng(1))
    rec["output"] = PARTIAL_OUTPUT
    rep = score_sample(rec, dict(rec, place_region=[0, 0, 1, 1]), "partial")
    assert not {"bbox", "keypoint", "waypoint"} & set(rep.components)
    d = rep.to_dict()
    assert d["bbox"] is None and d["waypoint"] is None


@given(seeds)
def test_components_stay_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    pred, gt = _record(rng), _record(rng)
    pred["bbox"], gt["bbox"] = list(_grid_box(rng)), list(_grid_box(rng))
    pred["waypoints"] = {k: rng.uniform(0, 1, (3, 2)).tolist() for k in ("left", "right")}
    gt["place_region"] = list(_grid_box(rng))
    rep = score_sample(pred, gt, "full", judge=MockJudge())
    assert all(0.0 <= v <= 1.0 for v in rep.components.values())
    assert 0.0 <= rep.total <= 1.0
