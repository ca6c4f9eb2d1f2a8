"""Reward components, aggregation and GRPO arithmetic.

All reward functions are pure. Component rewards live in ``[0, 1]``; the
aggregate is ``format_weight * r_format + (1 - format_weight) * mean(others)``
over the components present for the reasoning mode.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .geometry import UNIT_TOL, rotation_distance

MODES = ("full", "partial")
COMPONENTS = ("bbox", "keypoint", "waypoint", "consistency", "action", "format")
VISUAL = ("bbox", "keypoint", "waypoint")
# required per mode; bbox is pick-phase only and keypoint place-phase only, so both stay optional
REQUIRED = {"full": ("waypoint", "action", "format"), "partial": ("action", "format")}
ACTION_SLOTS = (
    "torso_xyz",
    "torso_rot",
    "left_xyz",
    "left_rot",
    "left_grip",
    "right_xyz",
    "right_rot",
    "right_grip",
)
_ACTION_KIND = ("xyz", "rot", "xyz", "rot", "grip", "xyz", "rot", "grip")
DEFAULT_ACTION_DECAY = (10.0, 2.0, 10.0, 2.0, 5.0, 10.0, 2.0, 5.0)
ADVANTAGE_EPS = 1e-8

# Table-1 training defaults
GRPO_BETA = 0.04
GRPO_EPS_LOW = 0.2
GRPO_EPS_HIGH = 0.28
GRPO_GROUP_SIZE = 8


# ----------------------------------------------------------------------------
# geometry primitives


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = [float(v) for v in (self.x_min, self.y_min, self.x_max, self.y_max)]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"bbox has non-finite coordinates: {vals}")
        if vals[0] > vals[2] or vals[1] > vals[3]:
            raise ValueError(f"bbox needs x_min <= x_max and y_min <= y_max, got {vals}")
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), vals):
            object.__setattr__(self, name, v)

    @classmethod
    def of(cls, value) -> "BBox":
        if isinstance(value, BBox):
            return value
        if isinstance(value, Mapping):
            return cls(value["x_min"], value["y_min"], value["x_max"], value["y_max"])
        v = list(value)
        if len(v) != 4:
            raise ValueError(f"bbox needs 4 numbers, got {len(v)}")
        return cls(*v)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, points) -> np.ndarray:
        """Boundary-inclusive membership for an ``(N, 2)`` array."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return (p[:, 0] >= self.x_min) & (p[:, 0] <= self.x_max) & (p[:, 1] >= self.y_min) & (p[:, 1] <= self.y_max)

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def _points(seq, name: str = "points", unit: bool = True) -> np.ndarray:
    p = np.asarray(seq, dtype=float)
    if p.size == 0:
        return p.reshape(0, 2)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"{name} must be a sequence of (u, v) pairs, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contain non-finite values")
    if unit and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError(f"{name} must be normalized to [0, 1]")
    return p


# ----------------------------------------------------------------------------
# visual rewards


def r_bbox(pred, gt) -> float:
    """Intersection over union; 0 when the union has zero area."""
    a, b = BBox.of(pred), BBox.of(gt)
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def r_keypoint(preds, region) -> float:
    """Fraction of predicted keypoints inside the region (boundary counts as inside)."""
    p = _points(preds, "keypoints", unit=False)
    if len(p) == 0:
        raise ValueError("r_keypoint needs at least one predicted keypoint")
    return float(BBox.of(region).contains(p).sum()) / len(p)


def dtw(a, b) -> float:
    """Dynamic time warping with Euclidean point cost, divided by the alignment length.

    Among alignments of equal total cost the longest one is used, so the value
    is the smallest achievable mean per-pair distance for the optimal cost.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if len(x) == 0 or len(y) == 0:
        raise ValueError("dtw needs two non-empty sequences")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"point dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    d = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(-1))
    n, m = d.shape
    cost = np.full((n, m), np.inf)
    length = np.zeros((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                cost[0, 0], length[0, 0] = d[0, 0], 1
                continue
            best_c, best_l = np.inf, 0
            for pi, pj in ((i - 1, j - 1), (i - 1, j), (i, j - 1)):
                if pi < 0 or pj < 0:
                    continue
                c, l = cost[pi, pj], length[pi, pj]
                if c < best_c or (c == best_c and l > best_l):
                    best_c, best_l = c, l
            cost[i, j] = best_c + d[i, j]
            length[i, j] = best_l + 1
    return float(cost[-1, -1] / length[-1, -1])


def _arms(traj) -> list[np.ndarray]:
    if isinstance(traj, Mapping):
        return [traj[k] for k in sorted(traj)]
    seq = list(traj)
    # a single (n, 2) trajectory is a one-arm input
    if seq and np.asarray(seq[0], dtype=float).ndim == 1:
        return [seq]
    return seq


def r_waypoint(pred, gt, split: tuple[float, float] = (0.5, 0.5)) -> float:
    """Endpoint (goal) plus DTW (trajectory) reward, averaged over arms.

    ``pred``/``gt`` are dicts ``{arm: [(u, v), ...]}`` or lists of per-arm
    sequences, all in normalized image coordinates.
    """
    if isinstance(pred, Mapping) and isinstance(gt, Mapping) and set(pred) != set(gt):
        raise ValueError(f"arm sets differ: {sorted(pred)} vs {sorted(gt)}")
    P, G = _arms(pred), _arms(gt)
    if len(P) != len(G) or not P:
        raise ValueError(f"arm counts differ or are zero: {len(P)} vs {len(G)}")
    out = []
    for p_raw, g_raw in zip(P, G):
        p, g = _points(p_raw, "predicted waypoints"), _points(g_raw, "ground-truth waypoints")
        if len(p) == 0 or len(g) == 0:
            raise ValueError("each arm needs at least one waypoint")
        goal = 0.5 * (max(0.0, 1.0 - float(((g[0] - p[0]) ** 2).sum())) + max(0.0, 1.0 - float(((g[-1] - p[-1]) ** 2).sum())))
        traj = max(0.0, 1.0 - dtw(g, p))
        out.append(split[0] * goal + split[1] * traj)
    return float(np.clip(np.mean(out), 0.0, 1.0))


# ----------------------------------------------------------------------------
# action reward


@dataclass(frozen=True, eq=False)
class ActionVector8:
    """Final-timestep action in the 8-slot layout (translations in m, unit quaternions, grippers in [0, 1])."""

    torso_xyz: np.ndarray
    torso_rot: np.ndarray
    left_xyz: np.ndarray
    left_rot: np.ndarray
    left_grip: float
    right_xyz: np.ndarray
    right_rot: np.ndarray
    right_grip: float

    def __post_init__(self):
        for slot, kind in zip(ACTION_SLOTS, _ACTION_KIND):
            v = getattr(self, slot)
            if kind == "grip":
                g = float(np.asarray(v, dtype=float).reshape(()))
                if not 0.0 <= g <= 1.0:
                    raise ValueError(f"{slot} must be in [0, 1], got {g}")
                object.__setattr__(self, slot, g)
                continue
            arr = np.array(v, dtype=float).reshape(-1)
            want = 3 if kind == "xyz" else 4
            if arr.shape != (want,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{slot} must be {want} finite numbers")
            if kind == "rot" and abs(np.linalg.norm(arr) - 1.0) > UNIT_TOL:
                raise ValueError(f"{slot} must be a unit quaternion, norm is {np.linalg.norm(arr)!r}")
            arr.setflags(write=False)
            object.__setattr__(self, slot, arr)

    @classmethod
    def of(cls, value) -> "ActionVector8":
        if isinstance(value, ActionVector8):
            return value
        if isinstance(value, Mapping):
            missing = [s for s in ACTION_SLOTS if s not in value]
            if missing:
                raise ValueError(f"action is missing slots {missing}")
            return cls(*(value[s] for s in ACTION_SLOTS))
        v = list(value)
        if len(v) != 8:
            raise ValueError(f"action needs 8 components, got {len(v)}")
        return cls(*v)

    def to_dict(self) -> dict:
        return {s: (getattr(self, s) if k == "grip" else getattr(self, s).tolist()) for s, k in zip(ACTION_SLOTS, _ACTION_KIND)}

    def errors(self, other: "ActionVector8") -> np.ndarray:
        """Per-slot errors: Euclidean for translations, geodesic angle for rotations, absolute for grippers."""
        out = np.empty(8)
        for i, (slot, kind) in enumerate(zip(ACTION_SLOTS, _ACTION_KIND)):
            a, b = getattr(self, slot), getattr(other, slot)
            if kind == "xyz":
                out[i] = float(np.linalg.norm(a - b))
            elif kind == "rot":
                out[i] = rotation_distance(a, b)
            else:
                out[i] = abs(a - b)
        return out


@dataclass(frozen=True)
class RewardWeights:
    waypoint_split: tuple[float, float] = (0.5, 0.5)
    consistency_split: tuple[float, float] = (0.5, 0.5)
    action_weights: tuple[float, ...] = (0.125,) * 8
    action_decay: tuple[float, ...] = DEFAULT_ACTION_DECAY
    format_weight: float = 0.1

    def __post_init__(self):
        for name in ("waypoint_split", "consistency_split", "action_weights", "action_decay"):
            v = tuple(float(x) for x in getattr(self, name))
            if not all(math.isfinite(x) and x >= 0 for x in v):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)
        if len(self.waypoint_split) != 2 or len(self.consistency_split) != 2:
            raise ValueError("waypoint_split and consistency_split take two weights")
        if len(self.action_weights) != 8 or len(self.action_decay) != 8:
            raise ValueError("action_weights and action_decay take eight values")
        for name in ("waypoint_split", "consistency_split", "action_weights"):
            if abs(sum(getattr(self, name)) - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1, got {sum(getattr(self, name))}")
        if not 0.0 <= self.format_weight <= 1.0:
            raise ValueError(f"format_weight must be in [0, 1], got {self.format_weight}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RewardWeights":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown reward weight fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f: (list(v) if isinstance(v, tuple) else v) for f, v in self.__dict__.items()}


def r_action(pred, gt, weights: RewardWeights | None = None) -> float:
    w = weights or RewardWeights()
    f = ActionVector8.of(gt).errors(ActionVector8.of(pred))
    r = float(np.dot(w.action_weights, np.exp(-np.asarray(w.action_decay) * f)))
    return min(1.0, max(0.0, r))


# ----------------------------------------------------------------------------
# format reward

_TEXT = r"[^<>]+?"
_NUM = r"-?\d+(?:\.\d+)?"
_PAIR = rf"\[\s*{_NUM}\s*,\s*{_NUM}\s*\]"
_PAIRS = rf"\[\s*{_PAIR}(?:\s*,\s*{_PAIR})*\s*\]"
_BOX = rf"\[\s*{_NUM}(?:\s*,\s*{_NUM}){{3}}\s*\]"
_INTS = r"\[\s*\d+(?:\s*,\s*\d+)*\s*\]"

# Section order is fixed: subtask, reasoning, [bbox], [keypoints], waypoints, action.
FORMAT_TEMPLATES = {
    "full": (
        rf"\s*<subtask>{_TEXT}</subtask>\s*"
        rf"<reasoning>{_TEXT}</reasoning>\s*"
        rf"(?:<bbox>\s*{_BOX}\s*</bbox>\s*)?"
        rf"(?:<keypoints>\s*{_PAIRS}\s*</keypoints>\s*)?"
        rf"<waypoints>\s*<left>\s*{_PAIRS}\s*</left>\s*<right>\s*{_PAIRS}\s*</right>\s*</waypoints>\s*"
        rf"<action>\s*{_INTS}\s*</action>\s*"
    ),
    "partial": rf"\s*<subtask>{_TEXT}</subtask>\s*<action>\s*{_INTS}\s*</action>\s*",
}


def compile_template(template) -> re.Pattern:
    """A bundled template name, a regex string or a compiled pattern. Bad regexes raise ValueError."""
    if isinstance(template, re.Pattern):
        return template
    src = FORMAT_TEMPLATES.get(template, template)
    try:
        return re.compile(src, re.DOTALL)
    except re.error as e:
        raise ValueError(f"invalid format template {template!r}: {e}") from None


def r_format(output: str, template="full") -> float:
    return 1.0 if compile_template(template).fullmatch(output) else 0.0


# ----------------------------------------------------------------------------
# consistency judge


class JudgeError(RuntimeError):
    """The judge failed or returned something outside its contract."""


@dataclass(frozen=True)
class JudgeRequest:
    image_ref: str
    instruction: str
    gt_text: str
    parsed_output: str
    timeout: float = 30.0
    pred_bbox: BBox | None = None
    gt_bbox: BBox | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("pred_bbox", "gt_bbox"):
            d[k] = None if d[k] is None else d[k].to_list()
        return d


@dataclass(frozen=True)
class JudgeResponse:
    text: float
    text_spatial: float

    def __post_init__(self):
        for name in ("text", "text_spatial"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 <= float(v) <= 1.0:
                raise JudgeError(f"judge score {name}={v!r} is outside [0, 1]")
            object.__setattr__(self, name, float(v))


@runtime_checkable
class ConsistencyJudge(Protocol):
    """Synchronous judge: one request in, one response out, or JudgeError.

    Implementations set ``concurrent_safe = False`` if requests must be sent
    one at a time; the batch scorer then serializes calls. No retries happen
    on the caller side.
    """

    concurrent_safe: bool

    def judge(self, request: JudgeRequest) -> JudgeResponse: ...


_WORD = re.compile(r"[a-z0-9]+")
_DIRECTIONS = {
    "left": "left",
    "right": "right",
    "up": "up",
    "upward": "up",
    "upwards": "up",
    "down": "down",
    "downward": "down",
    "downwards": "down",
    "forward": "forward",
    "forwards": "forward",
    "backward": "backward",
    "backwards": "backward",
    "back": "backward",
}


def _tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def token_f1(pred: str, ref: str) -> float:
    """Bag-of-words F1; two empty texts agree perfectly."""
    p, r = _tokens(pred), _tokens(ref)
    if not p and not r:
        return 1.0
    if not p or not r:
        return 0.0
    common = sum(min(p.count(t), r.count(t)) for t in set(p))
    if common == 0:
        return 0.0
    prec, rec = common / len(p), common / len(r)
    return 2 * prec * rec / (prec + rec)


class MockJudge:
    """Deterministic stand-in for a VLM judge.

    text: bag-of-words F1 between parsed output and ground-truth text.
    text_spatial: Jaccard agreement of direction words (left, up, forward, ...)
    times the IoU of predicted and ground-truth boxes when both are given.
    """

    concurrent_safe = True

    def judge(self, request: JudgeRequest) -> JudgeResponse:
        text = token_f1(request.parsed_output, request.gt_text)
        dp = {_DIRECTIONS[t] for t in _tokens(request.parsed_output) if t in _DIRECTIONS}
        dg = {_DIRECTIONS[t] for t in _tokens(request.gt_text) if t in _DIRECTIONS}
        spatial = 1.0 if not dp and not dg else len(dp & dg) / len(dp | dg)
        if request.pred_bbox is not None and request.gt_bbox is not None:
            spatial *= r_bbox(request.pred_bbox, request.gt_bbox)
        return JudgeResponse(text, spatial)


@dataclass
class FixedJudge:
    """Returns the same scores for every request (testing aid)."""

    text: float
    text_spatial: float
    concurrent_safe: bool = True

    def judge(self, request: JudgeRequest) -> JudgeResponse:
        return JudgeResponse(self.text, self.text_spatial)


def r_consistency(judge: ConsistencyJudge, request: JudgeRequest, split: tuple[float, float] = (0.5, 0.5)) -> float:
    try:
        resp = judge.judge(request)
    except JudgeError:
        raise
    except Exception as e:  # any judge-side failure surfaces as JudgeError
        raise JudgeError(f"judge failed: {e!r}") from e
    if not isinstance(resp, JudgeResponse):
        raise JudgeError(f"judge returned {type(resp).__name__}, expected JudgeResponse")
    return split[0] * resp.text + split[1] * resp.text_spatial


# ----------------------------------------------------------------------------
# aggregation


def total_reward(components: Mapping[str, float], mode: str = "full", weights: RewardWeights | None = None) -> float:
    """``fw * format + (1 - fw) * mean(other components)`` over the components used by ``mode``.

    Partial mode drops the visual components (bbox, keypoint, waypoint) even if
    they are supplied.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    w = weights or RewardWeights()
    used = {k: v for k, v in components.items() if v is not None and not (mode == "partial" and k in VISUAL)}
    unknown = set(used) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown reward components: {sorted(unknown)}")
    missing = [k for k in REQUIRED[mode] if k not in used]
    if missing:
        raise ValueError(f"{mode} mode requires components {missing}")
    for k, v in used.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"component {k}={v!r} is outside [0, 1]")
    others = [v for k, v in used.items() if k != "format"]
    return w.format_weight * used["format"] + (1.0 - w.format_weight) * float(np.mean(others))


# ----------------------------------------------------------------------------
# GRPO


def grpo_advantages(rewards: Sequence[float], eps: float = ADVANTAGE_EPS) -> np.ndarray:
    """Group z-scores with population std; all zeros when std < eps."""
    r = np.asarray(rewards, dtype=float).reshape(-1)
    if r.size < 2:
        raise ValueError(f"a GRPO group needs at least 2 rewards, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    centered = r - r.mean()
    std = float(np.sqrt(np.mean(centered**2)))
    if std < eps:
        return np.zeros_like(r)
    a = centered / std
    # remove the rounding residue so the group mean is 0 to machine precision
    return a - a.mean()


def grpo_objective(
    ratios,
    advantages,
    kl,
    beta: float = GRPO_BETA,
    clip: tuple[float, float] = (GRPO_EPS_LOW, GRPO_EPS_HIGH),
) -> float:
    """Clipped surrogate with asymmetric bounds, minus the KL penalty, averaged over the group.

    Infinite bounds give the unclipped ``mean(ratio * A - beta * kl)``.
    """
    r = np.asarray(ratios, dtype=float).reshape(-1)
    a = np.asarray(advantages, dtype=float).reshape(-1)
    k = np.asarray(kl, dtype=float).reshape(-1)
    if not (r.size == a.size == k.size) or r.size == 0:
        raise ValueError(f"ratios, advantages and kl must have the same non-zero length: {r.size}, {a.size}, {k.size}")
    eps_low, eps_high = clip
    if eps_low < 0 or eps_high < 0:
        raise ValueError("clip bounds must be >= 0")
    clipped = np.clip(r, 1.0 - eps_low, 1.0 + eps_high)
    return float(np.mean(np.minimum(r * a, clipped * a) - beta * k))


def nsr(pairs) -> float:
    """Net superiority rate of the first score over the second; ties only count in the total."""
    p = np.asarray(pairs, dtype=float)
    if p.size == 0:
        raise ValueError("nsr needs at least one pair")
    p = p.reshape(-1, 2)
    wins = int(np.sum(p[:, 0] > p[:, 1]))
    losses = int(np.sum(p[:, 0] < p[:, 1]))
    return (wins - losses) / len(p)


def filter_groups(group_rewards, min_std: float = 1e-3, mean_range: tuple[float, float] = (0.0, 1.0)) -> list[int]:
    """Indices of groups worth training on.

    A group is kept when its population std is at least ``min_std`` and its
    mean reward lies inside ``mean_range`` (inclusive); this drops groups that
    are trivially solved, hopeless, or give no gradient signal.
    """
    keep = []
    for i, g in enumerate(group_rewards):
        r = np.asarray(g, dtype=float).reshape(-1)
        if r.size < 2:
            continue
        if r.std() >= min_std and mean_range[0] <= r.mean() <= mean_range[1]:
            keep.append(i)
    return keep


# ----------------------------------------------------------------------------
# per-sample scoring


@dataclass
class RewardReport:
    id: str
    mode: str
    components: dict = field(default_factory=dict)
    total: float = 0.0
    advantage: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "mode": self.mode,
            **{k: self.components.get(k) for k in COMPONENTS},
            "total": self.total,
            "advantage": self.advantage,
        }


def score_sample(
    pred: Mapping,
    gt: Mapping,
    mode: str = "full",
    weights: RewardWeights | None = None,
    judge: ConsistencyJudge | None = None,
    templates: Mapping[str, object] | None = None,
) -> RewardReport:
    """Score one prediction record against its ground truth.

    Record fields (all optional except ``id`` and those ``mode`` requires):
    ``output`` (raw text, for the format check), ``bbox``, ``keypoints``,
    ``waypoints`` ({arm: [[u, v], ...]}), ``action`` ({slot: value}),
    ``text``. Ground truth may add ``place_region`` (keypoint target box),
    ``instruction`` and ``image``. Visual components are skipped in partial mode.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    w = weights or RewardWeights()
    tmpl = (templates or {}).get(mode, mode)
    comp: dict[str, float] = {}
    if mode == "full":
        if pred.get("bbox") is not None and gt.get("bbox") is not None:
            comp["bbox"] = r_bbox(pred["bbox"], gt["bbox"])
        if pred.get("keypoints") is not None and gt.get("place_region") is not None:
            comp["keypoint"] = r_keypoint(pred["keypoints"], gt["place_region"])
        if pred.get("waypoints") is not None and gt.get("waypoints") is not None:
            comp["waypoint"] = r_waypoint(pred["waypoints"], gt["waypoints"], w.waypoint_split)
    if pred.get("action") is not None and gt.get("action") is not None:
        comp["action"] = r_action(pred["action"], gt["action"], w)
    if "output" in pred:
        comp["format"] = r_format(pred["output"], tmpl)
    if judge is not None and gt.get("text") is not None:
        req = JudgeRequest(
            image_ref=str(gt.get("image", "")),
            instruction=str(gt.get("instruction", "")),
            gt_text=str(gt["text"]),
            parsed_output=str(pred.get("text", "")),
            pred_bbox=BBox.of(pred["bbox"]) if pred.get("bbox") is not None else None,
            gt_bbox=BBox.of(gt["bbox"]) if gt.get("bbox") is not None else None,
        )
        comp["consistency"] = r_consistency(judge, req, w.consistency_split)
    total = total_reward(comp, mode, w)
    return RewardReport(str(pred.get("id", gt.get("id", ""))), mode, comp, total)
