"""Episode datasets: JSONL IO, occupancy-grid de-duplication and left/right mirroring."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose, mirror_poses
from .trajectory import CHANNELS, Trajectory

EPISODE_FORMAT_VERSION = 1
PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
ARMS = {"left": 1, "right": 2}

DEFAULT_CELL_SIZE = 0.05
DEFAULT_DEDUP_THRESHOLD = 0.15

MIRROR_SUFFIX = "~mirror"
DEFAULT_LEXICON = {
    "left": "right",
    "Left": "Right",
    "LEFT": "RIGHT",
    "leftward": "rightward",
    "leftmost": "rightmost",
}


class DatasetFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, path=None):
        where = f"{path or '<input>'}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Episode:
    id: str
    instruction: str
    subtask: str
    traj: Trajectory
    # visual streams of this episode must be flipped horizontally downstream
    mirror_flag: bool = False

    def __post_init__(self):
        if len(self.traj) == 0:
            raise ValueError(f"episode {self.id!r} has no frames")

    @property
    def frames(self):
        return self.traj.states()

    def __len__(self):
        return len(self.traj)

    def equals(self, other: "Episode") -> bool:
        return (
            self.id == other.id
            and self.instruction == other.instruction
            and self.subtask == other.subtask
            and self.mirror_flag == other.mirror_flag
            and self.traj.equals(other.traj)
        )


# ---------------------------------------------------------------- JSONL IO


def episode_to_record(ep: Episode) -> dict:
    t = ep.traj
    return {
        "format_version": EPISODE_FORMAT_VERSION,
        "id": ep.id,
        "instruction": ep.instruction,
        "subtask": ep.subtask,
        "mirror_flag": ep.mirror_flag,
        "timestamps": t.timestamps.tolist(),
        **{
            ch: {"position": t.positions[:, c].tolist(), "orientation": t.orientations[:, c].tolist()}
            for c, ch in enumerate(CHANNELS)
        },
        "left_gripper": t.grippers[:, 0].tolist(),
        "right_gripper": t.grippers[:, 1].tolist(),
    }


def episode_from_record(d: dict) -> Episode:
    if not isinstance(d, dict):
        raise ValueError("episode record must be a JSON object")
    if d.get("format_version") != EPISODE_FORMAT_VERSION:
        raise ValueError(f"unsupported episode format_version {d.get('format_version')!r}")
    try:
        ts = d["timestamps"]
        pos = np.stack([np.asarray(d[ch]["position"], dtype=float) for ch in CHANNELS], axis=1)
        quat = np.stack([np.asarray(d[ch]["orientation"], dtype=float) for ch in CHANNELS], axis=1)
        grip = np.stack([np.asarray(d["left_gripper"], dtype=float), np.asarray(d["right_gripper"], dtype=float)], axis=1)
        traj = Trajectory(ts, pos, quat, grip)
        mirror = d["mirror_flag"]
        if not isinstance(mirror, bool):
            raise ValueError("mirror_flag must be a boolean")
        return Episode(str(d["id"]), str(d["instruction"]), str(d["subtask"]), traj, mirror)
    except KeyError as e:
        raise ValueError(f"missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise ValueError(str(e)) from None


def read_episodes(path) -> list[Episode]:
    """Read an episode JSONL file. Any malformed line aborts the whole read."""
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                episodes.append(episode_from_record(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as e:
                raise DatasetFormatError(str(e), lineno, path) from None
    return episodes


def dumps_episodes(episodes: Iterable[Episode]) -> str:
    return "".join(json.dumps(episode_to_record(ep), separators=(",", ":")) + "\n" for ep in episodes)


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_episodes(path, episodes: Iterable[Episode]) -> None:
    atomic_write_text(path, dumps_episodes(episodes))


# ---------------------------------------------------------------- occupancy grids


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean occupancy over one projection plane.

    ``origin_index`` is the integer cell index of ``occupied[0, 0]``; all grids
    of a given ``cell_size`` share the lattice anchored at the world origin.
    """

    plane: str
    cell_size: float
    origin_index: tuple[int, int]
    occupied: np.ndarray

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {sorted(PLANES)}, got {self.plane!r}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")
        occ = np.asarray(self.occupied, dtype=bool)
        if occ.ndim != 2:
            raise ValueError("occupied must be a 2-D matrix")
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "origin_index", (int(self.origin_index[0]), int(self.origin_index[1])))

    @property
    def n_occupied(self) -> int:
        return int(self.occupied.sum())

    @property
    def origin(self) -> np.ndarray:
        o = np.zeros(3)
        a, b = PLANES[self.plane]
        o[a] = self.origin_index[0] * self.cell_size
        o[b] = self.origin_index[1] * self.cell_size
        return o

    def cells(self) -> set[tuple[int, int]]:
        i, j = np.nonzero(self.occupied)
        return {(int(a) + self.origin_index[0], int(b) + self.origin_index[1]) for a, b in zip(i, j)}

    @classmethod
    def from_cells(cls, plane: str, cell_size: float, cells: Iterable[tuple[int, int]]) -> "OccupancyGrid":
        cells = list(cells)
        if not cells:
            return cls(plane, cell_size, (0, 0), np.zeros((0, 0), dtype=bool))
        arr = np.array(cells, dtype=np.int64)
        lo = arr.min(axis=0)
        shape = arr.max(axis=0) - lo + 1
        occ = np.zeros(tuple(shape), dtype=bool)
        occ[arr[:, 0] - lo[0], arr[:, 1] - lo[1]] = True
        return cls(plane, cell_size, (int(lo[0]), int(lo[1])), occ)


def traverse_cells(a, b) -> list[tuple[int, int]]:
    """Cells crossed by the segment a -> b, both given in cell units (2-D grid traversal)."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    i, j = math.floor(ax), math.floor(ay)
    ei, ej = math.floor(bx), math.floor(by)
    cells = [(i, j)]
    dx, dy = bx - ax, by - ay
    si = 1 if dx > 0 else -1
    sj = 1 if dy > 0 else -1
    t_i = ((i + (si > 0)) - ax) / dx if dx != 0 else math.inf
    t_j = ((j + (sj > 0)) - ay) / dy if dy != 0 else math.inf
    dt_i = abs(1 / dx) if dx != 0 else math.inf
    dt_j = abs(1 / dy) if dy != 0 else math.inf
    left_i, left_j = abs(ei - i), abs(ej - j)
    while left_i or left_j:
        if left_j == 0 or (left_i and t_i <= t_j):
            i += si
            t_i += dt_i
            left_i -= 1
        else:
            j += sj
            t_j += dt_j
            left_j -= 1
        cells.append((i, j))
    return cells


def rasterize(ep: Episode, plane: str, cell_size: float = DEFAULT_CELL_SIZE, arm: str = "right") -> OccupancyGrid:
    """Occupancy of one arm's end-effector path projected onto ``plane``."""
    if not cell_size > 0:
        raise ValueError(f"cell_size must be > 0, got {cell_size}")
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {sorted(PLANES)}, got {plane!r}")
    a, b = PLANES[plane]
    pts = ep.traj.positions[:, ARMS[arm]][:, [a, b]] / cell_size
    cells = {(math.floor(pts[0, 0]), math.floor(pts[0, 1]))}
    for p, q in zip(pts, pts[1:]):
        cells.update(traverse_cells(p, q))
    return OccupancyGrid.from_cells(plane, cell_size, cells)


def rasterize_all(ep: Episode, cell_size: float = DEFAULT_CELL_SIZE) -> dict[tuple[str, str], OccupancyGrid]:
    return {(arm, plane): rasterize(ep, plane, cell_size, arm) for arm in ARMS for plane in PLANES}


def _aligned(a: OccupancyGrid, b: OccupancyGrid) -> tuple[np.ndarray, np.ndarray]:
    lo = np.minimum(a.origin_index, b.origin_index)
    hi = np.maximum(np.add(a.origin_index, a.occupied.shape), np.add(b.origin_index, b.occupied.shape))
    shape = tuple(hi - lo)
    out = []
    for g in (a, b):
        m = np.zeros(shape, dtype=bool)
        oi, oj = g.origin_index[0] - lo[0], g.origin_index[1] - lo[1]
        m[oi : oi + g.occupied.shape[0], oj : oj + g.occupied.shape[1]] = g.occupied
        out.append(m)
    return out[0], out[1]


def grid_distance(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """Cells occupied by exactly one grid, divided by the larger occupied count."""
    if a.plane != b.plane or a.cell_size != b.cell_size:
        raise ValueError("grids must share plane and cell_size")
    n = max(a.n_occupied, b.n_occupied)
    if n == 0:
        return 0.0
    ma, mb = _aligned(a, b)
    return int(np.count_nonzero(ma ^ mb)) / n


def episode_distance(ga: dict, gb: dict) -> float:
    """Mean grid distance over both arms and all three planes."""
    return float(np.mean([grid_distance(ga[k], gb[k]) for k in sorted(ga)]))


@dataclass
class DedupReport:
    kept: list[str] = field(default_factory=list)
    # (id, matched kept id, distance)
    removed: list[tuple[str, str, float]] = field(default_factory=list)
    threshold: float = DEFAULT_DEDUP_THRESHOLD
    cell_size: float = DEFAULT_CELL_SIZE
    kept_index: list[int] = field(default_factory=list)
    removed_index: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "cell_size": self.cell_size,
            "kept": self.kept,
            "removed": [{"id": i, "matched_id": m, "distance": d} for i, m, d in self.removed],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "id", "status", "matched_id", "distance"])
        rows = [(k, i, "kept", "", "") for k, i in zip(self.kept_index, self.kept)]
        rows += [(k, i, "removed", m, repr(d)) for k, (i, m, d) in zip(self.removed_index, self.removed)]
        for r in sorted(rows):
            w.writerow(r)
        return buf.getvalue()


def dedup(
    episodes: Sequence[Episode],
    threshold: float = DEFAULT_DEDUP_THRESHOLD,
    cell_size: float = DEFAULT_CELL_SIZE,
) -> DedupReport:
    """Greedy de-duplication within (instruction, subtask) groups, in input order.

    An episode is dropped when its distance to some already-kept episode of the
    same group is below ``threshold``; it is attributed to the closest one.
    """
    report = DedupReport(threshold=threshold, cell_size=cell_size)
    kept_by_group: dict[tuple[str, str], list[tuple[str, dict]]] = defaultdict(list)
    for n, ep in enumerate(episodes):
        grids = rasterize_all(ep, cell_size)
        group = kept_by_group[(ep.instruction, ep.subtask)]
        best = None
        for kid, kgrids in group:
            d = episode_distance(grids, kgrids)
            if best is None or d < best[1]:
                best = (kid, d)
        if best is not None and best[1] < threshold:
            report.removed.append((ep.id, best[0], best[1]))
            report.removed_index.append(n)
        else:
            group.append((ep.id, grids))
            report.kept.append(ep.id)
            report.kept_index.append(n)
    return report


# ---------------------------------------------------------------- mirroring


@dataclass(frozen=True)
class MirrorFrames:
    """World-from-base transforms of the torso and each arm's base frame."""

    torso: Pose = field(default_factory=Pose.identity)
    left: Pose = field(default_factory=Pose.identity)
    right: Pose = field(default_factory=Pose.identity)

    @classmethod
    def from_dict(cls, d: dict) -> "MirrorFrames":
        def pose(key):
            v = d.get(key)
            return Pose.identity() if v is None else Pose(v["position"], v["orientation"])

        return cls(pose("torso"), pose("left"), pose("right"))

    def to_dict(self) -> dict:
        return {
            k: {"position": getattr(self, k).position.tolist(), "orientation": getattr(self, k).orientation.tolist()}
            for k in ("torso", "left", "right")
        }


def swap_words(text: str, lexicon: dict[str, str] = DEFAULT_LEXICON) -> str:
    table = dict(lexicon)
    table.update({v: k for k, v in lexicon.items()})
    pattern = re.compile(r"\b(" + "|".join(sorted(map(re.escape, table), key=len, reverse=True)) + r")\b")
    return pattern.sub(lambda m: table[m.group(0)], text)


def _mirror_channel(traj: Trajectory, src: int, src_frame: Pose, dst_frame: Pose):
    return mirror_poses(traj.positions[:, src], traj.orientations[:, src], src_frame, dst_frame)


def mirror_episode(ep: Episode, frames: MirrorFrames = MirrorFrames(), lexicon: dict[str, str] = DEFAULT_LEXICON) -> Episode:
    """Swap arms and reflect every pose across the world x-z plane."""
    t = ep.traj
    tp, tq = _mirror_channel(t, 0, frames.torso, frames.torso)
    lp, lq = _mirror_channel(t, 2, frames.right, frames.left)
    rp, rq = _mirror_channel(t, 1, frames.left, frames.right)
    traj = Trajectory(
        t.timestamps,
        np.stack([tp, lp, rp], axis=1),
        np.stack([tq, lq, rq], axis=1),
        t.grippers[:, ::-1],
    )
    new_id = ep.id[: -len(MIRROR_SUFFIX)] if ep.id.endswith(MIRROR_SUFFIX) else ep.id + MIRROR_SUFFIX
    return Episode(new_id, swap_words(ep.instruction, lexicon), swap_words(ep.subtask, lexicon), traj, not ep.mirror_flag)
