"""``trajtok`` command-line interface.

Exit codes:
    0  success
    2  usage error (bad flags)
    3  I/O error (missing or unreadable input, unwritable output)
    4  validation error (malformed file, bad config, format-version mismatch)
    5  insufficient data (too few deltas or observations)
    6  numerical failure (degenerate fit)
    7  consistency judge failure

stdout carries one JSON summary line per run; logs go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import config as config_mod
from .datapipe import (
    DatasetFormatError,
    Episode,
    MirrorFrames,
    atomic_write_text,
    dedup,
    dumps_episodes,
    mirror_episode,
    read_episodes,
)
from .geometry import RobotState, Pose
from .rewards import (
    COMPONENTS,
    VISUAL,
    JudgeError,
    MockJudge,
    RewardWeights,
    grpo_advantages,
    nsr,
    score_sample,
)
from .scaling import DegenerateFitError, ScalingFitError, fit, prediction_dump, read_observations
from .synth import sample_episodes
from .tokenizer import (
    ActionTokenSequence,
    BinningSpec,
    InsufficientDataError,
    MotionTokenLibrary,
    collect_deltas,
    decode_episode,
    encode_episode,
    fit_library,
)
from .waypoints import WaypointThresholds

TOKEN_FORMAT_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_INSUFFICIENT, EXIT_NUMERICAL, EXIT_JUDGE = 0, 2, 3, 4, 5, 6, 7

log = logging.getLogger("trajtok")


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    """Order-preserving map; threads only change speed, never output."""
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _jsonl(records) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)


def _read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"invalid JSON: {e.msg}", lineno, path) from None
            if not isinstance(rec, dict):
                raise DatasetFormatError("record must be a JSON object", lineno, path)
            out.append(rec)
    return out


def _side_path(out: str, suffix: str) -> str:
    return out + suffix


class Run:
    """Collects inputs/outputs of one command and writes its manifest."""

    def __init__(self, command: str, cfg: dict, args):
        self.command = command
        self.cfg = cfg
        self.args = args
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.t0 = time.perf_counter()

    def input(self, path) -> str:
        self.inputs[str(path)] = _sha256(path)
        return path

    def write(self, path, text: str) -> None:
        atomic_write_text(path, text)
        self.outputs[str(path)] = hashlib.sha256(text.encode("utf-8")).hexdigest()

    def finish(self, summary: dict) -> int:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config_hash": config_mod.config_hash(self.cfg),
            "config": self.cfg,
            "inputs": self.inputs,
            "outputs": self.outputs,
            # the only field that differs between identical runs
            "timing": {"wall_seconds": round(time.perf_counter() - self.t0, 6)},
        }
        path = self.args.manifest or (_side_path(self.args.out, ".manifest.json") if self.args.out else None)
        if path:
            atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        print(json.dumps({"command": self.command, **summary}, sort_keys=True))
        return EXIT_OK


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg) -> int:
    run = Run("synth", cfg, args)
    s = cfg["synth"]
    eps = sample_episodes(int(s["n_groups"]), int(s["per_group"]), int(s["n_frames"]), seed=cfg["seed"])
    run.write(args.out, dumps_episodes(eps))
    return run.finish({"episodes": len(eps)})


def _thresholds(cfg) -> WaypointThresholds:
    return WaypointThresholds(**cfg["waypoints"])


def cmd_fit_library(args, cfg) -> int:
    run = Run("fit-library", cfg, args)
    eps = read_episodes(run.input(args.episodes))
    th = _thresholds(cfg)
    deltas = collect_deltas([e.traj for e in eps], th)
    lib = fit_library(deltas, k_trans=int(cfg["library"]["k_trans"]), k_rot=int(cfg["library"]["k_rot"]), seed=cfg["seed"], thresholds=th)
    run.write(args.out, lib.dumps())
    return run.finish(
        {
            "deltas": int(len(deltas[0])),
            "k_trans": lib.k_trans,
            "k_rot": lib.k_rot,
            "quant_radius_trans": lib.quant_radius_trans,
            "quant_radius_rot": lib.quant_radius_rot,
        }
    )


def _load_library(run: Run, path) -> tuple[MotionTokenLibrary, str]:
    run.input(path)
    return MotionTokenLibrary.load(path), run.inputs[str(path)]


def _state_record(traj, k: int) -> dict:
    return {
        "positions": traj.positions[k].tolist(),
        "orientations": traj.orientations[k].tolist(),
        "grippers": traj.grippers[k].tolist(),
        "timestamp": float(traj.timestamps[k]),
    }


def cmd_encode(args, cfg) -> int:
    run = Run("encode", cfg, args)
    eps = read_episodes(run.input(args.episodes))
    lib, lib_hash = _load_library(run, args.library)
    enc = cfg["encode"]
    mode, horizon = enc["mode"], int(enc["horizon"])
    seed = cfg["seed"]

    def one(item):
        n, ep = item
        rng = np.random.default_rng([seed, n]) if mode == "top3" else None
        return encode_episode(ep.traj, lib, mode, rng, horizon=horizon)

    all_seqs = _pmap(one, list(enumerate(eps)), int(cfg["threads"]))
    records = []
    for ep, seqs in zip(eps, all_seqs):
        records.append(
            {
                "format_version": TOKEN_FORMAT_VERSION,
                "library_format_version": lib.format_version,
                "library_sha256": lib_hash,
                "id": ep.id,
                "instruction": ep.instruction,
                "subtask": ep.subtask,
                "mirror_flag": ep.mirror_flag,
                "n_frames": len(ep),
                "dt": enc["dt"],
                "start": _state_record(ep.traj, 0),
                "windows": [s.to_dict() for s in seqs],
            }
        )
    run.write(args.out, _jsonl(records))

    spec = BinningSpec.uniform(8, bins_per_dim=int(enc["bins_per_dim"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "frames", "windows", "spatial_tokens", "binning_tokens", "ratio"])
    tot_s = tot_b = 0
    for ep, seqs in zip(eps, all_seqs):
        s_tok = sum(s.n_tokens for s in seqs)
        b_tok = spec.dims * horizon * max(1, math.ceil(len(ep) / horizon))
        tot_s += s_tok
        tot_b += b_tok
        w.writerow([ep.id, len(ep), len(seqs), s_tok, b_tok, repr(b_tok / s_tok) if s_tok else "inf"])
    comp_path = args.compression or _side_path(args.out, ".compression.csv")
    run.write(comp_path, buf.getvalue())
    return run.finish({"episodes": len(eps), "spatial_tokens": tot_s, "binning_tokens": tot_b})


def _start_state(rec: dict) -> RobotState:
    st = rec["start"]
    P = np.asarray(st["positions"], dtype=float).reshape(3, 3)
    Q = np.asarray(st["orientations"], dtype=float).reshape(3, 4)
    g = st["grippers"]
    return RobotState(*(Pose(P[c], Q[c]) for c in range(3)), g[0], g[1], st["timestamp"])


def cmd_decode(args, cfg) -> int:
    run = Run("decode", cfg, args)
    recs = _read_jsonl(run.input(args.tokens))
    lib, lib_hash = _load_library(run, args.library)
    parsed = []
    for lineno, rec in enumerate(recs, start=1):
        where = f"{args.tokens}: record {lineno}"
        if rec.get("format_version") != TOKEN_FORMAT_VERSION:
            raise ValidationError(f"{where}: token format_version {rec.get('format_version')!r} is not supported (expected {TOKEN_FORMAT_VERSION})")
        if rec.get("library_format_version") != lib.format_version:
            raise ValidationError(
                f"{where}: tokens use library format_version {rec.get('library_format_version')!r}, library is {lib.format_version}"
            )
        if rec.get("library_sha256") not in (None, lib_hash):
            raise ValidationError(f"{where}: tokens were encoded with a different library file")
        try:
            seqs = [ActionTokenSequence.from_dict(w) for w in rec["windows"]]
            parsed.append((rec, seqs, _start_state(rec)))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"{where}: malformed token record ({e!r})") from None

    def one(item):
        rec, seqs, start = item
        traj = decode_episode(seqs, lib, start, n_frames=int(rec["n_frames"]), dt=float(rec["dt"]))
        return Episode(str(rec["id"]), str(rec["instruction"]), str(rec["subtask"]), traj, bool(rec["mirror_flag"]))

    eps = _pmap(one, parsed, int(cfg["threads"]))
    run.write(args.out, dumps_episodes(eps))
    return run.finish({"episodes": len(eps)})


def cmd_dedup(args, cfg) -> int:
    run = Run("dedup", cfg, args)
    eps = read_episodes(run.input(args.episodes))
    rep = dedup(eps, threshold=float(cfg["dedup"]["threshold"]), cell_size=float(cfg["dedup"]["cell_size"]))
    kept = [eps[i] for i in rep.kept_index]
    run.write(args.out, dumps_episodes(kept))
    run.write(args.report or _side_path(args.out, ".dedup.csv"), rep.to_csv())
    return run.finish({"episodes": len(eps), "kept": len(rep.kept), "removed": len(rep.removed)})


def cmd_mirror(args, cfg) -> int:
    run = Run("mirror", cfg, args)
    eps = read_episodes(run.input(args.episodes))
    m = cfg["mirror"]
    frames = MirrorFrames.from_dict(m["frames"]) if m["frames"] is not None else MirrorFrames()
    kw = {"lexicon": m["lexicon"]} if m["lexicon"] is not None else {}
    mirrored = [mirror_episode(e, frames, **kw) for e in eps]
    out = [x for pair in zip(eps, mirrored) for x in pair] if args.both else mirrored
    run.write(args.out, dumps_episodes(out))
    return run.finish({"episodes": len(eps), "written": len(out)})


_ROW_NAMES = {c: f"{c} reward" for c in COMPONENTS}


def _score_all(preds, gts, mode, weights, judge, templates, threads):
    by_id = {}
    for g in gts:
        if "id" not in g:
            raise ValidationError("every ground-truth record needs an 'id'")
        by_id[str(g["id"])] = g
    items = []
    for p in preds:
        pid = str(p.get("id"))
        if pid not in by_id:
            raise ValidationError(f"prediction {pid!r} has no ground-truth record")
        items.append((p, by_id[pid]))
    return _pmap(lambda it: score_sample(it[0], it[1], mode, weights, judge, templates), items, threads)


def _fmt(v) -> str:
    return repr(float(v))


def cmd_score(args, cfg) -> int:
    run = Run("score", cfg, args)
    preds = _read_jsonl(run.input(args.predictions))
    gts = _read_jsonl(run.input(args.ground_truth))
    rc = cfg["rewards"]
    weights = RewardWeights.from_dict(rc["weights"])
    judge = MockJudge() if rc["judge"] == "mock" else None
    threads = int(cfg["threads"]) if judge is None or judge.concurrent_safe else 1
    mode = args.mode
    reports = _score_all(preds, gts, mode, weights, judge, rc["templates"], threads)

    # group-relative advantages for predictions that carry a "group" key
    groups: dict[str, list[int]] = {}
    for n, p in enumerate(preds):
        if "group" in p:
            groups.setdefault(str(p["group"]), []).append(n)
    for members in groups.values():
        if len(members) >= 2:
            adv = grpo_advantages([reports[n].total for n in members])
            for n, a in zip(members, adv):
                reports[n].advantage = float(a)

    base_reports = None
    if args.baseline:
        base = _read_jsonl(run.input(args.baseline))
        base_reports = {r.id: r for r in _score_all(base, gts, mode, weights, judge, rc["templates"], threads)}

    run.write(args.out, _jsonl(r.to_dict() for r in reports))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "mode", "value", "std", "n"])
    summary = {"samples": len(reports)}
    for key in ("total",) + COMPONENTS:
        name = "total reward" if key == "total" else _ROW_NAMES[key]
        if mode == "partial" and key in VISUAL:
            w.writerow([name, mode, "-", "-", "-"])
            continue
        vals = [r.total if key == "total" else r.components.get(key) for r in reports]
        vals = [v for v in vals if v is not None]
        if vals:
            w.writerow([name, mode, _fmt(np.mean(vals)), _fmt(np.std(vals)), len(vals)])
            summary[key] = float(np.mean(vals))
        else:
            w.writerow([name, mode, "", "", 0])
    if base_reports is not None:
        for key in ("bbox", "keypoint", "waypoint", "action"):
            name = f"{key} NSR"
            if mode == "partial" and key in VISUAL:
                w.writerow([name, mode, "-", "-", "-"])
                continue
            pairs = [
                (r.components[key], base_reports[r.id].components[key])
                for r in reports
                if key in r.components and r.id in base_reports and key in base_reports[r.id].components
            ]
            if pairs:
                v = nsr(pairs)
                w.writerow([name, mode, _fmt(v), "", len(pairs)])
                summary[f"{key}_nsr"] = v
            else:
                w.writerow([name, mode, "", "", 0])
    run.write(args.summary or _side_path(args.out, ".summary.csv"), buf.getvalue())
    return run.finish(summary)


def cmd_fit_scaling(args, cfg) -> int:
    run = Run("fit-scaling", cfg, args)
    obs = read_observations(run.input(args.observations))
    sc = cfg["scaling"]
    res = fit(obs, tuple(sc["beta_range"]), tuple(sc["r_star_range"]), int(sc["grid_size"]))
    run.write(args.out, json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n")
    if args.dump:
        run.write(args.dump, prediction_dump(res.params, obs))
    return run.finish(res.to_dict())


# ---------------------------------------------------------------- argument parsing


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help=f"JSON config file (default: ${config_mod.CONFIG_ENV} if set)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="worker threads (output does not depend on it)")
    p.add_argument("--out", required=out_required, help="primary output file")
    p.add_argument("--manifest", help="run manifest path (default: <out>.manifest.json)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajtok", description="Trajectory tokenization, curation, rewards and scaling fits.")
    ap.add_argument("--version", action="version", version=f"trajtok {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic sample episode dataset")
    _common(p)
    p.add_argument("--n-groups", type=int)
    p.add_argument("--per-group", type=int)
    p.add_argument("--n-frames", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit-library", help="fit a motion token library from episodes")
    p.add_argument("episodes")
    _common(p)
    p.add_argument("--k-trans", type=int)
    p.add_argument("--k-rot", type=int)
    p.set_defaults(func=cmd_fit_library)

    p = sub.add_parser("encode", help="encode episodes into action tokens")
    p.add_argument("episodes")
    p.add_argument("--library", required=True)
    _common(p)
    p.add_argument("--mode", choices=("greedy", "top3"))
    p.add_argument("--horizon", type=int, help="maximum frames per window (40)")
    p.add_argument("--compression", help="compression CSV path (default: <out>.compression.csv)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct episodes from action tokens")
    p.add_argument("tokens")
    p.add_argument("--library", required=True)
    _common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("dedup", help="drop near-duplicate episodes within (instruction, subtask) groups")
    p.add_argument("episodes")
    _common(p)
    p.add_argument("--cell-size", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--report", help="report CSV path (default: <out>.dedup.csv)")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("mirror", help="mirror episodes left/right")
    p.add_argument("episodes")
    _common(p)
    p.add_argument("--both", action="store_true", help="write each original followed by its mirror")
    p.set_defaults(func=cmd_mirror)

    p = sub.add_parser("score", help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    _common(p)
    p.add_argument("--mode", choices=("full", "partial"), default="full")
    p.add_argument("--baseline", help="baseline predictions; adds NSR rows")
    p.add_argument("--judge", choices=("none", "mock"))
    p.add_argument("--summary", help="summary CSV path (default: <out>.summary.csv)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit-scaling", help="fit the data-constrained scaling law to U_D,R_D,loss observations")
    p.add_argument("observations")
    _common(p)
    p.add_argument("--dump", help="gnuplot-compatible prediction curve output")
    p.set_defaults(func=cmd_fit_scaling)
    return ap


def _overrides(args) -> dict:
    o: dict = {}

    def put(section, key, value):
        if value is not None:
            (o.setdefault(section, {}) if section else o)[key] = value

    put(None, "seed", args.seed)
    put(None, "threads", args.threads)
    put("synth", "n_groups", getattr(args, "n_groups", None))
    put("synth", "per_group", getattr(args, "per_group", None))
    put("synth", "n_frames", getattr(args, "n_frames", None))
    put("library", "k_trans", getattr(args, "k_trans", None))
    put("library", "k_rot", getattr(args, "k_rot", None))
    if args.command == "encode":
        put("encode", "mode", args.mode)
        put("encode", "horizon", args.horizon)
    put("dedup", "cell_size", getattr(args, "cell_size", None))
    put("dedup", "threshold", getattr(args, "threshold", None))
    if args.command == "score":
        put("rewards", "judge", args.judge)
    return o


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="trajtok: %(message)s")
    try:
        cfg = config_mod.load(args.config, _overrides(args))
        return args.func(args, cfg)
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO
    except DegenerateFitError as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (InsufficientDataError, ScalingFitError) as e:
        log.error("insufficient data: %s", e)
        return EXIT_INSUFFICIENT
    except JudgeError as e:
        log.error("judge failure: %s", e)
        return EXIT_JUDGE
    except (ValueError, KeyError, TypeError) as e:
        # includes config, dataset, library, token and CSV format errors
        log.error("invalid input: %s", e)
        return EXIT_VALIDATION
    except FloatingPointError as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
