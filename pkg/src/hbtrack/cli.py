"""Command-line entry point: ``hbtrack <command> ...``.

Typical pipeline::

    hbtrack synth --out-dir run/
    hbtrack pair --detections run/detections.jsonl --out run/paired.jsonl
    hbtrack track --detections run/paired.jsonl --out run/results.txt
    hbtrack eval --gt run/gt.txt --results run/results.txt --out run/report.json

Every command exits 0 on success and 1 with a one-line message on bad input;
argument errors exit 2.  Outputs written by a failed command are removed.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as hio
from .aml import LossWeights, check_gradient, loss_terms, random_batch
from .experiments import (heavy_occlusion_spec, gigapixel_spec, pair_frames, pairing_ablation,
                          parallel_map, scale_ablation, tracking_ablation)
from .gigapixel import DEFAULT_OVERLAP, DEFAULT_SCALES, FUSION_IOU, fuse, lift, plan
from .metrics import evaluate, pair_mismatch_rate
from .pairing import DEFAULT_MAX_DISTANCE, DEFAULT_MIN_IOU, pairs_from_hints
from .scenario import (ScenarioSpec, TileDetectorModel, crossing_scenario, generate,
                       tile_detections)
from .tracker import Tracker, TrackerConfig, strip_heads

log = logging.getLogger("hbtrack")

PRESETS = ("default", "occlusion", "gigapixel", "crossing")


class _Outputs:
    """Files written by the running command, removed again if it fails."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def _config_path(out: Path) -> Path:
    return out.with_name(out.stem + ".config.json")


# ---------------------------------------------------------------------------
# synth

def _spec_from_args(args) -> ScenarioSpec:
    base = {}
    if args.preset == "occlusion":
        base = heavy_occlusion_spec(0).to_dict()
    elif args.preset == "gigapixel":
        base = gigapixel_spec(0).to_dict()
    if args.spec:
        loaded = hio.read_json(_existing(args.spec))
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.spec}: scenario spec must be a JSON object")
        unknown = set(loaded) - {f.name for f in fields(ScenarioSpec)}
        if unknown:
            raise ValueError(f"{args.spec}: unknown scenario fields {sorted(unknown)}")
        base.update(loaded)
    for key in ("seed", "num_pedestrians", "num_frames"):
        value = getattr(args, key)
        if value is not None:
            base[key] = value
    return ScenarioSpec.from_dict(base)


def cmd_synth(args, outputs: _Outputs) -> int:
    out_dir = Path(args.out_dir)
    if args.preset == "crossing":
        overrides = {}
        if args.num_frames is not None:
            overrides["num_frames"] = args.num_frames
        scn = crossing_scenario(args.seed or 0, args.occlusion_frames, **overrides)
    else:
        scn = generate(_spec_from_args(args))
    spec = scn.spec
    dets = [d for f in scn.frames for d in scn.detections.get(f, [])]
    hio.write_detections(outputs.add(out_dir / "detections.jsonl"), dets, spec.embedding_dim)
    body_rows, head_rows = [], []
    for f in scn.frames:
        for rec in scn.truth.get(f, []):
            body_rows.append((f, rec.track_id, rec.body, rec.body_visibility))
            head_rows.append((f, rec.track_id, rec.head, rec.head_visibility))
    hio.write_ground_truth(outputs.add(out_dir / "gt.txt"), body_rows)
    hio.write_ground_truth(outputs.add(out_dir / "gt_head.txt"), head_rows)
    hio.write_json(outputs.add(out_dir / "synth.config.json"),
                   {"preset": args.preset, "spec": spec.to_dict()})
    print(f"{len(dets)} detections over {spec.num_frames} frames, "
          f"{spec.num_pedestrians} pedestrians -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# tile / fuse

def cmd_tile(args, outputs: _Outputs) -> int:
    tp = plan(args.width, args.height, args.scales, args.overlap)
    for w in tp.warnings:
        print(f"warning: {w}", file=sys.stderr)
    hio.write_plan(outputs.add(args.out), tp)
    print(f"{len(tp.windows)} windows at scales {list(tp.scales)}")
    if args.detections:
        if not args.tiled_out:
            raise ValueError("--detections needs --tiled-out")
        frames = hio.read_detections(_existing(args.detections))
        dim = hio.embedding_dim_of(args.detections)
        model = None if args.all_visible else TileDetectorModel(args.input_size)
        local = []
        for frame, dets in frames.items():
            per_tile = tile_detections(dets, tp, model)
            for tile_id in sorted(per_tile):
                local.extend(per_tile[tile_id])
        hio.write_detections(outputs.add(args.tiled_out), local, dim)
        print(f"{len(local)} tile-local detections -> {args.tiled_out}")
    return 0


def _fuse_frame(job):
    dets, tp, iou_threshold = job
    per_tile: dict[int, list] = {}
    for d in dets:
        if d.tile_id is None:
            raise ValueError(f"frame {d.frame}: detection without tile_id cannot be lifted")
        per_tile.setdefault(d.tile_id, []).append(d.replace(pair_hint=None))
    return fuse(lift(per_tile, tp), iou_threshold)


def cmd_fuse(args, outputs: _Outputs) -> int:
    tp = hio.read_plan(_existing(args.plan))
    frames = hio.read_detections(_existing(args.detections))
    dim = hio.embedding_dim_of(args.detections)
    fused = parallel_map(_fuse_frame, [(dets, tp, args.iou) for dets in frames.values()])
    flat = [d for chunk in fused for d in chunk]
    hio.write_detections(outputs.add(args.out), flat, dim)
    print(f"{sum(len(v) for v in frames.values())} tile detections fused to {len(flat)}")
    return 0


# ---------------------------------------------------------------------------
# pair / track

def cmd_pair(args, outputs: _Outputs) -> int:
    frames = hio.read_detections(_existing(args.detections))
    dim = hio.embedding_dim_of(args.detections)
    paired = pair_frames(frames, args.method, args.max_distance, args.min_iou)
    hio.write_detections(outputs.add(args.out), hio.paired_to_detections(paired), dim)
    n_pairs = sum(1 for recs in paired.values() for r in recs if r.kind == "bh")
    print(f"{n_pairs} body-head pairs ({args.method})")
    return 0


_CONFIG_FIELDS = {f.name: f for f in fields(TrackerConfig)}


def effective_tracker_config(args) -> TrackerConfig:
    """Defaults, overridden by ``--config`` file, overridden by explicit flags."""
    values = TrackerConfig().to_dict()
    if args.config:
        loaded = hio.read_json(_existing(args.config))
        if not isinstance(loaded, dict):
            raise ValueError(f"{args.config}: tracker config must be a JSON object")
        loaded = loaded.get("tracker", loaded)
        unknown = set(loaded) - set(_CONFIG_FIELDS)
        if unknown:
            raise ValueError(f"{args.config}: unknown tracker fields {sorted(unknown)}")
        values.update(loaded)
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrackerConfig(**values)


def cmd_track(args, outputs: _Outputs) -> int:
    config = effective_tracker_config(args)
    frames = hio.read_detections(_existing(args.detections))
    last = args.num_frames if args.num_frames is not None else max(frames, default=0)
    tracker = Tracker(config)
    rows = []
    for frame in range(1, last + 1):
        recs = pairs_from_hints(frames.get(frame, []))
        if args.body_only:
            recs = strip_heads(recs)
        rows.extend(tracker.step(frame, recs))
    out = Path(args.out)
    hio.write_results(outputs.add(out), rows)
    hio.write_json(outputs.add(_config_path(out)),
                   {"tracker": config.to_dict(), "body_only": bool(args.body_only),
                    "num_frames": last})
    print(f"{len(rows)} result rows, {len({r.track_id for r in rows})} tracks")
    return 0


# ---------------------------------------------------------------------------
# eval

def _gt_pairs(body_gt, head_gt):
    out = {}
    for frame, bodies in body_gt.items():
        heads = dict(head_gt.get(frame, ()))
        out[frame] = [(b, heads[tid]) for tid, b in bodies if tid in heads]
    return out


def cmd_eval(args, outputs: _Outputs) -> int:
    gt = hio.read_mot(_existing(args.gt), skip_ignored=True)
    hyp = hio.read_mot(_existing(args.results))
    per_frame = [] if args.figure else None
    report = evaluate(gt, hyp, args.iou, per_frame=per_frame)
    if args.pairs:
        if not args.gt_head:
            raise ValueError("--pairs needs --gt-head")
        head_gt = hio.read_mot(_existing(args.gt_head), skip_ignored=True)
        paired = {f: pairs_from_hints(d) for f, d in hio.read_detections(_existing(args.pairs)).items()}
        report.pair_mismatch_rate = pair_mismatch_rate(_gt_pairs(gt, head_gt), paired)
    hio.write_json(outputs.add(args.out), report.to_dict())
    if args.figure:
        from .plotting import plot_report
        plot_report(outputs.add(args.figure), per_frame, Path(args.results).name)
    print(f"MOTA {report.mota:.4f}  IDF1 {report.idf1:.4f}  IDSW {report.id_switches}  "
          f"FP {report.false_positives}  FN {report.misses}")
    if args.pairs:
        print(f"pair mismatch rate {report.pair_mismatch_rate:.4f}")
    return 0


# ---------------------------------------------------------------------------
# loss-check

def cmd_loss_check(args, outputs: _Outputs) -> int:
    weights = LossWeights(args.mu, args.beta, args.delta, args.sigma, args.tau,
                          restrict_pairs=not args.all_pairs)
    if args.batches:
        batches = hio.read_loss_batches(_existing(args.batches))
    elif args.random:
        rng = np.random.default_rng(args.seed)
        batches = [random_batch(rng, args.max_parts, args.max_dim) for _ in range(args.random)]
        if args.save_batches:
            hio.write_loss_batches(outputs.add(args.save_batches), batches)
    else:
        raise ValueError("give --batches FILE or --random N")
    entries = []
    for k, batch in enumerate(batches):
        check = check_gradient(batch, weights, args.step, args.rtol, args.atol)
        entries.append({"index": k, "terms": loss_terms(batch, weights),
                        "gradient_check": check.to_dict()})
    failed = [e["index"] for e in entries if not e["gradient_check"]["passed"]]
    report = {"weights": {f.name: getattr(weights, f.name) for f in fields(LossWeights)},
              "step": args.step, "rtol": args.rtol, "atol": args.atol,
              "batches": entries, "failed": failed}
    if args.out:
        hio.write_json(outputs.add(args.out), report)
    print(f"{len(entries)} batches, {len(failed)} gradient mismatches")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# render

def cmd_render(args, outputs: _Outputs) -> int:
    from .plotting import render_frame
    hyp = hio.read_mot(_existing(args.results))
    gt = hio.read_mot(_existing(args.gt)) if args.gt else {}
    if args.frames:
        frames = args.frames
    else:
        frames = [f for f in hyp if (f - 1) % args.every == 0]
    out_dir = Path(args.out_dir)
    for f in frames:
        path = outputs.add(out_dir / f"frame_{f:05d}.{args.format}")
        render_frame(path, hyp.get(f, []), (args.width, args.height), f, gt.get(f, []))
    print(f"{len(frames)} frames rendered to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# ablation

def _write_csv(path, rows: Sequence[dict]) -> None:
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    with hio.atomic_write(path) as fh:
        fh.write(buf.getvalue())


def _summary(rows, group_key, metrics):
    out = []
    for g in sorted({r[group_key] for r in rows}, key=str):
        sel = [r for r in rows if r[group_key] == g]
        parts = []
        for m in metrics:
            vals = [r[m] for r in sel]
            total = sum(vals) if isinstance(vals[0], int) else None
            parts.append(f"{m} total {total}" if total is not None
                         else f"{m} mean {float(np.mean(vals)):.4f}")
        out.append(f"{g}: " + ", ".join(parts))
    return out


def cmd_ablation(args, outputs: _Outputs) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    overrides = {}
    if args.num_frames is not None:
        overrides["num_frames"] = args.num_frames
    if args.num_pedestrians is not None:
        overrides["num_pedestrians"] = args.num_pedestrians
    if args.suite == "tracking":
        specs = [heavy_occlusion_spec(s, **overrides) for s in seeds]
        rows = [r.__dict__ for r in tracking_ablation(specs)]
        group, metrics = "mode", ["mota", "idf1", "id_switches"]
    elif args.suite == "pairing":
        specs = [heavy_occlusion_spec(s, **overrides) for s in seeds]
        rows = pairing_ablation(specs, args.heavy_threshold)
        group, metrics = "method", ["mismatch_rate", "heavy_mismatch_rate"]
    else:
        specs = [gigapixel_spec(s, **overrides) for s in seeds]
        scale_sets = [[int(x) for x in s.split("+")] for s in args.scale_sets]
        rows = scale_ablation(specs, scale_sets)
        group, metrics = "scales", ["mota", "idf1", "id_switches"]
    _write_csv(outputs.add(args.out), rows)
    if args.figure:
        from .plotting import plot_ablation
        plot_ablation(outputs.add(args.figure), rows, group, metrics, f"{args.suite} ablation")
    for line in _summary(rows, group, metrics):
        print(line)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_tracker_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tracker settings (override --config)")
    for name, f in _CONFIG_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            g.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None,
                           help=f"default {'on' if default else 'off'}")
        else:
            g.add_argument(flag, dest=name, type=type(default), default=None,
                           help=f"default {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbtrack", description="Head-body multi-object tracking tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene: detections + ground truth")
    p.add_argument("--spec", help="scenario spec JSON (fields override the preset)")
    p.add_argument("--preset", choices=PRESETS, default="default")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--num-pedestrians", type=int, default=None)
    p.add_argument("--num-frames", type=int, default=None)
    p.add_argument("--occlusion-frames", type=int, default=5, help="crossing preset only")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tile", help="lay out tiling windows; optionally simulate a tiled detector")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--scales", type=int, nargs="+", default=list(DEFAULT_SCALES))
    p.add_argument("--overlap", type=float, default=DEFAULT_OVERLAP)
    p.add_argument("--out", required=True, help="tile plan JSON")
    p.add_argument("--detections", help="whole-frame detections to cut into tiles")
    p.add_argument("--tiled-out", help="where to write tile-local detections")
    p.add_argument("--input-size", type=int, default=1024, help="detector input side in pixels")
    p.add_argument("--all-visible", action="store_true",
                   help="report every contained object regardless of apparent size")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("fuse", help="lift tile-local detections to the frame and merge duplicates")
    p.add_argument("--plan", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--iou", type=float, default=FUSION_IOU)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("pair", help="pair body and head detections per frame")
    p.add_argument("--detections", required=True)
    p.add_argument("--method", choices=("embedding", "position"), default="embedding")
    p.add_argument("--max-distance", type=float, default=DEFAULT_MAX_DISTANCE)
    p.add_argument("--min-iou", type=float, default=DEFAULT_MIN_IOU)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("track", help="track paired detections, write MOTChallenge results")
    p.add_argument("--detections", required=True, help="paired detections (pair_hint set)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with tracker settings")
    p.add_argument("--body-only", action="store_true", help="ignore head detections")
    p.add_argument("--num-frames", type=int, default=None)
    _add_tracker_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score results against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True, help="JSON report")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--gt-head", help="head ground truth, for the pair mismatch rate")
    p.add_argument("--pairs", help="paired detections, for the pair mismatch rate")
    p.add_argument("--figure", help="cumulative error plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-check", help="loss values and finite-difference gradient check")
    p.add_argument("--batches", help="LossBatch JSON Lines")
    p.add_argument("--random", type=int, default=0, help="check N random batches instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-parts", type=int, default=8)
    p.add_argument("--max-dim", type=int, default=16)
    p.add_argument("--save-batches", help="write the random batches here")
    defaults = LossWeights()
    for name in ("mu", "beta", "delta", "sigma", "tau"):
        p.add_argument(f"--{name}", type=float, default=getattr(defaults, name))
    p.add_argument("--all-pairs", action="store_true",
                   help="sum pulls and pushes over every pair, ignoring identities")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=0.0)
    p.add_argument("--out", help="JSON report")
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("render", help="draw track boxes per frame")
    p.add_argument("--results", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--gt", help="overlay ground truth as dashed boxes")
    p.add_argument("--frames", type=int, nargs="+")
    p.add_argument("--every", type=int, default=25, help="frame step when --frames is absent")
    p.add_argument("--format", choices=("png", "pdf", "svg"), default="png")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("ablation", help="seeded ablation table (CSV) with an optional figure")
    p.add_argument("suite", choices=("tracking", "pairing", "scale"))
    p.add_argument("--seeds", type=int, default=20, help="number of scenes")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--num-frames", type=int, default=None)
    p.add_argument("--num-pedestrians", type=int, default=None)
    p.add_argument("--heavy-threshold", type=float, default=0.5)
    p.add_argument("--scale-sets", nargs="+", default=["1600", "6400", "1600+6400"])
    p.add_argument("--out", required=True, help="CSV table")
    p.add_argument("--figure", help="figure file (png, pdf or svg)")
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "render" and args.every < 1:
        print("hbtrack render: error: --every must be at least 1", file=sys.stderr)
        return 2
    outputs = _Outputs()
    try:
        return args.func(args, outputs)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        outputs.cleanup()
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hbtrack {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except BaseException:
        outputs.cleanup()
        raise


if __name__ == "__main__":
    sys.exit(main())
