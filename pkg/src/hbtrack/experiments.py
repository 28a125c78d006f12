"""End-to-end runs over synthetic scenes: pairing, tracking and evaluation.

These are the building blocks of the ablation reports: body-only against
head-body tracking, embedding against position pairing, and single- against
multi-scale tiling.  Sequence-level work can fan out over a process pool
whose size comes from ``HBTRACK_WORKERS`` (default 1, i.e. in-process).
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .gigapixel import fuse, lift, plan
from .metrics import EvalReport, evaluate, pair_mismatch_rate, trajectories_from_rows
from .pairing import (DEFAULT_MAX_DISTANCE, DEFAULT_MIN_IOU, BODY, HEAD, Detection,
                      PairedDetection, pair_by_embedding, pair_by_position)
from .scenario import Scenario, ScenarioSpec, TileDetectorModel, generate, tile_detections
from .tracker import Tracker, TrackerConfig, TrackOutput, strip_heads

__all__ = [
    "WORKERS_ENV",
    "worker_count",
    "parallel_map",
    "pair_frames",
    "track_frames",
    "evaluate_rows",
    "heavy_occlusion_spec",
    "gigapixel_spec",
    "AblationRow",
    "tracking_ablation",
    "pairing_ablation",
    "scale_ablation",
]

WORKERS_ENV = "HBTRACK_WORKERS"


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def parallel_map(fn: Callable, items: Iterable, workers: Optional[int] = None) -> list:
    """``map`` that keeps input order; uses processes when more than one worker."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def pair_frames(detections: Mapping[int, Sequence[Detection]], method: str = "embedding",
                max_distance: float = DEFAULT_MAX_DISTANCE,
                min_iou: float = DEFAULT_MIN_IOU) -> dict[int, list[PairedDetection]]:
    out = {}
    for frame in sorted(detections):
        dets = detections[frame]
        bodies = [d for d in dets if d.part == BODY]
        heads = [d for d in dets if d.part == HEAD]
        if method == "embedding":
            out[frame] = pair_by_embedding(bodies, heads, max_distance)
        elif method == "position":
            out[frame] = pair_by_position(bodies, heads, min_iou)
        else:
            raise ValueError(f"unknown pairing method {method!r}")
    return out


def track_frames(paired: Mapping[int, Sequence[PairedDetection]], num_frames: Optional[int] = None,
                 config: Optional[TrackerConfig] = None, body_only: bool = False) -> list[TrackOutput]:
    """Run a fresh tracker over frames ``1..num_frames`` (empty frames included)."""
    last = num_frames if num_frames is not None else max(paired, default=0)
    tracker = Tracker(config)
    rows = []
    for frame in range(1, last + 1):
        dets = list(paired.get(frame, ()))
        if body_only:
            dets = strip_heads(dets)
        rows.extend(tracker.step(frame, dets))
    return rows


def evaluate_rows(scenario: Scenario, rows: Sequence[TrackOutput], iou_match: float = 0.5) -> EvalReport:
    hyp = trajectories_from_rows((r.frame, r.track_id, r.box) for r in rows)
    return evaluate(scenario.gt_trajectories(), hyp, iou_match)


def heavy_occlusion_spec(seed: int, num_pedestrians: int = 30, num_frames: int = 200,
                         **overrides) -> ScenarioSpec:
    """Crowded street: 30 walkers in a 1280x720 view, long body occlusions."""
    base = dict(seed=seed, num_pedestrians=num_pedestrians, num_frames=num_frames,
                arena=(1280, 720), body_size_range=(80.0, 140.0), speed_range=(0.8, 2.5),
                turn_probability=0.03)
    base.update(overrides)
    return ScenarioSpec(**base)


def gigapixel_spec(seed: int, num_pedestrians: int = 40, num_frames: int = 40,
                   **overrides) -> ScenarioSpec:
    """Very wide view with far walkers tens of pixels tall and near ones near 2000 px."""
    base = dict(seed=seed, num_pedestrians=num_pedestrians, num_frames=num_frames,
                arena=(12800, 6400), body_size_range=(40.0, 1800.0), speed_range=(0.8, 2.5),
                speed_relative=True, horizon=0.3, turn_probability=0.02,
                body_drop_when_occluded=0.9, head_drop_when_occluded=0.9)
    base.update(overrides)
    return ScenarioSpec(**base)


@dataclass(frozen=True)
class AblationRow:
    seed: int
    mode: str
    mota: float
    idf1: float
    id_switches: int
    false_positives: int
    misses: int
    gt_count: int


def _row(seed: int, mode: str, rep: EvalReport) -> AblationRow:
    return AblationRow(seed, mode, rep.mota, rep.idf1, rep.id_switches, rep.false_positives,
                       rep.misses, rep.gt_count)


def _tracking_job(args) -> list[AblationRow]:
    spec, config = args
    scn = generate(spec)
    paired = pair_frames(scn.detections, "embedding")
    rows = []
    for mode, body_only in (("body", True), ("body+head", False)):
        out = track_frames(paired, spec.num_frames, config, body_only=body_only)
        rows.append(_row(spec.seed, mode, evaluate_rows(scn, out)))
    return rows


def tracking_ablation(specs: Sequence[ScenarioSpec], config: Optional[TrackerConfig] = None,
                      workers: Optional[int] = None) -> list[AblationRow]:
    """Body-only versus head-body tracking on the same paired detections."""
    config = config or TrackerConfig()
    chunks = parallel_map(_tracking_job, [(s, config) for s in specs], workers)
    return [row for chunk in chunks for row in chunk]


def _pairing_job(args):
    spec, threshold = args
    scn = generate(spec)
    gt = scn.gt_pairs()
    mask = scn.occluded_mask(threshold)
    out = {}
    for method in ("embedding", "position"):
        paired = pair_frames(scn.detections, method)
        out[method] = (pair_mismatch_rate(gt, paired), pair_mismatch_rate(gt, paired, include=mask))
    return spec.seed, out


def pairing_ablation(specs: Sequence[ScenarioSpec], heavy_threshold: float = 0.5,
                     workers: Optional[int] = None) -> list[dict]:
    """Pair mismatch rate per scene and method, overall and on heavily occluded pairs."""
    results = parallel_map(_pairing_job, [(s, heavy_threshold) for s in specs], workers)
    rows = []
    for seed, out in results:
        for method, (overall, heavy) in out.items():
            rows.append({"seed": seed, "method": method, "mismatch_rate": overall,
                         "heavy_mismatch_rate": heavy})
    return rows


def tiled_detections(scn: Scenario, scales: Sequence[int], overlap: float = 0.3,
                     model: Optional[TileDetectorModel] = None,
                     fusion_iou: float = 0.7) -> dict[int, list[Detection]]:
    """Whole-sequence detections as a tiled detector at ``scales`` would fuse them."""
    width, height = scn.spec.arena
    tp = plan(width, height, scales, overlap)
    model = model or TileDetectorModel()
    out = {}
    for frame in scn.frames:
        per_tile = tile_detections(scn.detections.get(frame, []), tp, model)
        out[frame] = fuse(lift(per_tile, tp), fusion_iou)
    return out


def _scale_job(args):
    spec, scale_sets, config = args
    scn = generate(spec)
    result = {}
    for scales in scale_sets:
        dets = tiled_detections(scn, scales)
        paired = pair_frames(dets, "embedding")
        rows = track_frames(paired, spec.num_frames, config)
        result["+".join(str(s) for s in scales)] = evaluate_rows(scn, rows)
    return spec.seed, result


def scale_ablation(specs: Sequence[ScenarioSpec], scale_sets: Sequence[Sequence[int]],
                   config: Optional[TrackerConfig] = None, workers: Optional[int] = None) -> list[dict]:
    config = config or TrackerConfig()
    results = parallel_map(_scale_job, [(s, [tuple(x) for x in scale_sets], config) for s in specs],
                           workers)
    rows = []
    for seed, per in results:
        for key, rep in per.items():
            rows.append({"seed": seed, "scales": key, "mota": rep.mota, "idf1": rep.idf1,
                         "id_switches": rep.id_switches})
    return rows


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=seed)
