"""CLEAR-MOT and identity metrics.

Trajectory sets are plain mappings ``frame -> [(id, BBox), ...]``.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .assignment import solve_costs
from .geometry import BBox, iou_matrix
from .pairing import PairedDetection

__all__ = [
    "EvalReport",
    "FrameEvents",
    "Trajectories",
    "evaluate",
    "pair_mismatch_rate",
    "trajectories_from_rows",
]

Trajectories = Mapping[int, Sequence[tuple[int, BBox]]]


@dataclass
class FrameEvents:
    frame: int
    matches: int
    false_positives: int
    misses: int
    switches: int


@dataclass
class EvalReport:
    mota: float
    idf1: float
    id_switches: int
    false_positives: int
    misses: int
    gt_count: int
    matches: int = 0
    idtp: int = 0
    hyp_count: int = 0
    pair_mismatch_rate: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def trajectories_from_rows(rows) -> dict[int, list[tuple[int, BBox]]]:
    """Group ``(frame, id, BBox)`` rows by frame."""
    out: dict[int, list[tuple[int, BBox]]] = defaultdict(list)
    for frame, tid, box in rows:
        out[int(frame)].append((int(tid), box))
    return dict(out)


def _check_unique(traj: Trajectories, name: str) -> None:
    for frame, items in traj.items():
        ids = [tid for tid, _ in items]
        if len(ids) != len(set(ids)):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"{name}: duplicate ids {dup} in frame {frame}")


def evaluate(gt: Trajectories, hyp: Trajectories, iou_match: float = 0.5,
             per_frame: Optional[list] = None) -> EvalReport:
    """CLEAR-MOT counts, MOTA and IDF1.

    Per frame, correspondences kept from the previous frame survive while
    their IoU stays at or above ``iou_match``; the rest are assigned by
    Hungarian matching on ``1 - IoU``.  An identity switch is counted when a
    ground-truth object is matched to a different hypothesis than the one it
    was last matched to.  Pass a list as ``per_frame`` to collect
    :class:`FrameEvents`.
    """
    if not 0.0 < iou_match <= 1.0:
        raise ValueError(f"iou_match must lie in (0, 1], got {iou_match}")
    _check_unique(gt, "ground truth")
    _check_unique(hyp, "hypothesis")

    frames = sorted(set(gt) | set(hyp))
    last_match: dict[int, int] = {}
    active: dict[int, int] = {}
    fp = fn = sw = tp = 0
    n_gt = n_hyp = 0
    # identity overlap counts for IDF1
    pair_tp: dict[tuple[int, int], int] = defaultdict(int)
    gt_len: dict[int, int] = defaultdict(int)
    hyp_len: dict[int, int] = defaultdict(int)
    dist_gate = 1.0 - iou_match

    for f in frames:
        g = list(gt.get(f, ()))
        h = list(hyp.get(f, ()))
        n_gt += len(g)
        n_hyp += len(h)
        for oid, _ in g:
            gt_len[oid] += 1
        for hid, _ in h:
            hyp_len[hid] += 1
        ov = iou_matrix([b for _, b in g], [b for _, b in h])
        ok = ov >= iou_match
        for i, j in zip(*np.nonzero(ok)):
            pair_tp[(g[i][0], h[j][0])] += 1

        gidx = {oid: i for i, (oid, _) in enumerate(g)}
        hidx = {hid: j for j, (hid, _) in enumerate(h)}
        matched: list[tuple[int, int]] = []
        used_g, used_h = set(), set()
        for oid, hid in active.items():
            i, j = gidx.get(oid), hidx.get(hid)
            if i is not None and j is not None and ok[i, j]:
                matched.append((i, j))
                used_g.add(i)
                used_h.add(j)
        rest_g = [i for i in range(len(g)) if i not in used_g]
        rest_h = [j for j in range(len(h)) if j not in used_h]
        if rest_g and rest_h:
            sub = 1.0 - ov[np.ix_(rest_g, rest_h)]
            sub = np.where(ok[np.ix_(rest_g, rest_h)], np.minimum(sub, dist_gate), 2.0)
            res = solve_costs(sub, gate=dist_gate)
            matched += [(rest_g[a], rest_h[b]) for a, b in res.matches]

        switches = 0
        active = {}
        for i, j in matched:
            oid, hid = g[i][0], h[j][0]
            if oid in last_match and last_match[oid] != hid:
                switches += 1
            last_match[oid] = hid
            active[oid] = hid
        m = len(matched)
        tp += m
        sw += switches
        fp += len(h) - m
        fn += len(g) - m
        if per_frame is not None:
            per_frame.append(FrameEvents(f, m, len(h) - m, len(g) - m, switches))

    mota = 1.0 - (fn + fp + sw) / n_gt if n_gt else float("nan")
    idtp = _identity_tp(pair_tp, sorted(gt_len), sorted(hyp_len))
    denom = n_gt + n_hyp
    idf1 = 2.0 * idtp / denom if denom else 1.0
    return EvalReport(mota=mota, idf1=idf1, id_switches=sw, false_positives=fp, misses=fn,
                      gt_count=n_gt, matches=tp, idtp=idtp, hyp_count=n_hyp)


def _identity_tp(pair_tp, gt_ids, hyp_ids) -> int:
    if not pair_tp:
        return 0
    gi = {o: k for k, o in enumerate(gt_ids)}
    hi = {h: k for k, h in enumerate(hyp_ids)}
    counts = np.zeros((len(gt_ids), len(hyp_ids)))
    for (o, h), c in pair_tp.items():
        counts[gi[o], hi[h]] = c
    res = solve_costs(counts.max() - counts)
    return int(sum(counts[i, j] for i, j in res.matches))


def _align(gt_boxes: Sequence[BBox], det_boxes: Sequence[BBox], thr: float) -> dict[int, int]:
    if not gt_boxes or not det_boxes:
        return {}
    ov = iou_matrix(list(gt_boxes), list(det_boxes))
    cost = np.where(ov >= thr, np.minimum(1.0 - ov, 1.0 - thr), 2.0)
    res = solve_costs(cost, gate=1.0 - thr)
    return dict(res.matches)


def pair_mismatch_rate(gt_pairs: Mapping[int, Sequence[tuple[BBox, BBox]]],
                       hyp_pairs: Mapping[int, Sequence[PairedDetection]],
                       include: Optional[Mapping[int, Sequence[bool]]] = None,
                       iou_threshold: float = 0.5) -> float:
    """Share of ground-truth pairs whose parts were both found but split up.

    Per frame, ground-truth bodies and heads are aligned one-to-one with
    detected bodies and heads at IoU >= ``iou_threshold``.  A pair counts when
    both of its parts were aligned; it is a mismatch when the two detections
    sit in different output records.  ``include`` optionally masks which
    ground-truth pairs are counted (alignment still uses all of them).
    Returns 0.0 when no pair qualifies.
    """
    eligible = mismatched = 0
    for frame, pairs in gt_pairs.items():
        records = list(hyp_pairs.get(frame, ()))
        bodies, heads = [], []
        for k, rec in enumerate(records):
            if rec.body is not None:
                bodies.append((k, rec.body.box))
            if rec.head is not None:
                heads.append((k, rec.head.box))
        body_map = _align([b for b, _ in pairs], [b for _, b in bodies], iou_threshold)
        head_map = _align([h for _, h in pairs], [b for _, b in heads], iou_threshold)
        mask = include.get(frame) if include is not None else None
        for n in range(len(pairs)):
            if mask is not None and not mask[n]:
                continue
            if n in body_map and n in head_map:
                eligible += 1
                if bodies[body_map[n]][0] != heads[head_map[n]][0]:
                    mismatched += 1
    return mismatched / eligible if eligible else 0.0
