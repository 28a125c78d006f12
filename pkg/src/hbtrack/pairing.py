"""Grouping body and head detections of one frame into pairs.

A frame's output is a list of :class:`PairedDetection` records: matched
``(body, head)`` pairs, lone bodies ``(body, None)`` and lone heads
``(None, head)``.  Every input detection lands in exactly one record.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .assignment import solve_costs
from .geometry import BBox, iou_matrix

__all__ = [
    "BODY",
    "HEAD",
    "Detection",
    "PairedDetection",
    "pair_by_embedding",
    "pair_by_position",
    "pairs_from_hints",
    "DEFAULT_MAX_DISTANCE",
    "DEFAULT_MIN_IOU",
]

BODY = "body"
HEAD = "head"

DEFAULT_MAX_DISTANCE = 2.0
DEFAULT_MIN_IOU = 0.05


@dataclass(frozen=True, eq=False)
class Detection:
    box: BBox
    part: str
    embedding: np.ndarray
    frame: int
    tile_id: Optional[int] = None
    pair_hint: Optional[int] = None

    def __post_init__(self):
        if self.part not in (BODY, HEAD):
            raise ValueError(f"part must be 'body' or 'head', got {self.part!r}")
        emb = np.array(self.embedding, dtype=float).reshape(-1)
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)

    @property
    def score(self) -> float:
        return self.box.score

    def replace(self, **changes) -> "Detection":
        return replace(self, **changes)

    def same_as(self, other: "Detection") -> bool:
        return (self.box == other.box and self.part == other.part and self.frame == other.frame
                and self.tile_id == other.tile_id and self.pair_hint == other.pair_hint
                and np.array_equal(self.embedding, other.embedding))


@dataclass(frozen=True, eq=False)
class PairedDetection:
    body: Optional[Detection] = None
    head: Optional[Detection] = None

    def __post_init__(self):
        if self.body is None and self.head is None:
            raise ValueError("a paired detection needs a body, a head, or both")
        if self.body is not None and self.body.part != BODY:
            raise ValueError("body slot holds a head detection")
        if self.head is not None and self.head.part != HEAD:
            raise ValueError("head slot holds a body detection")
        if self.body is not None and self.head is not None and self.body.frame != self.head.frame:
            raise ValueError("body and head come from different frames")

    @property
    def frame(self) -> int:
        return (self.body or self.head).frame

    @property
    def kind(self) -> str:
        if self.body is not None and self.head is not None:
            return "bh"
        return "b" if self.body is not None else "h"


def _check_frame(bodies, heads):
    frames = {d.frame for d in bodies} | {d.frame for d in heads}
    if len(frames) > 1:
        raise ValueError(f"pairing expects detections from one frame, got frames {sorted(frames)}")
    for d in bodies:
        if d.part != BODY:
            raise ValueError("bodies list contains a head detection")
    for d in heads:
        if d.part != HEAD:
            raise ValueError("heads list contains a body detection")


def _records(bodies, heads, matches) -> list[PairedDetection]:
    paired_b = {i for i, _ in matches}
    paired_h = {j for _, j in matches}
    out = [PairedDetection(bodies[i], heads[j]) for i, j in sorted(matches)]
    out += [PairedDetection(body=b) for i, b in enumerate(bodies) if i not in paired_b]
    out += [PairedDetection(head=h) for j, h in enumerate(heads) if j not in paired_h]
    return out


def embedding_distances(bodies: Sequence[Detection], heads: Sequence[Detection]) -> np.ndarray:
    if not bodies or not heads:
        return np.zeros((len(bodies), len(heads)))
    eb = np.stack([d.embedding for d in bodies])
    eh = np.stack([d.embedding for d in heads])
    if eb.shape[1] != eh.shape[1]:
        raise ValueError(f"embedding dimension mismatch: {eb.shape[1]} vs {eh.shape[1]}")
    diff = eb[:, None, :] - eh[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def pair_by_embedding(bodies: Sequence[Detection], heads: Sequence[Detection],
                      max_distance: float = DEFAULT_MAX_DISTANCE) -> list[PairedDetection]:
    """Pair by Euclidean embedding distance, leaving pairs beyond ``max_distance`` apart."""
    bodies, heads = list(bodies), list(heads)
    _check_frame(bodies, heads)
    dist = embedding_distances(bodies, heads)
    result = solve_costs(dist, gate=max_distance)
    return _records(bodies, heads, result.matches)


def pair_by_position(bodies: Sequence[Detection], heads: Sequence[Detection],
                     min_iou: float = DEFAULT_MIN_IOU) -> list[PairedDetection]:
    """Baseline pairing on ``1 - IoU(head, body)``; pairs below ``min_iou`` stay apart."""
    if not 0.0 <= min_iou <= 1.0:
        raise ValueError(f"min_iou must lie in [0, 1], got {min_iou}")
    bodies, heads = list(bodies), list(heads)
    _check_frame(bodies, heads)
    overlap = iou_matrix([d.box for d in bodies], [d.box for d in heads])
    cost = 1.0 - overlap
    # gate on the overlap itself so float rounding in 1 - IoU cannot flip a pair
    gate = 1.0 - min_iou
    cost = np.where(overlap >= min_iou, np.minimum(cost, gate), 2.0)
    result = solve_costs(cost, gate=gate)
    return _records(bodies, heads, result.matches)


def pairs_from_hints(detections: Sequence[Detection]) -> list[PairedDetection]:
    """Rebuild pair records for one frame from detector-emitted ``pair_hint`` keys."""
    groups: dict[int, dict[str, Detection]] = {}
    singles = []
    for d in detections:
        if d.pair_hint is None:
            singles.append(PairedDetection(body=d) if d.part == BODY else PairedDetection(head=d))
            continue
        slot = groups.setdefault(d.pair_hint, {})
        if d.part in slot:
            raise ValueError(f"frame {d.frame}: pair_hint {d.pair_hint} has two {d.part} detections")
        slot[d.part] = d
    out = [PairedDetection(g.get(BODY), g.get(HEAD)) for _, g in sorted(groups.items())]
    return out + singles
