"""Head-body cascade tracker.

Each frame's paired detections are split into full pairs, lone bodies and
lone heads, and associated with the live tracks in that order::

    stage 1  all tracks        <-> body+head pairs
    stage 2  leftover tracks   <-> lone bodies
    stage 3  leftover tracks   <-> lone heads   (tracks with head history only)

Unmatched tracks older than ``max_age`` frames are dropped and new tracks are
started from leftover pairs and lone bodies.  Lone heads never start a track;
they only keep existing tracks alive while the body is hidden.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, fields
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .assignment import solve_costs
from .geometry import BBox, iou_matrix
from .motion import ConstantVelocity, MotionState
from .pairing import PairedDetection

__all__ = [
    "TrackStatus",
    "Track",
    "TrackerConfig",
    "TrackOutput",
    "AssoResult",
    "Tracker",
    "association_cost",
    "asso",
    "partition",
    "strip_heads",
]

log = logging.getLogger(__name__)

STAGES = ("bh", "b", "h")
# mean components moved together when one part drags the other along
_TRANSLATION = np.array([0, 1, 4, 5])


class TrackStatus(str, enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    REMOVED = "removed"


@dataclass(frozen=True)
class TrackerConfig:
    high_conf: float = 0.6
    low_conf: float = 0.1
    iou_gate: float = 0.7
    fuse_lambda: float = 0.5
    max_age: int = 10
    appearance_momentum: float = 0.9
    use_low_conf_stage: bool = False
    min_hits: int = 2
    stage1_head_iou: bool = False
    couple_parts: bool = True

    def __post_init__(self):
        if not 0.0 <= self.low_conf <= self.high_conf <= 1.0:
            raise ValueError("need 0 <= low_conf <= high_conf <= 1")
        if not 0.0 <= self.fuse_lambda <= 1.0:
            raise ValueError("fuse_lambda must lie in [0, 1]")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError("iou_gate must lie in [0, 1]")
        if self.max_age < 1:
            raise ValueError("max_age must be at least 1")
        if not 0.0 <= self.appearance_momentum <= 1.0:
            raise ValueError("appearance_momentum must lie in [0, 1]")
        if self.min_hits < 1:
            raise ValueError("min_hits must be at least 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.field_names()}


@dataclass(eq=False)
class Track:
    id: int
    body_state: MotionState
    head_state: Optional[MotionState]
    appearance: np.ndarray
    frames_since_update: int = 0
    hits: int = 1
    status: TrackStatus = TrackStatus.TENTATIVE
    last_score: float = 1.0
    last_stage: str = "bh"
    history: list = field(default_factory=list, repr=False)

    @property
    def is_confirmed(self) -> bool:
        return self.status == TrackStatus.CONFIRMED

    def predicted_box(self, part: str = "body") -> BBox:
        state = self.body_state if part == "body" else self.head_state
        return state.box()


class TrackOutput(NamedTuple):
    frame: int
    track_id: int
    box: BBox
    stage: str


class AssoResult(NamedTuple):
    matches: list
    remaining_tracks: list
    remaining_detections: list


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def _detection_embedding(det: PairedDetection, stage: str) -> np.ndarray:
    if stage == "bh":
        return _unit(_unit(det.body.embedding) + _unit(det.head.embedding))
    if stage == "b":
        return _unit(det.body.embedding)
    return _unit(det.head.embedding)


def _detection_score(det: PairedDetection, stage: str) -> float:
    return det.head.score if stage == "h" else det.body.score


def strip_heads(detections: Sequence[PairedDetection]) -> list[PairedDetection]:
    """Body-only view of a frame: pairs lose their head, lone heads vanish."""
    return [PairedDetection(body=d.body) for d in detections if d.body is not None]


def partition(detections: Sequence[PairedDetection]) -> dict[str, list[PairedDetection]]:
    out = {s: [] for s in STAGES}
    for d in detections:
        out[d.kind].append(d)
    return out


def association_cost(tracks: Sequence[Track], detections: Sequence[PairedDetection],
                     stage: str, config: TrackerConfig, use_appearance: bool = True):
    """Fused cost matrix and the IoU-distance matrix it is gated on."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if not tracks or not detections:
        shape = (len(tracks), len(detections))
        return np.zeros(shape), np.zeros(shape)
    if stage == "h":
        overlap = iou_matrix([t.head_state.box() for t in tracks], [d.head.box for d in detections])
    else:
        overlap = iou_matrix([t.body_state.box() for t in tracks], [d.body.box for d in detections])
        if stage == "bh" and config.stage1_head_iou:
            head_overlap = np.array([
                [iou_matrix([t.head_state.box()], [d.head.box])[0, 0] if t.head_state is not None
                 else overlap[i, j] for j, d in enumerate(detections)]
                for i, t in enumerate(tracks)])
            overlap = (overlap + head_overlap) / 2.0
    iou_dist = 1.0 - overlap
    if not use_appearance:
        return iou_dist, iou_dist
    track_emb = np.stack([t.appearance for t in tracks])
    det_emb = np.stack([_detection_embedding(d, stage) for d in detections])
    cos_dist = np.clip(1.0 - track_emb @ det_emb.T, 0.0, 2.0)
    lam = config.fuse_lambda
    return lam * iou_dist + (1.0 - lam) * cos_dist, iou_dist


def _gated_match(cost: np.ndarray, iou_dist: np.ndarray, gate: float):
    # forbidden entries are pushed above a gate that no admissible entry reaches
    ceiling = float(cost.max(initial=0.0)) + 1.0
    masked = np.where(iou_dist <= gate, cost, ceiling + 1.0)
    return solve_costs(masked, gate=ceiling)


def _apply_match(track: Track, det: PairedDetection, stage: str, config: TrackerConfig,
                 model: ConstantVelocity) -> None:
    if stage in ("bh", "b"):
        prior = track.body_state
        track.body_state = model.update(prior, det.body.box)
        if config.couple_parts and stage == "b" and track.head_state is not None:
            track.head_state = _drag(track.head_state, prior, track.body_state)
    if stage == "bh":
        if track.head_state is None:
            track.head_state = model.initiate(det.head.box)
        else:
            track.head_state = model.update(track.head_state, det.head.box)
    if stage == "h":
        prior = track.head_state
        track.head_state = model.update(prior, det.head.box)
        if config.couple_parts:
            track.body_state = _drag(track.body_state, prior, track.head_state)

    emb = _detection_embedding(det, stage)
    m = config.appearance_momentum
    track.appearance = _unit(m * track.appearance + (1.0 - m) * emb)
    track.frames_since_update = 0
    track.hits += 1
    track.last_stage = stage
    track.last_score = _detection_score(det, stage)
    if track.status == TrackStatus.TENTATIVE and track.hits >= config.min_hits:
        track.status = TrackStatus.CONFIRMED


def _drag(state: MotionState, prior: MotionState, posterior: MotionState) -> MotionState:
    """Translate an unobserved part by the correction its partner just received."""
    delta = np.zeros_like(state.mean)
    delta[_TRANSLATION] = posterior.mean[_TRANSLATION] - prior.mean[_TRANSLATION]
    return state.translated(delta)


def asso(tracks: Sequence[Track], detections: Sequence[PairedDetection], stage: str,
         config: TrackerConfig, model: Optional[ConstantVelocity] = None) -> AssoResult:
    """One association stage.

    Detections below ``low_conf`` are ignored, those at or above ``high_conf``
    form the primary pool.  Matched tracks are updated in place.  Leftover
    detections are only those of the primary pool.
    """
    model = model or ConstantVelocity()
    tracks = list(tracks)
    if stage == "h":
        eligible = [t for t in tracks if t.head_state is not None]
        ineligible = [t for t in tracks if t.head_state is None]
    else:
        eligible, ineligible = tracks, []

    high, low = [], []
    for d in detections:
        if d.kind != stage:
            raise ValueError(f"stage {stage!r} got a {d.kind!r} detection")
        s = _detection_score(d, stage)
        if s >= config.high_conf:
            high.append(d)
        elif s >= config.low_conf:
            low.append(d)

    matches = []
    cost, iou_dist = association_cost(eligible, high, stage, config)
    result = _gated_match(cost, iou_dist, config.iou_gate)
    for i, j in result.matches:
        matches.append((eligible[i], high[j]))
    left_tracks = [eligible[i] for i in result.unmatched_rows]
    left_high = [high[j] for j in result.unmatched_cols]

    if config.use_low_conf_stage and low and left_tracks:
        cost, iou_dist = association_cost(left_tracks, low, stage, config, use_appearance=False)
        second = _gated_match(cost, iou_dist, config.iou_gate)
        for i, j in second.matches:
            matches.append((left_tracks[i], low[j]))
        left_tracks = [left_tracks[i] for i in second.unmatched_rows]

    for track, det in matches:
        _apply_match(track, det, stage, config, model)

    remaining = [t for t in tracks if t in left_tracks or t in ineligible]
    return AssoResult(matches, remaining, left_high)


class Tracker:
    """Sequential per-sequence tracker state.

    Calls to :meth:`step` must come in increasing frame order.
    """

    def __init__(self, config: Optional[TrackerConfig] = None,
                 model: Optional[ConstantVelocity] = None):
        self.config = config or TrackerConfig()
        self.model = model or ConstantVelocity()
        self.tracks: list[Track] = []
        self.frame = 0
        self._next_id = 1

    def _new_track(self, det: PairedDetection, stage: str) -> Track:
        head_state = self.model.initiate(det.head.box) if stage == "bh" else None
        status = TrackStatus.CONFIRMED if self.config.min_hits <= 1 else TrackStatus.TENTATIVE
        track = Track(
            id=self._next_id,
            body_state=self.model.initiate(det.body.box),
            head_state=head_state,
            appearance=_detection_embedding(det, stage),
            status=status,
            last_score=det.body.score,
            last_stage=stage,
        )
        self._next_id += 1
        return track

    def step(self, frame: int, detections: Sequence[PairedDetection]) -> list[TrackOutput]:
        if frame <= self.frame:
            raise ValueError(f"frame {frame} is not after the previous frame {self.frame}")
        for d in detections:
            if d.frame != frame:
                raise ValueError(f"detection from frame {d.frame} passed to step for frame {frame}")
        gap = frame - self.frame
        self.frame = frame
        for track in self.tracks:
            for _ in range(gap):
                track.body_state = self.model.predict(track.body_state)
                if track.head_state is not None:
                    track.head_state = self.model.predict(track.head_state)
            track.frames_since_update += gap
        cfg = self.config
        # frames skipped over count as misses
        for track in self.tracks:
            missed = track.frames_since_update - 1
            if missed > cfg.max_age or (missed > 0 and track.status == TrackStatus.TENTATIVE):
                track.status = TrackStatus.REMOVED
        self.tracks = [t for t in self.tracks if t.status != TrackStatus.REMOVED]

        parts = partition(detections)
        r1 = asso(self.tracks, parts["bh"], "bh", cfg, self.model)
        r2 = asso(r1.remaining_tracks, parts["b"], "b", cfg, self.model)
        r3 = asso(r2.remaining_tracks, parts["h"], "h", cfg, self.model)

        for track in r3.remaining_tracks:
            if track.status == TrackStatus.TENTATIVE or track.frames_since_update > cfg.max_age:
                track.status = TrackStatus.REMOVED
        self.tracks = [t for t in self.tracks if t.status != TrackStatus.REMOVED]

        for det in r1.remaining_detections:
            self.tracks.append(self._new_track(det, "bh"))
        for det in r2.remaining_detections:
            self.tracks.append(self._new_track(det, "b"))

        out = []
        for track in sorted(self.tracks, key=lambda t: t.id):
            if track.is_confirmed and track.frames_since_update == 0:
                out.append(TrackOutput(frame, track.id, track.body_state.box(track.last_score),
                                       track.last_stage))
        return out

    def run(self, frames: Iterable[tuple[int, Sequence[PairedDetection]]]) -> list[TrackOutput]:
        rows = []
        for frame, dets in frames:
            rows.extend(self.step(frame, dets))
        return rows
