"""Deterministic synthetic crowd scenes with depth-ordered occlusion.

Pedestrians walk mostly horizontally in lanes; a lane lower in the image is
nearer to the camera, so its walkers are drawn larger and occlude the ones
behind.  Because the farther walker's box starts higher up, its head usually
pokes out above a nearer walker's body.

The emitter mimics a joint head-body detector: jittered boxes, scores that
fall with visibility, body/head drop-outs under occlusion, and embeddings
built from a per-identity anchor so that the two parts of one pedestrian are
close and different pedestrians are far apart.

All randomness comes from a single ``numpy.random.Generator`` seeded from the
spec, so a spec always produces the same scene.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .geometry import BBox
from .gigapixel import Tile, TilePlan, to_local
from .pairing import BODY, HEAD, Detection, PairedDetection

__all__ = [
    "ScoreModel",
    "ScenarioSpec",
    "TruthRecord",
    "Scenario",
    "generate",
    "crossing_scenario",
    "TileDetectorModel",
    "tile_detections",
    "covered_fraction",
]


@dataclass(frozen=True)
class ScoreModel:
    """``score = clip(base + slope * visibility + N(0, noise))``."""
    base: float = 0.55
    slope: float = 0.4
    noise: float = 0.05

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("score noise must be non-negative")


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    num_pedestrians: int = 30
    num_frames: int = 200
    arena: tuple[int, int] = (1920, 1080)
    speed_range: tuple[float, float] = (0.8, 2.5)
    speed_relative: bool = False
    body_size_range: tuple[float, float] = (90.0, 150.0)
    body_aspect: float = 0.4
    head_ratio: float = 0.2
    head_width_ratio: float = 0.5
    occlusion_visibility_threshold: float = 0.5
    detection_noise: float = 1.0
    embedding_dim: int = 32
    embedding_noise: float = 0.04
    embedding_scale: float = 2.0
    part_offset: float = 0.1
    body_drop_when_occluded: float = 0.9
    head_drop_when_occluded: float = 0.9
    score_model: ScoreModel = field(default_factory=ScoreModel)
    turn_probability: float = 0.02
    horizon: float = 0.3
    vertical_wobble: float = 0.15

    def __post_init__(self):
        if isinstance(self.score_model, Mapping):
            object.__setattr__(self, "score_model", ScoreModel(**self.score_model))
        object.__setattr__(self, "arena", tuple(int(v) for v in self.arena))
        object.__setattr__(self, "speed_range", tuple(float(v) for v in self.speed_range))
        object.__setattr__(self, "body_size_range", tuple(float(v) for v in self.body_size_range))
        for name in ("num_pedestrians", "num_frames", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("body_drop_when_occluded", "head_drop_when_occluded",
                     "occlusion_visibility_threshold", "turn_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.head_ratio < 0.5:
            raise ValueError("head_ratio must lie in (0, 0.5)")
        if not 0.0 < self.head_width_ratio <= 1.0:
            raise ValueError("head_width_ratio must lie in (0, 1]")
        lo, hi = self.body_size_range
        if not 0 < lo <= hi:
            raise ValueError("body_size_range must be positive and ordered")
        if not 0 <= self.speed_range[0] <= self.speed_range[1]:
            raise ValueError("speed_range must be non-negative and ordered")
        if min(self.detection_noise, self.embedding_noise) < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0.0 <= self.horizon < 1.0:
            raise ValueError("horizon must lie in [0, 1)")
        width, height = self.arena
        if hi > height * (1.0 - self.horizon) or hi * self.body_aspect * 2 > width:
            raise ValueError(
                f"arena {width}x{height} is too small for bodies up to {hi} px tall")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioSpec":
        return cls(**dict(data))


class TruthRecord(NamedTuple):
    track_id: int
    body: BBox
    head: BBox
    body_visibility: float
    head_visibility: float


@dataclass(eq=False)
class Scenario:
    spec: ScenarioSpec
    truth: dict[int, list[TruthRecord]]
    detections: dict[int, list[Detection]]
    identities: dict[int, list[int]]
    anchors: np.ndarray

    @property
    def frames(self) -> range:
        return range(1, self.spec.num_frames + 1)

    def gt_trajectories(self) -> dict[int, list[tuple[int, BBox]]]:
        return {f: [(r.track_id, r.body) for r in recs] for f, recs in self.truth.items()}

    def gt_pairs(self) -> dict[int, list[tuple[BBox, BBox]]]:
        return {f: [(r.body, r.head) for r in recs] for f, recs in self.truth.items()}

    def occluded_mask(self, threshold: Optional[float] = None) -> dict[int, list[bool]]:
        thr = self.spec.occlusion_visibility_threshold if threshold is None else threshold
        return {f: [r.body_visibility < thr for r in recs] for f, recs in self.truth.items()}

    def split(self, frame: int) -> tuple[list[Detection], list[Detection]]:
        dets = self.detections.get(frame, [])
        return [d for d in dets if d.part == BODY], [d for d in dets if d.part == HEAD]

    def oracle_pairs(self, frame: int) -> list[PairedDetection]:
        """Pair records built from the hidden identities (what a perfect pairer returns)."""
        by_id: dict[int, dict[str, Detection]] = {}
        for det, oid in zip(self.detections.get(frame, []), self.identities.get(frame, [])):
            by_id.setdefault(oid, {})[det.part] = det
        return [PairedDetection(p.get(BODY), p.get(HEAD)) for _, p in sorted(by_id.items())]


# ---------------------------------------------------------------------------
# geometry helpers

def covered_fraction(target: np.ndarray, occluders: np.ndarray) -> float:
    """Fraction of ``target`` (x1, y1, x2, y2) covered by the union of ``occluders``."""
    area = (target[2] - target[0]) * (target[3] - target[1])
    if area <= 0 or len(occluders) == 0:
        return 0.0
    clipped = np.column_stack([
        np.maximum(occluders[:, 0], target[0]), np.maximum(occluders[:, 1], target[1]),
        np.minimum(occluders[:, 2], target[2]), np.minimum(occluders[:, 3], target[3]),
    ])
    clipped = clipped[(clipped[:, 2] > clipped[:, 0]) & (clipped[:, 3] > clipped[:, 1])]
    if len(clipped) == 0:
        return 0.0
    xs = np.unique(np.concatenate([clipped[:, 0], clipped[:, 2]]))
    ys = np.unique(np.concatenate([clipped[:, 1], clipped[:, 3]]))
    mx = (xs[:-1] + xs[1:]) / 2
    my = (ys[:-1] + ys[1:]) / 2
    inside_x = (clipped[:, 0, None] <= mx[None, :]) & (mx[None, :] < clipped[:, 2, None])
    inside_y = (clipped[:, 1, None] <= my[None, :]) & (my[None, :] < clipped[:, 3, None])
    cover = np.any(inside_x[:, None, :] & inside_y[:, :, None], axis=0)
    cells = np.diff(ys)[:, None] * np.diff(xs)[None, :]
    return float(min(1.0, np.sum(cells * cover) / area))


def _body_rects(cx, foot, h, aspect):
    w = h * aspect
    return np.column_stack([cx - w / 2, foot - h, cx + w / 2, foot])


def _head_rects(cx, foot, h, aspect, head_ratio, head_width_ratio):
    hh = h * head_ratio
    hw = h * aspect * head_width_ratio
    top = foot - h
    return np.column_stack([cx - hw / 2, top, cx + hw / 2, top + hh])


# ---------------------------------------------------------------------------
# motion

def _simulate_paths(spec: ScenarioSpec, rng: np.random.Generator):
    width, height = spec.arena
    n, t = spec.num_pedestrians, spec.num_frames
    lo, hi = spec.body_size_range
    top = spec.horizon * height

    # lanes: feet between the horizon (+ smallest body) and the bottom edge
    foot_lane = rng.uniform(top + lo, height, size=n)
    depth_t = (foot_lane - (top + lo)) / max(height - top - lo, 1e-9)
    heights = lo + (hi - lo) * depth_t
    heights = np.clip(heights * rng.uniform(0.95, 1.05, size=n), lo, hi)
    foot_lane = np.clip(foot_lane, top + heights, height)
    widths = heights * spec.body_aspect
    band = 0.1 * heights

    def draw_velocity(k):
        speed = rng.uniform(*spec.speed_range)
        if spec.speed_relative:
            speed *= heights[k] / 100.0
        direction = rng.choice([-1.0, 1.0])
        vy = speed * rng.uniform(-spec.vertical_wobble, spec.vertical_wobble)
        return direction * speed, vy

    cx = np.empty((t, n))
    foot = np.empty((t, n))
    x = rng.uniform(widths / 2, width - widths / 2)
    y = foot_lane.copy()
    vel = np.array([draw_velocity(k) for k in range(n)])
    for f in range(t):
        cx[f], foot[f] = x, y
        turns = rng.random(n) < spec.turn_probability
        for k in np.nonzero(turns)[0]:
            vel[k] = draw_velocity(k)
        x = x + vel[:, 0]
        y = y + vel[:, 1]
        # reflect at the arena sides and the lane band
        left, right = widths / 2, width - widths / 2
        over = x > right
        under = x < left
        x = np.where(over, 2 * right - x, np.where(under, 2 * left - x, x))
        vel[over | under, 0] *= -1
        y_lo = np.maximum(foot_lane - band, top + heights)
        y_hi = np.minimum(foot_lane + band, height)
        over = y > y_hi
        under = y < y_lo
        y = np.clip(np.where(over, 2 * y_hi - y, np.where(under, 2 * y_lo - y, y)), y_lo, y_hi)
        vel[over | under, 1] *= -1
    # nearer walkers have their lane lower in the image
    depth = np.argsort(np.argsort(foot_lane, kind="stable"), kind="stable")
    return cx, foot, heights, depth


# ---------------------------------------------------------------------------
# rendering and emission

def _render(spec: ScenarioSpec, rng: np.random.Generator, cx: np.ndarray, foot: np.ndarray,
            heights: np.ndarray, depth: np.ndarray) -> Scenario:
    t, n = cx.shape
    dim = spec.embedding_dim
    anchors = rng.normal(size=(n, dim))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    anchors *= spec.embedding_scale
    offsets = rng.normal(size=(n, dim))
    offsets /= np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= spec.part_offset

    thr = spec.occlusion_visibility_threshold
    sm = spec.score_model
    truth: dict[int, list[TruthRecord]] = {}
    detections: dict[int, list[Detection]] = {}
    identities: dict[int, list] = {}

    for f in range(t):
        frame = f + 1
        bodies = _body_rects(cx[f], foot[f], heights, spec.body_aspect)
        heads = _head_rects(cx[f], foot[f], heights, spec.body_aspect, spec.head_ratio,
                            spec.head_width_ratio)
        recs, dets, ids = [], [], []
        for k in range(n):
            nearer = bodies[depth > depth[k]]
            bvis = 1.0 - covered_fraction(bodies[k], nearer)
            hvis = 1.0 - covered_fraction(heads[k], nearer)
            body_box = _to_bbox(bodies[k])
            head_box = _to_bbox(heads[k])
            recs.append(TruthRecord(k + 1, body_box, head_box, bvis, hvis))

            for part, rect, vis, drop in ((BODY, bodies[k], bvis, spec.body_drop_when_occluded),
                                          (HEAD, heads[k], hvis, spec.head_drop_when_occluded)):
                u_drop = rng.random()
                noise = rng.normal(scale=spec.detection_noise, size=4) if spec.detection_noise > 0 else np.zeros(4)
                s_noise = rng.normal(scale=sm.noise) if sm.noise > 0 else 0.0
                e_noise = rng.normal(scale=spec.embedding_noise, size=dim) if spec.embedding_noise > 0 else np.zeros(dim)
                if vis < thr and u_drop < drop:
                    continue
                x1, y1, x2, y2 = rect
                w = max(1.0, x2 - x1 + noise[2])
                h = max(1.0, y2 - y1 + noise[3])
                score = float(np.clip(sm.base + sm.slope * vis + s_noise, 0.01, 1.0))
                emb = anchors[k] + (offsets[k] if part == HEAD else 0.0) + e_noise
                box = BBox(x1 + noise[0], y1 + noise[1], w, h, score)
                dets.append(Detection(box, part, emb, frame))
                ids.append(k + 1)
        truth[frame] = recs
        detections[frame] = dets
        identities[frame] = ids
    return Scenario(spec, truth, detections, identities, anchors)


def _to_bbox(rect) -> BBox:
    x1, y1, x2, y2 = (float(v) for v in rect)
    return BBox(x1, y1, x2 - x1, y2 - y1)


def generate(spec: ScenarioSpec) -> Scenario:
    rng = np.random.default_rng(spec.seed)
    cx, foot, heights, depth = _simulate_paths(spec, rng)
    return _render(spec, rng, cx, foot, heights, depth)


def crossing_scenario(seed: int, occlusion_frames: int = 5, num_frames: int = 60,
                      **overrides) -> Scenario:
    """Two walkers cross; the farther one changes pace while its body is hidden.

    The nearer walker (id 2) passes in front of the farther one (id 1) fast
    enough that id 1's body stays below the visibility threshold for about
    ``occlusion_frames`` frames.  During that window id 1 slows down or turns
    back, which a body-only motion model cannot see.  Its head stays above the
    occluder's shoulders throughout.
    """
    rng = np.random.default_rng(seed)
    base = dict(seed=seed, num_pedestrians=2, num_frames=num_frames, arena=(1280, 720),
                body_drop_when_occluded=1.0, head_drop_when_occluded=1.0,
                turn_probability=0.0, detection_noise=0.5)
    base.update(overrides)
    spec = ScenarioSpec(**base)

    h_far = 100.0 * rng.uniform(0.95, 1.05)
    h_near = 110.0 * rng.uniform(0.95, 1.05)
    foot_far, foot_near = 500.0, 500.0 + (h_near - h_far) + 20.0
    w_far, w_near = h_far * spec.body_aspect, h_near * spec.body_aspect
    # vertical cover of the far body by the near one
    v_cover = (foot_far - (foot_near - h_near)) / h_far
    # hidden while the horizontal overlap exceeds this many pixels
    need = spec.occlusion_visibility_threshold * w_far / v_cover
    half_span = (w_far + w_near) / 2 - need
    v_far = rng.uniform(2.0, 3.0)
    v_after = -rng.uniform(1.5, 3.0)
    # relative speed while hidden sets the hidden duration
    v_near = v_after - 2 * half_span / occlusion_frames

    meet = num_frames // 2
    cx = np.empty((num_frames, 2))
    x_far = 640.0 - v_far * meet
    x_near = 640.0 - v_near * meet
    turned = False
    for f in range(num_frames):
        cx[f] = (x_far, x_near)
        if not turned and abs(x_far - x_near) < half_span:
            turned = True
        x_far += v_after if turned else v_far
        x_near += v_near
    foot = np.tile([foot_far, foot_near], (num_frames, 1))
    heights = np.array([h_far, h_near])
    depth = np.array([0, 1])
    cx = np.clip(cx, 60, spec.arena[0] - 60)
    return _render(replace(spec, num_pedestrians=2), rng, cx, foot, heights, depth)


# ---------------------------------------------------------------------------
# tiled detector

@dataclass(frozen=True)
class TileDetectorModel:
    """Fixed-input detector run on resized tiles.

    A tile of side ``s`` is resized to ``input_size``; an object is found only
    if it lies entirely inside the tile and its resized height falls in the
    range for its part.
    """
    input_size: int = 1024
    body_apparent_range: tuple[float, float] = (24.0, 900.0)
    head_apparent_range: tuple[float, float] = (5.0, 180.0)

    def detects(self, det: Detection, tile: Tile) -> bool:
        apparent = det.box.h * self.input_size / tile.size
        lo, hi = self.body_apparent_range if det.part == BODY else self.head_apparent_range
        return lo <= apparent <= hi


def tile_detections(frame_detections: Sequence[Detection], tile_plan: TilePlan,
                    model: Optional[TileDetectorModel] = None) -> dict[int, list[Detection]]:
    """Tile-local detections a tiled detector would report for one frame.

    Duplicates of one object in several tiles carry identical boxes, scores
    and embeddings.  With ``model=None`` every contained object is found.
    """
    out: dict[int, list[Detection]] = {}
    if not frame_detections:
        return {t.tile_id: [] for t in tile_plan.windows}
    boxes = np.array([[d.box.x, d.box.y, d.box.x2, d.box.y2] for d in frame_detections])
    for tile in tile_plan.windows:
        inside = ((boxes[:, 0] >= tile.x) & (boxes[:, 1] >= tile.y)
                  & (boxes[:, 2] <= tile.x + tile.size) & (boxes[:, 3] <= tile.y + tile.size))
        local = []
        for k in np.nonzero(inside)[0]:
            det = frame_detections[k]
            if model is None or model.detects(det, tile):
                local.append(to_local(det, tile))
        out[tile.tile_id] = local
    return out
