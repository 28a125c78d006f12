"""Sliding-window tiling for very large frames and cross-tile fusion.

A :class:`TilePlan` lists square windows at one or more sizes.  Detections
found in tile-local coordinates are lifted into the frame with :func:`lift`
and de-duplicated with :func:`fuse` (per-part NMS).  Re-pair the survivors
afterwards; the halves of a pair may come from different tiles.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .geometry import BBox, nms_indices
from .pairing import BODY, HEAD, Detection

__all__ = [
    "Tile",
    "TilePlan",
    "plan",
    "lift",
    "to_local",
    "fuse",
    "DEFAULT_SCALES",
    "DEFAULT_OVERLAP",
    "FUSION_IOU",
]

log = logging.getLogger(__name__)

DEFAULT_SCALES = (1600, 3200, 6400)
DEFAULT_OVERLAP = 0.3
FUSION_IOU = 0.7


@dataclass(frozen=True)
class Tile:
    tile_id: int
    x: int
    y: int
    size: int

    def bounds(self) -> BBox:
        return BBox(self.x, self.y, self.size, self.size)


@dataclass(frozen=True)
class TilePlan:
    image_width: int
    image_height: int
    scales: tuple[int, ...]
    overlap: float
    windows: tuple[Tile, ...]
    warnings: tuple[str, ...] = field(default=())

    def tile(self, tile_id: int) -> Tile:
        try:
            t = self.windows[tile_id]
        except IndexError:
            raise KeyError(f"no tile with id {tile_id}") from None
        if t.tile_id != tile_id:
            raise KeyError(f"no tile with id {tile_id}")
        return t

    def windows_for(self, scale: int) -> list[Tile]:
        return [t for t in self.windows if t.size == scale]

    def to_dict(self) -> dict:
        return {
            "image_width": self.image_width,
            "image_height": self.image_height,
            "scales": list(self.scales),
            "overlap": self.overlap,
            "windows": [{"tile_id": t.tile_id, "x": t.x, "y": t.y, "size": t.size} for t in self.windows],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TilePlan":
        windows = tuple(Tile(int(w["tile_id"]), int(w["x"]), int(w["y"]), int(w["size"]))
                        for w in data["windows"])
        for k, w in enumerate(windows):
            if w.tile_id != k:
                raise ValueError(f"tile ids must be consecutive from 0, got {w.tile_id} at {k}")
        return cls(int(data["image_width"]), int(data["image_height"]),
                   tuple(int(s) for s in data["scales"]), float(data["overlap"]),
                   windows, tuple(data.get("warnings", ())))


def _origins(length: int, size: int, stride: int) -> list[int]:
    if size >= length:
        return [0]
    xs = [0]
    while xs[-1] + size < length:
        nxt = xs[-1] + stride
        if nxt + size >= length:
            nxt = length - size
        xs.append(nxt)
    return xs


def plan(image_width: int, image_height: int, scales: Sequence[int] = DEFAULT_SCALES,
         overlap: float = DEFAULT_OVERLAP) -> TilePlan:
    """Lay out square windows for each scale.

    The stride is ``round(size * (1 - overlap))``; the last row and column are
    shifted back so they end on the image edge instead of shrinking.  A scale
    larger than both image sides is skipped.  When it exceeds only one side,
    that axis gets a single window at 0 which overhangs the image (the
    detector is expected to pad).
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    windows: list[Tile] = []
    warnings: list[str] = []
    kept: list[int] = []
    for size in scales:
        size = int(size)
        if size <= 0:
            raise ValueError(f"tile size must be positive, got {size}")
        if size > image_width and size > image_height:
            msg = f"scale {size} exceeds both image dimensions {image_width}x{image_height}; skipped"
            log.warning(msg)
            warnings.append(msg)
            continue
        stride = max(1, int(round(size * (1.0 - overlap))))
        kept.append(size)
        for y in _origins(image_height, size, stride):
            for x in _origins(image_width, size, stride):
                windows.append(Tile(len(windows), x, y, size))
    return TilePlan(image_width, image_height, tuple(kept), overlap, tuple(windows), tuple(warnings))


def lift(detections_per_tile: Mapping[int, Sequence[Detection]], tile_plan: TilePlan,
         tol: float = 1e-6) -> list[Detection]:
    """Translate tile-local detections into frame coordinates."""
    out = []
    for tile_id in sorted(detections_per_tile):
        tile = tile_plan.tile(tile_id)
        for det in detections_per_tile[tile_id]:
            b = det.box
            if b.x < -tol or b.y < -tol or b.x2 > tile.size + tol or b.y2 > tile.size + tol:
                raise ValueError(f"box {b} falls outside tile {tile_id} of size {tile.size}")
            out.append(det.replace(box=b.translate(tile.x, tile.y), tile_id=tile_id))
    return out


def to_local(det: Detection, tile: Tile) -> Detection:
    return det.replace(box=det.box.translate(-tile.x, -tile.y), tile_id=tile.tile_id)


def fuse(detections: Sequence[Detection], iou_threshold: float = FUSION_IOU) -> list[Detection]:
    """Per-part NMS over detections gathered from every tile and scale."""
    out = []
    for part in (BODY, HEAD):
        group = [d for d in detections if d.part == part]
        keep = nms_indices([d.box for d in group], iou_threshold)
        out.extend(group[i] for i in keep)
    return out
