"""File formats.

* detections: JSON Lines.  The first line is a header
  ``{"format": "hbtrack.detections", "version": 1, "embedding_dim": D}``;
  every following line is one detection record.
* tracking results / ground truth: MOTChallenge CSV
  (``frame,id,x,y,w,h,conf,-1,-1,-1`` for results,
  ``frame,id,x,y,w,h,flag,class,visibility`` for ground truth).
* loss batches: JSON Lines, one :class:`~hbtrack.aml.LossBatch` per line.
* tile plans: a single JSON object.

Every writer goes through :func:`atomic_write` so an interrupted run never
leaves a truncated file behind.
"""
from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

from .aml import LossBatch
from .geometry import BBox
from .gigapixel import TilePlan
from .pairing import BODY, HEAD, Detection, PairedDetection

__all__ = [
    "FormatError",
    "DETECTION_FORMAT",
    "atomic_write",
    "write_detections",
    "read_detections",
    "paired_to_detections",
    "write_results",
    "read_mot",
    "write_ground_truth",
    "write_loss_batches",
    "read_loss_batches",
    "write_json",
    "read_json",
    "write_plan",
    "read_plan",
]

PathLike = Union[str, os.PathLike]
DETECTION_FORMAT = "hbtrack.detections"
DETECTION_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, path, line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@contextlib.contextmanager
def atomic_write(path: PathLike, mode: str = "w") -> Iterator:
    """Write to a temp file in the target directory, rename into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# detections

def _detection_record(d: Detection) -> dict:
    b = d.box
    return {
        "frame": d.frame, "part": d.part,
        "x": b.x, "y": b.y, "w": b.w, "h": b.h, "score": b.score,
        "tile_id": d.tile_id, "pair_hint": d.pair_hint,
        "embedding": [float(v) for v in d.embedding],
    }


def write_detections(path: PathLike, detections: Iterable[Detection],
                     embedding_dim: Optional[int] = None) -> None:
    dets = sorted(detections, key=lambda d: d.frame)
    dim = embedding_dim if embedding_dim is not None else (len(dets[0].embedding) if dets else 0)
    for d in dets:
        if len(d.embedding) != dim:
            raise ValueError(f"embedding length {len(d.embedding)} differs from declared {dim}")
    with atomic_write(path) as fh:
        fh.write(json.dumps({"format": DETECTION_FORMAT, "version": DETECTION_VERSION,
                             "embedding_dim": dim}) + "\n")
        for d in dets:
            fh.write(json.dumps(_detection_record(d)) + "\n")


def _int_field(rec, key, path, line, optional=False, minimum=None):
    value = rec.get(key)
    if value is None:
        if optional:
            return None
        raise FormatError(path, line, f"missing field {key!r}")
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(path, line, f"field {key!r} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise FormatError(path, line, f"field {key!r} must be >= {minimum}, got {value}")
    return value


def _float_field(rec, key, path, line):
    value = rec.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise FormatError(path, line, f"field {key!r} must be a finite number, got {value!r}")
    return float(value)


def read_detections(path: PathLike) -> dict[int, list[Detection]]:
    """Parse a detection file into ``frame -> detections`` in ascending frame order."""
    frames: dict[int, list[Detection]] = {}
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise FormatError(path, 1, "missing header line")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise FormatError(path, 1, f"header is not valid JSON ({exc.msg})") from None
        if not isinstance(header, dict) or header.get("format") != DETECTION_FORMAT:
            raise FormatError(path, 1, f"header must declare format {DETECTION_FORMAT!r}")
        dim = _int_field(header, "embedding_dim", path, 1, minimum=0)
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(path, lineno, "record must be a JSON object")
            frame = _int_field(rec, "frame", path, lineno, minimum=1)
            part = rec.get("part")
            if part not in (BODY, HEAD):
                raise FormatError(path, lineno, f"part must be 'body' or 'head', got {part!r}")
            emb = rec.get("embedding")
            if not isinstance(emb, list):
                raise FormatError(path, lineno, "embedding must be an array")
            if len(emb) != dim:
                raise FormatError(path, lineno,
                                  f"embedding length mismatch: expected {dim}, got {len(emb)}")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
                       for v in emb):
                raise FormatError(path, lineno, "embedding must hold finite numbers")
            try:
                box = BBox(*(_float_field(rec, k, path, lineno) for k in ("x", "y", "w", "h", "score")))
            except FormatError:
                raise
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            det = Detection(box, part, emb, frame,
                            _int_field(rec, "tile_id", path, lineno, optional=True),
                            _int_field(rec, "pair_hint", path, lineno, optional=True))
            frames.setdefault(frame, []).append(det)
    return {f: frames[f] for f in sorted(frames)}


def embedding_dim_of(path: PathLike) -> int:
    with open(path, encoding="utf-8") as fh:
        return int(json.loads(fh.readline())["embedding_dim"])


def paired_to_detections(paired: Mapping[int, Sequence[PairedDetection]]) -> list[Detection]:
    """Flatten pair records, stamping each full pair with a per-frame ``pair_hint``."""
    out = []
    for frame in sorted(paired):
        for k, rec in enumerate(paired[frame]):
            hint = k if rec.body is not None and rec.head is not None else None
            for d in (rec.body, rec.head):
                if d is not None:
                    out.append(d.replace(pair_hint=hint))
    return out


# ---------------------------------------------------------------------------
# MOTChallenge CSV

def _fmt(v: float) -> str:
    return f"{v:.3f}"


def write_results(path: PathLike, rows: Iterable) -> None:
    """Write ``(frame, id, BBox)``-like rows (``TrackOutput`` works) as MOT results."""
    with atomic_write(path) as fh:
        for row in rows:
            frame, tid, box = row[0], row[1], row[2]
            if tid <= 0:
                raise ValueError(f"track ids must be positive, got {tid}")
            fh.write(f"{frame},{tid},{_fmt(box.x)},{_fmt(box.y)},{_fmt(box.w)},{_fmt(box.h)},"
                     f"{box.score:.4f},-1,-1,-1\n")


def write_ground_truth(path: PathLike, rows: Iterable[tuple[int, int, BBox, float]]) -> None:
    """Write ``(frame, id, box, visibility)`` rows as a MOTChallenge gt.txt."""
    with atomic_write(path) as fh:
        for frame, tid, box, vis in rows:
            fh.write(f"{frame},{tid},{_fmt(box.x)},{_fmt(box.y)},{_fmt(box.w)},{_fmt(box.h)},"
                     f"1,1,{vis:.4f}\n")


def read_mot(path: PathLike, skip_ignored: bool = False) -> dict[int, list[tuple[int, BBox]]]:
    """Read a MOTChallenge result or gt file into ``frame -> [(id, box)]``.

    With ``skip_ignored`` rows whose confidence/flag column is 0 are dropped,
    which is how gt files mark regions to ignore.
    """
    out: dict[int, list[tuple[int, BBox]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise FormatError(path, lineno, f"expected at least 7 columns, got {len(parts)}")
            try:
                frame = int(float(parts[0]))
                tid = int(float(parts[1]))
                x, y, w, h, conf = (float(v) for v in parts[2:7])
            except ValueError:
                raise FormatError(path, lineno, "non-numeric field") from None
            if skip_ignored and conf == 0:
                continue
            try:
                box = BBox(x, y, w, h, min(1.0, max(0.0, conf)))
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            out.setdefault(frame, []).append((tid, box))
    return {f: out[f] for f in sorted(out)}


# ---------------------------------------------------------------------------
# loss batches, plans, generic JSON

def write_loss_batches(path: PathLike, batches: Iterable[LossBatch]) -> None:
    with atomic_write(path) as fh:
        for batch in batches:
            fh.write(json.dumps(batch.to_dict()) + "\n")


def read_loss_batches(path: PathLike) -> list[LossBatch]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                out.append(LossBatch.from_dict(json.loads(raw)))
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(path, lineno, f"bad loss batch: {exc}") from None
    return out


def write_json(path: PathLike, data) -> None:
    with atomic_write(path) as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: PathLike):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_plan(path: PathLike, tile_plan: TilePlan) -> None:
    write_json(path, tile_plan.to_dict())


def read_plan(path: PathLike) -> TilePlan:
    return TilePlan.from_dict(read_json(path))
