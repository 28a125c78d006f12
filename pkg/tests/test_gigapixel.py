import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import det
from hbtrack.geometry import iou
from hbtrack.gigapixel import Tile, TilePlan, fuse, lift, plan, to_local
from hbtrack.pairing import HEAD
from hbtrack.scenario import ScenarioSpec, generate, tile_detections


def test_stride_example():
    tp = plan(8000, 8000, [6400], 0.3)
    assert sorted({t.x for t in tp.windows}) == [0, 1600]
    assert sorted({t.y for t in tp.windows}) == [0, 1600]


def test_single_window():
    tp = plan(1600, 1600, [1600])
    assert [(t.x, t.y, t.size) for t in tp.windows] == [(0, 0, 1600)]


def test_zero_overlap_abuts():
    tp = plan(1000, 300, [300], 0.0)
    assert [t.x for t in tp.windows] == [0, 300, 600, 700]


def test_scale_too_large_is_skipped():
    tp = plan(1000, 800, [400, 2000], 0.3)
    assert tp.scales == (400,) and tp.warnings


def test_scale_over_one_side_overhangs():
    tp = plan(3000, 1000, [1600], 0.3)
    assert {t.y for t in tp.windows} == {0}
    assert max(t.x + t.size for t in tp.windows) == 3000


@given(st.integers(50, 5000), st.integers(50, 5000), st.integers(20, 2000), st.floats(0, 0.9))
def test_coverage_and_bounds(w, h, size, overlap):
    tp = plan(w, h, [size], overlap)
    if size > min(w, h):
        return
    for t in tp.windows:
        assert 0 <= t.x and t.x + t.size <= w and 0 <= t.y and t.y + t.size <= h
    xs = sorted({t.x for t in tp.windows})
    ys = sorted({t.y for t in tp.windows})
    for coords, length in ((xs, w), (ys, h)):
        assert coords[0] == 0 and coords[-1] + size == length
        assert all(b - a <= size for a, b in zip(coords, coords[1:]))


def test_plan_round_trip():
    tp = plan(5000, 3000, [1600, 3200])
    assert TilePlan.from_dict(tp.to_dict()) == tp


def test_lift_translates():
    tp = TilePlan(4000, 2000, (1600,), 0.3, (Tile(0, 0, 0, 1600), Tile(1, 1600, 0, 1600)))
    d = det(10, 10, 50, 80)
    out = lift({1: [d], 0: [d]}, tp)
    assert (out[0].box.x, out[0].box.y) == (10, 10)
    assert (out[1].box.x, out[1].box.y, out[1].box.w, out[1].box.h) == (1610, 10, 50, 80)
    assert out[1].tile_id == 1
    assert to_local(out[1], tp.tile(1)).box == d.box
    with pytest.raises(ValueError):
        lift({0: [det(1590, 0, 50, 50)]}, tp)


def test_fuse_duplicates_and_parts():
    a = det(100, 100, 40, 100, score=0.9)
    b = det(100, 100, 40, 100, score=0.85)
    far = det(900, 100, 40, 100)
    head = det(110, 100, 20, 20, HEAD)
    out = fuse([b, a, far, head])
    assert len(out) == 3 and out[0] is a
    assert fuse(out) == out


def test_tiled_frame_equals_whole_frame():
    spec = ScenarioSpec(seed=3, num_pedestrians=12, num_frames=5, arena=(1900, 1000),
                        body_size_range=(60.0, 200.0))
    scn = generate(spec)
    tp = plan(1900, 1000, [640, 900], 0.5)
    checked = 0
    for frame in scn.frames:
        raw = scn.detections[frame]
        tp_boxes = [t.bounds() for t in tp.windows]
        if not all(any(t.contains(d.box) for t in tp_boxes) for d in raw):
            continue
        whole = fuse(raw)
        fused = fuse(lift(tile_detections(raw, tp), tp))
        checked += 1
        assert len(fused) == len(whole)
        for d in whole:
            assert any(f.part == d.part and iou(f.box, d.box) >= 1.0 - 1e-9 for f in fused)
    assert checked > 0
