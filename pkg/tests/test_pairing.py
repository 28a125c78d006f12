import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import special_ortho_group

from conftest import det
from hbtrack.geometry import iou
from hbtrack.pairing import (BODY, HEAD, PairedDetection, embedding_distances, pair_by_embedding,
                             pair_by_position, pairs_from_hints)


def key(records):
    return sorted(((id(r.body) if r.body else 0), (id(r.head) if r.head else 0)) for r in records)


def test_single_pair_within_gate():
    b = det(0, 0, 10, 30, BODY, [0.0, 0.0])
    h = det(2, 0, 5, 6, HEAD, [0.1, 0.0])
    out = pair_by_embedding([b], [h], 2.0)
    assert len(out) == 1 and out[0].body is b and out[0].head is h


def test_far_pair_stays_apart():
    b = det(0, 0, 10, 30, BODY, [0.0, 0.0])
    h = det(2, 0, 5, 6, HEAD, [3.0, 0.0])
    out = pair_by_embedding([b], [h], 2.0)
    assert [r.kind for r in out] == ["b", "h"]


def test_crossed_embeddings_match_oracle(rng):
    for _ in range(20):
        bodies = [det(0, 0, 10, 30, BODY, rng.normal(size=3)) for _ in range(2)]
        heads = [det(0, 0, 5, 6, HEAD, rng.normal(size=3)) for _ in range(2)]
        d = embedding_distances(bodies, heads)
        best = min(itertools.permutations(range(2)), key=lambda p: d[0, p[0]] + d[1, p[1]])
        out = pair_by_embedding(bodies, heads, max_distance=100.0)
        got = {(bodies.index(r.body), heads.index(r.head)) for r in out if r.kind == "bh"}
        assert got == {(0, best[0]), (1, best[1])}


def test_position_inside_and_disjoint():
    b = det(0, 0, 40, 100)
    inside = det(10, 0, 20, 20, HEAD)
    lost = det(500, 500, 20, 20, HEAD)
    out = pair_by_position([b], [inside, lost])
    assert out[0].body is b and out[0].head is inside
    assert out[1].head is lost and out[1].body is None


def test_position_matches_max_total_iou(rng):
    for _ in range(20):
        bodies = [det(*rng.uniform(0, 30, 2), 40, 100) for _ in range(2)]
        heads = [det(*rng.uniform(0, 40, 2), 20, 20, HEAD) for _ in range(2)]
        ov = np.array([[iou(b.box, h.box) for h in heads] for b in bodies])
        cands = []
        for p in itertools.permutations(range(2)):
            kept = sorted((i, p[i]) for i in range(2) if ov[i, p[i]] >= 0.05)
            cands.append((len(kept), sum(ov[i, j] for i, j in kept), kept))
        # most pairs, then most overlap, then smallest (body, head) list
        top = max(c[:2] for c in cands)
        expect = set(min(c[2] for c in cands if c[0] == top[0] and abs(c[1] - top[1]) < 1e-12))
        out = pair_by_position(bodies, heads, 0.05)
        got = {(bodies.index(r.body), heads.index(r.head)) for r in out if r.kind == "bh"}
        assert got == expect


def test_zero_gate_gives_singletons():
    bodies = [det(0, 0, 10, 30, BODY, [0.0, 0.0]), det(50, 0, 10, 30, BODY, [5.0, 0.0])]
    heads = [det(0, 0, 5, 5, HEAD, [0.3, 0.0])]
    assert all(r.kind != "bh" for r in pair_by_embedding(bodies, heads, 0.0))
    assert all(r.kind != "bh" for r in pair_by_position(bodies, heads, 1.0))


def test_rejects_mixed_frames_and_parts():
    with pytest.raises(ValueError):
        pair_by_embedding([det(0, 0, 1, 1, frame=1)], [det(0, 0, 1, 1, HEAD, frame=2)])
    with pytest.raises(ValueError):
        pair_by_embedding([det(0, 0, 1, 1, HEAD)], [])
    with pytest.raises(ValueError):
        PairedDetection()


def test_hints_round_trip():
    b = det(0, 0, 10, 30, pair_hint=4)
    h = det(1, 0, 5, 6, HEAD, pair_hint=4)
    lone = det(80, 0, 10, 30)
    out = pairs_from_hints([b, h, lone])
    assert sorted(r.kind for r in out) == ["b", "bh"]


@st.composite
def frames(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    m, n = draw(st.integers(0, 6)), draw(st.integers(0, 6))
    bodies = [det(*r.uniform(0, 200, 2), 40, 100, BODY, r.normal(size=4)) for _ in range(m)]
    heads = [det(*r.uniform(0, 200, 2), 15, 15, HEAD, r.normal(size=4)) for _ in range(n)]
    return bodies, heads, seed


@given(frames(), st.floats(0.0, 4.0))
def test_every_detection_once(frame, gate):
    bodies, heads, _ = frame
    for out in (pair_by_embedding(bodies, heads, gate), pair_by_position(bodies, heads)):
        n_pairs = sum(r.kind == "bh" for r in out)
        assert len(out) == len(bodies) + len(heads) - n_pairs
        seen = [id(d) for r in out for d in (r.body, r.head) if d is not None]
        assert sorted(seen) == sorted(id(d) for d in bodies + heads)


@given(frames())
def test_rotation_invariance(frame):
    bodies, heads, seed = frame
    rot = special_ortho_group.rvs(4, random_state=seed % (2**31))
    rb = [d.replace(embedding=rot @ d.embedding) for d in bodies]
    rh = [d.replace(embedding=rot @ d.embedding) for d in heads]
    a = pair_by_embedding(bodies, heads, 2.0)
    b = pair_by_embedding(rb, rh, 2.0)
    idx = lambda out, bs, hs: sorted((bs.index(r.body) if r.body else -1,
                                      hs.index(r.head) if r.head else -1) for r in out)
    assert idx(a, bodies, heads) == idx(b, rb, rh)
