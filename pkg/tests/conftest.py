import itertools
import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hbtrack.geometry import BBox
from hbtrack.pairing import BODY, HEAD, Detection, PairedDetection

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def brute_force_assignment(costs, gate=math.inf):
    """Exhaustive oracle: max number of admissible matches, then min total cost.

    Returns ``(count, total)``; totals are summed with ``math.fsum``.
    """
    costs = np.asarray(costs, dtype=float)
    r, c = costs.shape
    best = (0, 0.0)
    if r == 0 or c == 0:
        return best
    small, big = (r, c) if r <= c else (c, r)
    for cols in itertools.permutations(range(big), small):
        pairs = [(i, j) if r <= c else (j, i) for i, j in enumerate(cols)]
        kept = [costs[i, j] for i, j in pairs if costs[i, j] <= gate]
        cand = (len(kept), math.fsum(kept))
        if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
            best = cand
    return best


def det(x, y, w, h, part=BODY, emb=(1.0, 0.0), frame=1, score=0.9, **kw):
    return Detection(BBox(x, y, w, h, score), part, np.asarray(emb, dtype=float), frame, **kw)


def person(cx, top, frame=1, height=100.0, emb=(1.0, 0.0), score=0.9, with_head=True,
           with_body=True):
    """Body/head pair for a walker whose body top-center is at ``(cx, top)``."""
    w = 0.4 * height
    body = det(cx - w / 2, top, w, height, BODY, emb, frame, score) if with_body else None
    head = (det(cx - w / 4, top, w / 2, 0.2 * height, HEAD, emb, frame, score)
            if with_head else None)
    return PairedDetection(body, head)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(number, name, ok, detail=""):
        line = f"criterion {number} {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        CRITERIA_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
