import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskcal.losses import ParameterGrid
from riskcal.selection import Stage, Unsatisfiable, apply_stage, detection_preset, preset, select_lexicographic, select_sup

GRID1 = ParameterGrid.linspace(0.1, 1.0, 10)


def test_sup_examples():
    assert select_sup([2, 3, 4], GRID1) == 4
    assert GRID1.values[select_sup([2, 3, 4], GRID1), 0] == pytest.approx(0.5)
    assert select_sup([], GRID1) is None


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(0, 9), min_size=1))
def test_sup_is_member_and_maximal(members):
    j = select_sup(members, GRID1)
    assert j in members
    assert all(GRID1.values[j, 0] >= GRID1.values[k, 0] for k in members)


def test_single_stage_equals_sup():
    for members in ([1], [0, 5, 9], [3, 4]):
        assert select_lexicographic(members, GRID1, [Stage("max", axis=0)]) == select_sup(members, GRID1)


def test_three_stage_detection_example():
    grid = ParameterGrid(np.array([[0.3, 0.5, 0.99], [0.4, 0.5, 0.992], [0.4, 0.6, 0.992]]))
    r2 = np.zeros((3, 2))
    assert select_lexicographic([0, 1, 2], grid, detection_preset(), objective=r2) == 0


def brute_force_detection(points, r2):
    cand = [k for k, (a, _, c) in enumerate(points) if 1 - a < c]
    l3 = min(points[k][2] for k in cand)
    cand = [k for k in cand if points[k][2] == l3]
    l1 = max(points[k][0] for k in cand)
    cand = [k for k in cand if points[k][0] == l1]
    best = min(r2[k] for k in cand)
    cand = [k for k in cand if r2[k] == best]
    l2 = max(points[k][1] for k in cand)
    return min(k for k in cand if points[k][1] == l2)


def test_detection_preset_matches_brute_force():
    rng = np.random.default_rng(0)
    grid = ParameterGrid.product([0.2, 0.4, 0.6], [0.1, 0.5], [0.5, 0.7, 0.9])
    for _ in range(200):
        members = sorted(rng.choice(grid.size, size=rng.integers(1, grid.size), replace=False).tolist())
        r2 = np.round(rng.uniform(size=grid.size), 1)
        obj = np.stack([np.zeros(grid.size), r2], axis=1)
        pts = [tuple(grid.values[k]) for k in range(grid.size)]
        sub = {k: pts[k] for k in members}
        if not any(1 - a < c for a, _, c in sub.values()):
            with pytest.raises(Unsatisfiable):
                select_lexicographic(members, grid, detection_preset(), objective=obj)
            continue
        expected_local = brute_force_detection([sub[k] for k in members], [r2[k] for k in members])
        assert select_lexicographic(members, grid, detection_preset(), objective=obj) == members[expected_local]


def test_unsatisfiable_filter():
    with pytest.raises(Unsatisfiable, match="unsatisfiable"):
        select_lexicographic([0, 1], GRID1, [Stage("filter", coef=(1.0,), const=-5.0, cmp=">")])


def test_permutation_invariance_and_monotone_restriction():
    grid = ParameterGrid.product([0.1, 0.2, 0.3], [1.0, 2.0])
    members = [0, 2, 3, 5]
    stages = [Stage("min", axis=1), Stage("max", axis=0)]
    results = set()
    for _ in range(10):
        random.shuffle(members)
        results.add(select_lexicographic(members, grid, stages))
    assert len(results) == 1
    idx = np.array(sorted(members))
    for s in stages:
        nxt = apply_stage(s, idx, grid)
        assert set(nxt) <= set(idx)
        idx = nxt


def test_stage_validation_and_json(tmp_path):
    with pytest.raises(ValueError):
        Stage("max")
    with pytest.raises(ValueError):
        Stage("filter", coef=(1.0,), cmp="!=")
    s = Stage("filter", coef=(-1.0, 0.0, -1.0), const=1.0)
    assert Stage.from_json(s.to_json()) == s
    path = tmp_path / "sel.json"
    path.write_text(json.dumps({"stages": [st.to_json() for st in detection_preset()]}))
    grid3 = ParameterGrid(np.array([[0.3, 0.5, 0.99]]))
    assert preset(str(path), grid3) == detection_preset()
    with pytest.raises(ValueError):
        preset("detection", GRID1)
    with pytest.raises(ValueError):
        preset("nope", GRID1)


def test_bad_indices():
    with pytest.raises(ValueError):
        select_sup([10], GRID1)
