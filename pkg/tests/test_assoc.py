import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pitchtrack.assoc import build_cost_matrix, solve_assignment
from pitchtrack.config import AssociationWeights, KalmanParams
from pitchtrack.core import BBox, bbox_to_measurement
from pitchtrack.errors import ConfigError
from pitchtrack.motion import ObservationHistory, kf_initiate
from pitchtrack.tracker import Track

from conftest import det, unit


def brute_force(c):
    """Min-cost over all maximal matchings of the finite entries."""
    n, m = c.shape
    best_count, best_cost = -1, np.inf
    if n <= m:
        perms = ((list(range(n)), list(p)) for p in itertools.permutations(range(m), n))
    else:
        perms = ((list(p), list(range(m))) for p in itertools.permutations(range(n), m))
    for rows, cols in perms:
        vals = c[rows, cols]
        fin = np.isfinite(vals)
        count, cost = int(fin.sum()), float(vals[fin].sum())
        if count > best_count or (count == best_count and cost < best_cost):
            best_count, best_cost = count, cost
    return best_count, best_cost


def match_cost(c, matches):
    return sum(c[r, k] for r, k in matches)


def make_track(tid, box, emb=None):
    z = bbox_to_measurement(box)
    h = ObservationHistory(30)
    h.append(0, z)
    return Track(id=tid, kf=kf_initiate(z), history=h,
                 ema_embedding=None if emb is None else unit(emb),
                 last_frame=0, last_box=box)


def test_identical_box_costs_zero():
    t = make_track(1, BBox(0, 0, 2, 2), [1, 0])
    c = build_cost_matrix([t], [det(0, 0, 0, 2, 2, emb=[1, 0])], AssociationWeights(1, 0, 0))
    assert c[0, 0] == pytest.approx(0.0)


def test_cost_formula_six_sevenths():
    t = make_track(1, BBox(0, 0, 2, 2), [1, 0])
    c = build_cost_matrix([t], [det(0, 1, 1, 2, 2, emb=[1, 0])], AssociationWeights(1, 1, 0),
                          KalmanParams(gating_threshold=1e9))
    assert c[0, 0] == pytest.approx(6 / 7, abs=1e-12)


def test_gated_and_disjoint_pairs_are_infinite():
    t = make_track(1, BBox(0, 0, 20, 40))
    c = build_cost_matrix([t], [det(0, 500, 500, 20, 40)])
    assert np.isinf(c[0, 0])


def test_missing_embedding_neutral_cost():
    t = make_track(1, BBox(0, 0, 200, 200), [1, 0])
    c = build_cost_matrix([t], [det(0, 0, 0, 200, 200)], AssociationWeights(0.0, 1.0, 0.0))
    assert c[0, 0] == pytest.approx(0.5)


def test_embedding_dimension_mismatch():
    t = make_track(1, BBox(0, 0, 200, 200), [1, 0])
    with pytest.raises(ConfigError):
        build_cost_matrix([t], [det(0, 0, 0, 200, 200, emb=[1, 0, 0])])


def test_solver_examples():
    assert solve_assignment(np.array([[0.2]]), 0.5) == ([(0, 0)], [], [])
    m, _, _ = solve_assignment(np.array([[1.0, 2.0], [2.0, 1.0]]), 5.0)
    assert m == [(0, 0), (1, 1)]
    assert solve_assignment(np.array([[0.9]]), 0.5) == ([], [0], [0])
    assert solve_assignment(np.zeros((0, 3)), 1.0) == ([], [], [0, 1, 2])


def test_solver_matches_brute_force_with_gates(rng):
    for _ in range(300):
        n, m = rng.integers(1, 6, 2)
        c = rng.random((n, m))
        c[rng.random((n, m)) < 0.3] = np.inf
        matches, ur, uc = solve_assignment(c, np.inf)
        count, cost = brute_force(c)
        assert len(matches) == count
        assert match_cost(c, matches) == pytest.approx(cost, abs=1e-12)
        assert sorted(ur + [r for r, _ in matches]) == list(range(n))
        assert sorted(uc + [k for _, k in matches]) == list(range(m))


matrices = st.integers(1, 6).flatmap(lambda n: st.integers(1, 6).flatmap(
    lambda m: st.lists(st.lists(st.floats(0, 1), min_size=m, max_size=m), min_size=n, max_size=n)))


@settings(max_examples=100)
@given(matrices)
def test_one_to_one(rows):
    c = np.array(rows)
    matches, _, _ = solve_assignment(c, 0.8)
    assert len({r for r, _ in matches}) == len(matches)
    assert len({k for _, k in matches}) == len(matches)
    assert all(c[r, k] <= 0.8 for r, k in matches)


@settings(max_examples=100)
@given(matrices)
def test_infinite_row_monotonicity(rows):
    c = np.array(rows)
    base, _, _ = solve_assignment(c, np.inf)
    grown = np.vstack([c, np.full((1, c.shape[1]), np.inf)])
    matches, ur, _ = solve_assignment(grown, np.inf)
    assert sum(c[r, k] for r, k in matches) == pytest.approx(sum(c[r, k] for r, k in base))
    assert c.shape[0] in ur


@settings(max_examples=100)
@given(matrices, st.randoms())
def test_row_permutation_equivariance(rows, rnd):
    # random continuous costs have a unique optimum almost surely
    c = np.array(rows)
    c = c + np.random.default_rng(c.size).random(c.shape) * 1e-6
    perm = list(range(c.shape[0]))
    rnd.shuffle(perm)
    base, _, _ = solve_assignment(c, np.inf)
    permuted, _, _ = solve_assignment(c[perm], np.inf)
    assert sorted((perm[r], k) for r, k in permuted) == base
