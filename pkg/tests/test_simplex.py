import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fidvr import simplex


def vertex_oracle(c, a, b, lo, hi):
    """Best objective over all vertices of ``a x <= b, lo <= x <= hi``.

    Each vertex makes n of the constraints (rows or bounds) tight.
    """
    n = len(c)
    rows = [(a[i], b[i]) for i in range(len(b))]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows += [(e, hi[j]), (-e, -lo[j])]
    best = np.inf
    for pick in itertools.combinations(range(len(rows)), n):
        m = np.array([rows[k][0] for k in pick])
        if abs(np.linalg.det(m)) < 1e-12:
            continue
        x = np.linalg.solve(m, np.array([rows[k][1] for k in pick]))
        if np.all(a @ x <= b + 1e-9) and np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9):
            best = min(best, float(c @ x))
    return best


def test_single_control():
    r = simplex.linprog([1.0], a_ub=[[-1.0]], b_ub=[-2.0], upper=[5.0])
    assert r.success and r.x[0] == pytest.approx(2.0)


def test_cheaper_column_first():
    # two controls, equal cost, first is four times as effective
    r = simplex.linprog([1.0, 1.0], a_ub=[[-0.02, -0.005]], b_ub=[-2.0], upper=[120, 120])
    assert r.x == pytest.approx([100.0, 0.0])


def test_infeasible_and_unbounded():
    r = simplex.linprog([1.0], a_ub=[[-1.0]], b_ub=[-10.0], upper=[5.0])
    assert r.status == simplex.INFEASIBLE
    r = simplex.linprog([-1.0, 0.0], a_ub=[[0.0, 1.0]], b_ub=[1.0])
    assert r.status == simplex.UNBOUNDED


def test_equality_rows_and_bounds():
    r = simplex.linprog([1, 2, 3], a_eq=[[1, 1, 1]], b_eq=[4], lower=[0, 1, 0], upper=[2, 5, 5])
    assert r.success
    assert r.x == pytest.approx([2, 2, 0])
    assert r.objective == pytest.approx(6)


def test_no_rows():
    r = simplex.linprog([1, -1], lower=[0, 0], upper=[3, 4])
    assert r.x == pytest.approx([0, 4])


def test_degenerate_cycling_example():
    # classic Beale instance that cycles under the Dantzig rule
    c = [-0.75, 150, -0.02, 6]
    a = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    b = [0, 0, 1]
    r = simplex.linprog(c, a_ub=a, b_ub=b)
    assert r.success
    assert r.objective == pytest.approx(-0.05)


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        simplex.linprog([1, 1], a_ub=[[1, 1, 1]], b_ub=[1])
    with pytest.raises(ValueError):
        simplex.linprog([1], lower=[-np.inf])


def _random_instance(rng):
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    c = rng.uniform(0, 2, n)
    a = -rng.uniform(0, 1, (m, n)) * (rng.random((m, n)) > 0.2)
    b = -rng.uniform(0, 3, m)
    hi = rng.uniform(1, 6, n)
    return c, a, b, np.zeros(n), hi


def test_random_instances_against_vertex_oracle():
    rng = np.random.default_rng(7)
    for _ in range(300):
        c, a, b, lo, hi = _random_instance(rng)
        r = simplex.linprog(c, a_ub=a, b_ub=b, lower=lo, upper=hi)
        best = vertex_oracle(c, a, b, lo, hi)
        if np.isinf(best):
            assert r.status == simplex.INFEASIBLE
        else:
            assert r.success
            assert r.objective == pytest.approx(best, abs=1e-6)
            assert np.max(a @ r.x - b) <= 1e-9


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.randoms(use_true_random=False))
def test_solution_is_feasible_and_bounded(n, m, rnd):
    rng = np.random.default_rng(rnd.getrandbits(32))
    c = rng.normal(size=n)
    a = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    lo = rng.uniform(-2, 0, n)
    hi = lo + rng.uniform(0, 3, n)
    r = simplex.linprog(c, a_ub=a, b_ub=b, lower=lo, upper=hi)
    best = vertex_oracle(c, a, b, lo, hi)
    if r.success:
        assert np.all(r.x >= lo) and np.all(r.x <= hi)
        assert np.max(a @ r.x - b, initial=0.0) <= 1e-9
        assert r.objective == pytest.approx(best, abs=1e-6)
    else:
        assert r.status == simplex.INFEASIBLE and np.isinf(best)
