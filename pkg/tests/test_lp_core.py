import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from gridcap.errors import ValidationError
from gridcap.lp_core import (LinearProgram, LpStatus, MilpProblem, MilpStatus, Sense,
                             mps_text, relative_gap, solve_lp, solve_milp, write_mps)

from oracles import enumerate_binaries, parse_mps, solve_parsed, tableau_simplex


def _lp_from_arrays(c, a_ub, b_ub, lb, ub, sense=Sense.MINIMIZE):
    lp = LinearProgram(sense)
    for j in range(len(c)):
        lp.add_variable(f"x{j}", lb[j], ub[j], obj=c[j])
    for row, b in zip(a_ub, b_ub):
        lp.add_constraint({j: v for j, v in enumerate(row)}, "<=", b)
    return lp


def test_small_lp_known_optimum():
    # max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3
    lp = LinearProgram(Sense.MAXIMIZE)
    x = lp.add_variable("x", 0, 3, obj=3)
    y = lp.add_variable("y", 0, math.inf, obj=2)
    lp.add_constraint({x: 1, y: 1}, "<=", 4)
    lp.add_constraint({x: 1, y: 3}, "<=", 6)
    sol = solve_lp(lp)
    assert sol.ok and sol.objective == pytest.approx(11.0)
    assert sol.x == pytest.approx([3.0, 1.0])


def test_infeasible_and_unbounded():
    lp = LinearProgram(Sense.MINIMIZE)
    x = lp.add_variable("x", 0, 1)
    lp.add_constraint({x: 1}, ">=", 2)
    assert solve_lp(lp).status == LpStatus.INFEASIBLE
    lp = LinearProgram(Sense.MAXIMIZE)
    x = lp.add_variable("x", 0, math.inf, obj=1)
    y = lp.add_variable("y", 0, math.inf)
    lp.add_constraint({x: 1, y: -1}, "<=", 1)
    assert solve_lp(lp).status == LpStatus.UNBOUNDED


def test_equality_and_free_variables():
    lp = LinearProgram(Sense.MINIMIZE)
    x = lp.add_variable("x", -math.inf, math.inf, obj=1)
    y = lp.add_variable("y", -2, 5, obj=-1)
    lp.add_constraint({x: 1, y: 1}, "=", 1)
    lp.add_constraint({x: 1}, ">=", -3)
    sol = solve_lp(lp)
    assert sol.ok and sol.objective == pytest.approx(-3 - 4)


def test_bad_bounds_rejected():
    lp = LinearProgram()
    with pytest.raises(ValidationError):
        lp.add_variable("x", 2, 1)
    lp.add_variable("x")
    with pytest.raises(ValidationError):
        lp.add_constraint({5: 1.0}, "<=", 1)


@st.composite
def random_lp(draw):
    m = draw(st.integers(1, 6))
    n = draw(st.integers(1, 6))
    vals = st.integers(-5, 5)
    a = np.array(draw(st.lists(st.lists(vals, min_size=n, max_size=n), min_size=m, max_size=m)),
                 dtype=float)
    b = np.array(draw(st.lists(st.integers(0, 10), min_size=m, max_size=m)), dtype=float)
    c = np.array(draw(st.lists(vals, min_size=n, max_size=n)), dtype=float)
    ub = np.array(draw(st.lists(st.sampled_from([math.inf, 1.0, 3.0, 7.0]), min_size=n,
                                max_size=n)))
    lb = np.array(draw(st.lists(st.sampled_from([0.0, -1.0, 0.5]), min_size=n, max_size=n)))
    lb = np.minimum(lb, ub)
    return c, a, b, lb, ub


@given(random_lp())
def test_simplex_matches_tableau_oracle(data):
    c, a, b, lb, ub = data
    status, _, obj = tableau_simplex(c, a, b, lb=lb, ub=ub)
    sol = solve_lp(_lp_from_arrays(c, a, b, lb, ub))
    assert sol.status.value.lower() == status
    if status == "optimal":
        assert sol.objective == pytest.approx(obj, abs=1e-7)
        lp = _lp_from_arrays(c, a, b, lb, ub)
        assert lp.max_violation(sol.x) <= 1e-7


@given(random_lp())
def test_simplex_matches_highs(data):
    c, a, b, lb, ub = data
    lp = _lp_from_arrays(c, a, b, lb, ub, Sense.MAXIMIZE)
    ours, ref = solve_lp(lp), solve_lp(lp, method="highs")
    assert ours.status == ref.status
    if ours.ok:
        assert ours.objective == pytest.approx(ref.objective, abs=1e-7)


def test_dense_random_against_scipy():
    rng = np.random.default_rng(5)
    for _ in range(5):
        m, n = 50, 30
        a = rng.normal(size=(m, n))
        b = rng.uniform(1, 5, size=m)
        c = rng.normal(size=n)
        lp = _lp_from_arrays(c, a, b, np.zeros(n), np.full(n, 4.0))
        ref = linprog(c, A_ub=a, b_ub=b, bounds=[(0, 4)] * n, method="highs")
        sol = solve_lp(lp)
        assert sol.objective == pytest.approx(ref.fun, abs=1e-8)


def test_warm_start_reuses_basis():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, size=(20, 15))
    lp = _lp_from_arrays(-np.ones(15), a, np.ones(20), np.zeros(15), np.full(15, 1.0))
    cold = solve_lp(lp)
    warm = solve_lp(lp, basis=cold.basis)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-10)
    assert warm.iterations <= 1
    # a bound change re-optimises from the old basis
    ub = np.full(15, 1.0)
    ub[0] = 0.0
    again = solve_lp(lp, basis=cold.basis, upper=ub)
    ref = solve_lp(lp, upper=ub, method="highs")
    assert again.objective == pytest.approx(ref.objective, abs=1e-9)


def test_singular_basis_hint_falls_back():
    lp = _lp_from_arrays([-1, -1], [[1, 1], [2, 2]], [1, 2], [0, 0], [1, 1])
    sol = solve_lp(lp, basis=[0, 0])
    assert sol.ok and sol.objective == pytest.approx(-1.0)


# ------------------------------------------------------------------ MILP
def _knapsack(values, weights, cap, groups=()):
    lp = LinearProgram(Sense.MAXIMIZE)
    xs = [lp.add_variable(f"x{j}", 0, 1, obj=v) for j, v in enumerate(values)]
    lp.add_constraint(dict(zip(xs, weights)), "<=", cap)
    for g in groups:
        lp.add_constraint({xs[j]: 1 for j in g}, "<=", 1)
    return MilpProblem(lp, xs, [tuple(xs[j] for j in g) for g in groups])


def _brute(values, weights, cap, groups=()):
    best = -math.inf
    for bits in itertools.product((0, 1), repeat=len(values)):
        if np.dot(bits, weights) <= cap + 1e-9 and all(sum(bits[j] for j in g) <= 1 for g in groups):
            best = max(best, float(np.dot(bits, values)))
    return best


@given(st.lists(st.integers(1, 20), min_size=2, max_size=9), st.data())
@settings(max_examples=30)
def test_bnb_matches_enumeration(values, data):
    n = len(values)
    weights = data.draw(st.lists(st.integers(1, 15), min_size=n, max_size=n))
    cap = data.draw(st.integers(1, 40))
    groups = [tuple(range(k, min(k + 3, n))) for k in range(0, n, 3)] if data.draw(st.booleans()) else []
    sol = solve_milp(_knapsack(values, weights, cap, groups))
    assert sol.status == MilpStatus.OPTIMAL
    assert sol.objective == pytest.approx(_brute(values, weights, cap, groups))


def test_bnb_with_continuous_part_matches_enumeration():
    rng = np.random.default_rng(11)
    lp = LinearProgram(Sense.MAXIMIZE)
    y = [lp.add_variable(f"y{j}", 0, 10, obj=rng.uniform(1, 3)) for j in range(4)]
    x = [lp.add_variable(f"x{j}", 0, 1, obj=-rng.uniform(0.5, 2)) for j in range(4)]
    for j in range(4):
        lp.add_constraint({y[j]: 1, x[j]: -10}, "<=", 0)
    lp.add_constraint({v: 1 for v in y}, "<=", 17)
    lp.add_constraint({x[0]: 1, x[1]: 1}, "<=", 1)
    prob = MilpProblem(lp, x, [(x[0], x[1])])

    def fixed(bits):
        lo = np.array(lp.lower)
        up = np.array(lp.upper)
        lo[x] = bits
        up[x] = bits
        s = solve_lp(lp, lower=lo, upper=up)
        return s.objective if s.ok else None

    ref = enumerate_binaries(fixed, 4)
    sol = solve_milp(prob)
    assert sol.objective == pytest.approx(ref, abs=1e-9)


def test_gap_semantics():
    rng = np.random.default_rng(3)
    values = rng.integers(10, 60, size=22)
    weights = rng.integers(5, 40, size=22)
    prob = _knapsack(values, weights, int(weights.sum() * 0.4))
    exact = solve_milp(prob, gap_tol=0.0)
    loose = solve_milp(prob, gap_tol=0.01)
    assert loose.gap <= 0.01 + 1e-12
    assert loose.objective >= (1 - 0.01) * exact.objective - 1e-9
    assert loose.nodes_explored <= exact.nodes_explored
    assert relative_gap(exact.best_bound, exact.objective) <= 1e-9


def test_node_limit_and_infeasible():
    rng = np.random.default_rng(4)
    prob = _knapsack(rng.integers(10, 60, size=25), rng.integers(5, 40, size=25), 200)
    sol = solve_milp(prob, node_limit=3)
    assert sol.status in (MilpStatus.NODE_LIMIT, MilpStatus.OPTIMAL)
    lp = LinearProgram(Sense.MAXIMIZE)
    x = lp.add_variable("x", 0, 1, obj=1)
    lp.add_constraint({x: 1}, ">=", 0.3)
    lp.add_constraint({x: 1}, "<=", 0.7)
    assert solve_milp(MilpProblem(lp, [x])).status == MilpStatus.INFEASIBLE


def test_incumbent_seed_is_kept():
    prob = _knapsack([5, 4, 3], [4, 3, 2], 5)
    sol = solve_milp(prob, incumbent=np.array([0.0, 1.0, 1.0]))
    assert sol.objective == pytest.approx(7.0)


def test_binary_bounds_validated():
    lp = LinearProgram()
    x = lp.add_variable("x", 0, 2)
    with pytest.raises(ValidationError):
        MilpProblem(lp, [x])


# ------------------------------------------------------------------ MPS
def test_mps_round_trip_via_independent_parser():
    prob = _knapsack([5, 4, 3, 6], [4, 3, 2, 5], 9, groups=[(0, 1)])
    lp = prob.lp
    y = lp.add_variable("y", -math.inf, 2.5, obj=1.0)
    z = lp.add_variable("z", -1.0, math.inf, obj=-0.5)
    w = lp.add_variable("w", -math.inf, math.inf)
    lp.add_constraint({y: 1, z: 1}, ">=", -0.5)
    lp.add_constraint({y: 1, w: 1}, "=", 1.0)
    lp.add_constraint({w: 1}, "<=", 4.0)
    text = mps_text(lp, prob.binaries)
    model = parse_mps(text)
    assert model["a"].shape == (lp.n_rows, lp.n_vars)
    assert model["integer"].sum() == len(prob.binaries)
    status, obj = solve_parsed(model)
    assert status == 0
    assert obj == pytest.approx(solve_milp(MilpProblem(lp, prob.binaries, prob.sos_groups)).objective)
    buf = io.StringIO()
    write_mps(lp, buf, prob.binaries)
    assert buf.getvalue() == text
    for line in text.splitlines():
        if not line.startswith("*"):
            assert len(line) <= 61
