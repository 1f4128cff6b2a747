import numpy as np
import pytest
from helpers import random_problem, trace_mismatch
from hypothesis import given, settings
from hypothesis import strategies as st

from lanesplit.oracle import oracle_solve
from lanesplit.problem import NodeProblem
from lanesplit.report import worked_example
from lanesplit.solver import (
    BalanceRule,
    SolverOptions,
    SolverState,
    Termination,
    force_balance,
    regularize_priorities,
    solve,
)

L, H = 0, 1


@pytest.fixture(scope="module")
def table1():
    return solve(worked_example())


@pytest.mark.parametrize(
    "p, expected",
    [
        ([0.75, 0.25], [0.75, 0.25]),
        ([1.0, 0.0], [0.75, 0.25]),
        ([0.0, 1.0, 0.0], [2 / 9, 5 / 9, 2 / 9]),
    ],
)
def test_regularize_priorities(p, expected):
    assert np.allclose(regularize_priorities(p), expected, rtol=0, atol=1e-15)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6).filter(lambda v: sum(v) > 0))
def test_regularized_priorities_positive_unit_sum(raw):
    p = np.array(raw) / sum(raw)
    r = regularize_priorities(p)
    assert np.all(r > 0)
    assert abs(r.sum() - 1.0) <= 1e-12
    if np.all(p > 0):
        assert np.array_equal(r, p)


def test_oriented_priorities_first_two_iterations(table1):
    s0, s1 = table1.trace.snapshots[:2]
    assert np.allclose(s0.p_oriented, [[0.6875, 0.0625], [0.125, 0.125]], rtol=0, atol=1e-15)
    assert np.allclose(s1.p_oriented, [[0.6875, 0.0625], [0.0, 0.25]], rtol=0, atol=1e-15)


def test_mu_plus_and_targets(table1):
    s0, s1, s2 = table1.trace.snapshots[:3]
    assert s0.mu_plus == pytest.approx(406.25 / 412.5, abs=1e-12)
    assert s1.mu_plus == pytest.approx(5 / 6, abs=1e-12)
    assert (s0.j_minus, s0.i_minus, s0.c_minus, s0.mu_minus) == (1, 1, H, 0.0)
    assert (s1.j_minus, s1.i_minus, s1.c_minus, s1.mu_minus) == (1, 0, H, 0.0)
    assert s2.mu_plus == pytest.approx(5 / 6, abs=1e-12)
    assert s2.mu_minus == pytest.approx(2 / 3, abs=1e-12)
    assert s2.branch == "b"


def test_worked_example_updates(table1):
    s0, s1 = table1.trace.snapshots[:2]
    assert s0.delta == 1.0 and s0.delta_took_remainder
    assert s1.beta_tilde[1, 1, H] == 1.0 and s1.beta_bar[1, H] == 0.0
    assert s1.delta == pytest.approx(1 / 3, abs=1e-9) and not s1.delta_took_remainder
    assert table1.trace.snapshots[2].beta_tilde[0, 1, H] == pytest.approx(1 / 3, abs=1e-12)


def test_worked_example_final_is_stable(table1):
    # both balance rules agree because the balance branch never fires here
    other = solve(worked_example(), SolverOptions(balance_rule="oriented"))
    assert table1.termination is Termination.EMPTY_V
    assert np.array_equal(table1.beta, other.beta)
    assert table1.beta[0, :, H] == pytest.approx([0.541666666667, 0.458333333333], abs=1e-12)
    assert table1.beta[1, 1, H] == 1.0 and table1.beta[1, 0, H] == 0.0


def test_forced_spread_at_k2(table1):
    snap = table1.trace.snapshots[2]
    plain = force_balance(worked_example(), snap, BalanceRule.PLAIN_SUPPLY)
    oriented = force_balance(worked_example(), snap, BalanceRule.ORIENTED_SUPPLY)
    assert plain[0, :, H] == pytest.approx([0.5, 0.5], abs=1e-12)
    assert oriented[0, :, H] == pytest.approx([0.64, 0.36], abs=1e-12)


def test_balance_branch_plain_weights():
    p = NodeProblem([[100.0]], [600.0, 200.0], [1.0], unknown={(0, 0, 0), (0, 1, 0)})
    st_ = SolverState(
        k=0,
        beta_tilde=np.array([[[0.0], [1 / 3]]]),
        beta_bar=np.array([[2 / 3]]),
        U_tilde={0: frozenset({0}), 1: frozenset({0})},
        V_tilde=frozenset({0, 1}),
    )
    out = force_balance(p, st_, BalanceRule.PLAIN_SUPPLY)
    assert out[0, :, 0] == pytest.approx([0.5, 0.5], abs=1e-12)


def test_all_known_returns_input():
    known = {(0, 0, 0): 0.3, (0, 1, 0): 0.7, (1, 1, 0): 1.0}
    res = solve(NodeProblem([[10.0], [5.0]], [8.0, 8.0], [0.5, 0.5], known=known))
    assert res.termination is Termination.EMPTY_V
    assert len(res.trace.snapshots) == 1
    for t, v in known.items():
        assert res.beta[t] == v


def test_single_unknown_per_row_takes_remainder():
    p = NodeProblem(
        [[10.0, 4.0]],
        [8.0, 8.0],
        [1.0],
        known={(0, 0, 0): 0.25, (0, 1, 1): 1.0},
        unknown={(0, 1, 0)},
    )
    res = solve(p)
    assert res.beta[0, 1, 0] == 0.75
    assert res.trace.iterations == 0
    beta_o, _ = oracle_solve(p)
    assert np.array_equal(beta_o, res.beta)


def test_symmetric_instance_breaks_ties_by_lowest_index():
    p = NodeProblem(
        [[50.0], [50.0]], [60.0, 60.0], [0.5, 0.5],
        unknown={(i, j, 0) for i in range(2) for j in range(2)},
    )
    s0 = solve(p).trace.snapshots[0]
    assert (s0.j_minus, s0.i_minus, s0.c_minus) == (0, 0, 0)


def test_zero_demand_row_is_uniform():
    p = NodeProblem(
        [[0.0], [40.0]], [60.0, 60.0, 60.0], [0.5, 0.5],
        unknown={(0, 0, 0), (0, 1, 0), (0, 2, 0), (1, 0, 0), (1, 1, 0)},
    )
    res = solve(p)
    assert res.beta[0, :, 0] == pytest.approx([1 / 3] * 3)


def test_zero_supply_output_handled():
    p = NodeProblem([[40.0]], [0.0, 60.0], [1.0], unknown={(0, 0, 0), (0, 1, 0)})
    res = solve(p)
    assert res.beta[0, :, 0].sum() == pytest.approx(1.0)
    assert res.beta[0, 1, 0] > 0.99


def test_iteration_cap_is_reported():
    res = solve(worked_example(), SolverOptions(max_iterations=1))
    assert res.termination is Termination.ITERATION_CAP and res.flagged
    assert res.beta[0, :, H].sum() == pytest.approx(1.0)


def _problems(n, seed):
    rng = np.random.default_rng(seed)
    return [random_problem(rng) for _ in range(n)]


@pytest.mark.parametrize("rule", list(BalanceRule))
def test_trace_invariants(rule):
    opts = SolverOptions(balance_rule=rule)
    for p in _problems(200, 11):
        res = solve(p, opts)
        known = res.problem.known_array()
        prev = None
        for s in res.trace.snapshots:
            rows = s.beta_tilde.sum(axis=1) + s.beta_bar
            live = np.zeros_like(rows, dtype=bool)
            for i, j, c in res.problem.unknown:
                live[i, c] = True
            assert np.all(np.abs(rows[live] - 1.0) <= 1e-9)
            assert np.all((s.beta_tilde >= 0) & (s.beta_tilde <= 1))
            assert np.all((s.beta_bar >= 0) & (s.beta_bar <= 1))
            for t, v in res.problem.known.items():
                assert s.beta_tilde[t] == v
            if prev is not None:
                assert np.all(s.beta_bar <= prev.beta_bar)
                assert s.V_tilde <= prev.V_tilde
                assert all(s.U_tilde[j] <= prev.U_tilde[j] for j in s.U_tilde)
            prev = s
        assert np.array_equal(res.beta[known > 0], known[known > 0])


def test_local_equalization_after_partial_step():
    # the increment is measured against the unassigned demand, so adding
    # delta * S_bar of flow lands the pair exactly on mu+; when nothing of
    # the row was assigned yet (beta_bar = 1) that is the same as delta * S
    full_rows = 0
    for p in _problems(400, 12):
        res = solve(p)
        S = res.problem.demands
        R = np.maximum(res.problem.supplies, SolverOptions().supply_floor)
        snaps = res.trace.snapshots
        # original U_j, after rows settled up front are dropped
        left = set(res.problem.unknown) - set(res.trace.preassigned)
        for s, nxt in zip(snaps, snaps[1:]):
            if s.branch != "b" or s.delta_took_remainder or s.delta == 0.0:
                continue
            i, j, c = s.i_minus, s.j_minus, s.c_minus
            sumU = sum(s.p_oriented[ii, j] for ii in range(S.shape[0]) if any((ii, j, cc) in left for cc in range(S.shape[1])))
            before = float(s.beta_tilde[i, j, :] @ S[i, :])
            ratio = (before + s.delta * s.S_bar[i, c]) / (s.p_oriented[i, j] * R[j]) * sumU
            assert ratio == pytest.approx(s.mu_plus, rel=1e-9, abs=1e-9)
            if s.beta_bar[i, c] == 1.0:
                after = float(nxt.beta_tilde[i, j, :] @ S[i, :])
                assert after / (s.p_oriented[i, j] * R[j]) * sumU == pytest.approx(s.mu_plus, rel=1e-9, abs=1e-9)
                full_rows += 1
    assert full_rows > 20


def _permute(p: NodeProblem, pi, pj, pc):
    inv = lambda perm: {old: new for new, old in enumerate(perm)}
    ii, jj, cc = inv(pi), inv(pj), inv(pc)
    m = lambda t: (ii[t[0]], jj[t[1]], cc[t[2]])
    return NodeProblem(
        p.demands[np.ix_(pi, pc)],
        p.supplies[pj],
        p.priorities[pi],
        known={m(t): v for t, v in p.known.items()},
        unknown=frozenset(m(t) for t in p.unknown),
    )


def _tie_free(res):
    tol = 1e-6
    unknown = set(res.problem.unknown) - set(res.trace.preassigned)
    for s in res.trace.snapshots:
        if s.branch != "b":
            continue
        if len(s.Y) != 1 or len(s.W) != 1:
            return False
        vals = sorted(
            s.S_bar[i, c] for i in s.W for c in range(s.S_bar.shape[1])
            if s.beta_bar[i, c] > 0 and (i, s.j_minus, c) in unknown
        )
        if len(vals) > 1 and vals[1] - vals[0] <= tol * max(1.0, vals[0]):
            return False
    return True


def test_permutation_equivariance_on_tie_free_instances():
    rng = np.random.default_rng(13)
    checked = 0
    for _ in range(600):
        p = random_problem(rng, zero_prob=0.0)
        res = solve(p)
        if not _tie_free(res):
            continue
        M, N, C = p.shape
        pi, pj, pc = rng.permutation(M), rng.permutation(N), rng.permutation(C)
        other = solve(_permute(p, pi, pj, pc))
        assert np.allclose(other.beta, res.beta[np.ix_(pi, pj, pc)], rtol=0, atol=1e-9)
        checked += 1
    assert checked >= 50


def test_oracle_matches_on_worked_example():
    for rule in BalanceRule:
        opts = SolverOptions(balance_rule=rule)
        res = solve(worked_example(), opts)
        beta_o, trace_o = oracle_solve(worked_example(), opts)
        assert np.array_equal(res.beta, beta_o)
        assert trace_mismatch(res.trace, trace_o) is None
