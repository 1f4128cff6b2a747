"""Slow reference implementations used to certify the production code.

``oracle_solve`` walks the balancing algorithm step by step with plain
Python containers and recomputes every derived quantity from scratch each
iteration. ``brute_force_node_flows`` runs the priority redistribution of
the node model round by round. Neither is meant to be fast.
"""

from __future__ import annotations

from typing import Dict, List, Set, Tuple

import numpy as np

from .problem import NodeProblem, validate
from .solver import BalanceRule, SolverOptions, SolverState, SolverTrace, Termination


def _sum(values) -> float:
    acc = 0.0
    for v in values:
        acc += v
    return acc


def oracle_solve(problem: NodeProblem, options: SolverOptions = None):
    """Reference solve; returns ``(beta, trace)`` with the same contract as
    :func:`lanesplit.solver.solve`."""
    options = options or SolverOptions()
    problem = validate(problem)
    M, N, C = problem.shape
    S = {(i, c): float(problem.demands[i, c]) for i in range(M) for c in range(C)}
    R = {j: max(float(problem.supplies[j]), options.supply_floor) for j in range(N)}

    # priority regularization
    p = [float(x) for x in problem.priorities]
    zero = [i for i in range(M) if p[i] == 0]
    if zero:
        p_reg = [p[i] * (M - len(zero)) / M + len(zero) / M**2 for i in range(M)]
    else:
        p_reg = list(p)

    # movements that need no balancing are fixed up front
    B: Dict[Tuple[int, int, int], float] = dict(problem.known)
    B_bar: Set[Tuple[int, int, int]] = set(problem.unknown)
    fixed = {}
    for i in range(M):
        for c in range(C):
            targets = sorted(j for (ii, j, cc) in B_bar if ii == i and cc == c)
            if not targets:
                continue
            rest = 1.0 - _sum(B.get((i, j, c), 0.0) for j in range(N))
            rest = min(1.0, max(0.0, rest))
            if S[(i, c)] == 0:
                value = {j: rest / len(targets) for j in targets}
            elif rest == 0.0:
                value = {j: 0.0 for j in targets}
            elif len(targets) == 1:
                value = {targets[0]: rest}
            else:
                continue
            for j in targets:
                B[(i, j, c)] = value[j]
                B_bar.discard((i, j, c))
                fixed[(i, j, c)] = value[j]

    V = {j for (_, j, _) in B_bar}
    U = {j: {i for (i, jj, _) in B_bar if jj == j} for j in V}
    V_ic = {}
    for (i, j, c) in B_bar:
        V_ic.setdefault((i, c), set()).add(j)

    # step 1
    beta_t = {(i, j, c): B.get((i, j, c), 0.0) for i in range(M) for j in range(N) for c in range(C)}
    beta_b = {}
    for i in range(M):
        for c in range(C):
            if (i, c) in V_ic:
                rest = 1.0 - _sum(B.get((i, j, c), 0.0) for j in range(N))
                beta_b[(i, c)] = min(1.0, max(0.0, rest))
            else:
                beta_b[(i, c)] = 0.0
    U_t = {j: set(U[j]) for j in V}
    V_t = set(V)
    k = 0

    trace = SolverTrace(preassigned=fixed)
    cap = options.iteration_cap(problem.shape)
    stall_window = M * N * C
    stalled = 0

    def snapshot(k):
        bt = np.zeros((M, N, C))
        for key, v in beta_t.items():
            bt[key] = v
        bb = np.zeros((M, C))
        for key, v in beta_b.items():
            bb[key] = v
        return SolverState(
            k=k,
            beta_tilde=bt,
            beta_bar=bb,
            U_tilde={j: frozenset(U_t[j]) for j in sorted(U_t)},
            V_tilde=frozenset(V_t),
        )

    def spread(p_or, rule):
        new_t = dict(beta_t)
        for (i, c), rem in sorted(beta_b.items()):
            if rem <= 0:
                continue
            js = [j for j in sorted(V_t) if j in V_ic.get((i, c), ()) and i in U_t[j]]
            if rule is BalanceRule.ORIENTED_SUPPLY:
                w = [p_or[(i, j)] * R[j] for j in js]
            else:
                w = [R[j] for j in js]
            total = _sum(w)
            for j, x in zip(js, w):
                new_t[(i, j, c)] = new_t[(i, j, c)] + x / total * rem
        return new_t

    while True:
        # step 2
        if not V_t:
            trace.snapshots.append(snapshot(k))
            trace.termination = Termination.EMPTY_V
            break

        # step 3
        S_bar = {(i, c): beta_b[(i, c)] * S[(i, c)] for i in range(M) for c in range(C)}
        # step 4
        S_t = {(i, j, c): beta_t[(i, j, c)] * S[(i, c)] for i in range(M) for j in range(N) for c in range(C)}
        # step 5
        gamma = {}
        for i in range(M):
            for j in range(N):
                for c in range(C):
                    if (i, j, c) in B_bar:
                        gamma[(i, j, c)] = beta_t[(i, j, c)] + beta_b[(i, c)] / len(V_ic[(i, c)])
                    else:
                        gamma[(i, j, c)] = beta_t[(i, j, c)]
        p_or = {}
        for i in range(M):
            den = _sum(S[(i, c)] for c in range(C))
            for j in range(N):
                num = _sum(gamma[(i, j, c)] * S[(i, c)] for c in range(C))
                p_or[(i, j)] = p_reg[i] * num / den if den > 0 else 0.0

        def ratio(i, j):
            num = _sum(S_t[(i, j, c)] for c in range(C))
            if num == 0:
                return 0.0
            return num / (p_or[(i, j)] * R[j]) * _sum(p_or[(ii, j)] for ii in sorted(U.get(j, ())))

        # step 6
        mu_plus = max(ratio(i, j) for i in range(M) for j in range(N))

        st = snapshot(k)
        st.S_bar = np.array([[S_bar[(i, c)] for c in range(C)] for i in range(M)])
        st.mu_plus = mu_plus

        if k >= cap or stalled >= stall_window:
            st.branch = "a"
            trace.snapshots.append(st)
            beta_t = spread(p_or, options.balance_rule)
            beta_b = {key: 0.0 for key in beta_b}
            U_t, V_t = {}, set()
            trace.snapshots.append(snapshot(k + 1))
            trace.termination = Termination.ITERATION_CAP if k >= cap else Termination.STALL
            break

        # step 7; near-equal values count as tied, lowest index wins
        tol = options.tie_tol
        lowest = {j: min(ratio(i, j) for i in sorted(U_t[j])) for j in sorted(V_t)}
        m = min(lowest.values())
        Y = [j for j in sorted(lowest) if lowest[j] <= m + tol * abs(m)]
        d = {j: _sum(_sum(S_t[(i, j, c)] for c in range(C)) for i in range(M)) / R[j] for j in Y}
        d_min = min(d.values())
        j_minus = next(j for j in Y if d[j] <= d_min + tol * abs(d_min))
        # step 8
        m = lowest[j_minus]
        W = [i for i in sorted(U_t[j_minus]) if ratio(i, j_minus) <= m + tol * abs(m)]
        pool = [(i, c) for i in W for c in range(C) if beta_b[(i, c)] > 0 and (i, j_minus, c) in B_bar]
        s_min = min(S_bar[ic] for ic in pool)
        i_minus, c_minus = next(ic for ic in pool if S_bar[ic] <= s_min + tol * abs(s_min))
        # step 9
        mu_minus = ratio(i_minus, j_minus)
        st.j_minus, st.i_minus, st.c_minus, st.mu_minus = j_minus, i_minus, c_minus, mu_minus
        st.Y, st.W = frozenset(Y), frozenset(W)
        trace.snapshots.append(st)

        if abs(mu_minus - mu_plus) <= options.mu_equal_tol * max(1.0, mu_plus):
            # 9(a)
            st.branch = "a"
            beta_t = spread(p_or, options.balance_rule)
            beta_b = {key: 0.0 for key in beta_b}
            U_t, V_t = {}, set()
            trace.snapshots.append(snapshot(k + 1))
            trace.termination = Termination.BALANCE_BRANCH
            break

        # 9(b)
        st.branch = "b"
        Sb = S_bar[(i_minus, c_minus)]
        second = (
            mu_plus * p_or[(i_minus, j_minus)] * R[j_minus] / (Sb * _sum(p_or[(ii, j_minus)] for ii in sorted(U[j_minus])))
            - _sum(S_t[(i_minus, j_minus, c)] for c in range(C)) / Sb
        )
        first = beta_b[(i_minus, c_minus)]
        delta = first if second >= first else max(0.0, second)
        st.delta = delta
        st.delta_took_remainder = second >= first
        beta_t[(i_minus, j_minus, c_minus)] = beta_t[(i_minus, j_minus, c_minus)] + delta
        beta_b[(i_minus, c_minus)] = 0.0 if second >= first else first - delta
        for j in sorted(V_t):
            U_t[j] = {
                i for i in U_t[j]
                if any(beta_b[(i, c)] > 0 and (i, j, c) in B_bar for c in range(C))
            }
        V_t = {j for j in V_t if U_t[j]}
        U_t = {j: U_t[j] for j in V_t}
        stalled = stalled + 1 if delta < options.stall_tol else 0
        # step 10
        k += 1

    beta = np.zeros((M, N, C))
    for key, v in beta_t.items():
        beta[key] = v
    for key, v in problem.known.items():
        beta[key] = v
    return beta, trace


def brute_force_node_flows(demands, supplies, priorities, beta, eps: float = 1e-12):
    """Node flows by explicit round-by-round supply redistribution.

    Each round every still-constrained input claims a priority-weighted share
    of the supply left at an output; inputs whose demand fits their claim
    are settled and drop out. Asserts the settled set only grows and that the
    fixpoint is reached within ``M`` rounds.
    """
    S = np.asarray(demands, dtype=float)
    R = np.asarray(supplies, dtype=float)
    p = np.asarray(priorities, dtype=float)
    beta = np.asarray(beta, dtype=float)
    M, C = S.shape
    N = R.shape[0]
    if M > 3 or N > 3:
        raise ValueError("brute force oracle supports M, N <= 3")
    oriented = [[_sum(beta[i, j, c] * S[i, c] for c in range(C)) for j in range(N)] for i in range(M)]
    alloc = [[0.0] * N for _ in range(M)]
    for j in range(N):
        settled: Dict[int, float] = {}
        active = [i for i in range(M) if oriented[i][j] > 0]
        rounds = 0
        while True:
            left = R[j] - _sum(settled.values())
            open_ = [i for i in active if i not in settled]
            if not open_:
                break
            weights = {i: p[i] for i in open_}
            total = _sum(weights.values())
            if total <= 0:
                weights = {i: 1.0 for i in open_}
                total = float(len(open_))
            claims = {i: left * weights[i] / total for i in open_}
            newly = [i for i in open_ if oriented[i][j] <= claims[i] + eps]
            if not newly:
                for i in open_:
                    settled[i] = claims[i]
                break
            before = set(settled)
            for i in newly:
                settled[i] = oriented[i][j]
            assert before < set(settled), "redistribution did not progress"
            rounds += 1
            if rounds > M:
                raise AssertionError(f"no fixpoint within {M} rounds at output {j}")
        for i, a in settled.items():
            alloc[i][j] = a
    flows = np.zeros((M, N, C))
    alpha = np.ones(M)
    for i in range(M):
        for j in range(N):
            if oriented[i][j] > 0:
                alpha[i] = min(alpha[i], alloc[i][j] / oriented[i][j])
        for j in range(N):
            for c in range(C):
                flows[i, j, c] = alpha[i] * beta[i, j, c] * S[i, c]
    return flows
