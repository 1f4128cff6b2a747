"""Iterative balancing assignment of unknown split ratios at a node.

Each iteration finds the largest oriented demand-supply ratio over all
input/output pairs and the smallest one among pairs that can still receive
unassigned demand, then moves part of one (input, class) row's unassigned
portion toward the under-used output. When the two ratios coincide the
remainder is spread over the live outputs in one shot.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from .problem import NodeProblem, validate


class BalanceRule(str, enum.Enum):
    """Weighting used when the remaining portions are spread in one shot."""

    PLAIN_SUPPLY = "plain"
    ORIENTED_SUPPLY = "oriented"


class Termination(str, enum.Enum):
    EMPTY_V = "EMPTY_V"
    BALANCE_BRANCH = "BALANCE_BRANCH"
    ITERATION_CAP = "ITERATION_CAP"
    STALL = "STALL"


@dataclass(frozen=True)
class SolverOptions:
    balance_rule: BalanceRule = BalanceRule.PLAIN_SUPPLY
    mu_equal_tol: float = 1e-9
    supply_floor: float = 1e-9
    # None means 64 * M * N * C
    max_iterations: Optional[int] = None
    stall_tol: float = 1e-12
    # relative band inside which argmin candidates count as tied
    tie_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "balance_rule", BalanceRule(self.balance_rule))
        if not (self.mu_equal_tol > 0 and self.supply_floor > 0 and self.stall_tol > 0 and self.tie_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def iteration_cap(self, shape) -> int:
        M, N, C = shape
        return self.max_iterations if self.max_iterations is not None else 64 * M * N * C


def first_near_min(items, tol):
    """First ``key`` of ``(value, key)`` pairs whose value is within a
    relative ``tol`` of the minimum; ``items`` must be in tie-break order."""
    items = list(items)
    best = min(v for v, _ in items)
    for v, key in items:
        if v <= best + tol * abs(best):
            return key


def regularize_priorities(p, M: Optional[int] = None) -> np.ndarray:
    """Lift zero priorities to a positive share while keeping a unit sum.

    ``p_reg[i] = p[i] * (M - Z) / M + Z / M**2`` where ``Z`` counts the zero
    entries. Identity when every priority is positive.
    """
    p = np.asarray(p, dtype=float)
    if M is None:
        M = p.shape[0]
    n_zero = int(np.count_nonzero(p == 0))
    if n_zero == 0:
        return p.copy()
    return p * (M - n_zero) / M + n_zero / M**2


@dataclass
class SolverState:
    """Working state at iteration ``k`` plus the quantities derived from it.

    Derived fields are ``None`` on the terminal snapshot.
    """

    k: int
    beta_tilde: np.ndarray
    beta_bar: np.ndarray
    U_tilde: Dict[int, FrozenSet[int]]
    V_tilde: FrozenSet[int]
    S_bar: Optional[np.ndarray] = None
    S_tilde: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    p_oriented: Optional[np.ndarray] = None
    ratio: Optional[np.ndarray] = None
    mu_plus: Optional[float] = None
    mu_minus: Optional[float] = None
    Y: Optional[FrozenSet[int]] = None
    j_minus: Optional[int] = None
    W: Optional[FrozenSet[int]] = None
    i_minus: Optional[int] = None
    c_minus: Optional[int] = None
    branch: Optional[str] = None
    delta: Optional[float] = None
    delta_took_remainder: Optional[bool] = None


@dataclass
class SolverTrace:
    snapshots: List[SolverState] = field(default_factory=list)
    termination: Optional[Termination] = None
    # (i, j, c) -> value fixed before iterating (zero-demand, zero-remainder
    # or single-candidate rows)
    preassigned: Dict[Tuple[int, int, int], float] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.snapshots) - 1


@dataclass(frozen=True)
class SolveResult:
    beta: np.ndarray
    trace: SolverTrace
    problem: NodeProblem

    @property
    def termination(self) -> Termination:
        return self.trace.termination

    @property
    def flagged(self) -> bool:
        return self.trace.termination in (Termination.ITERATION_CAP, Termination.STALL)


def preassign(problem: NodeProblem):
    """Resolve rows that need no balancing.

    Returns ``(beta_init, unknown_mask, beta_bar, preassigned)`` where
    ``unknown_mask`` holds only the movements left for the iteration.
    """
    M, N, C = problem.shape
    beta = problem.known_array()
    unknown = problem.unknown_mask()
    beta_bar = np.zeros((M, C))
    fixed = {}
    for i in range(M):
        for c in range(C):
            js = np.flatnonzero(unknown[i, :, c])
            if js.size == 0:
                continue
            known_sum = 0.0
            for j in range(N):
                known_sum += problem.known.get((i, j, c), 0.0)
            rest = min(1.0, max(0.0, 1.0 - known_sum))
            if problem.demands[i, c] == 0:
                vals = [rest / js.size] * js.size
            elif rest == 0.0:
                vals = [0.0] * js.size
            elif js.size == 1:
                vals = [rest]
            else:
                beta_bar[i, c] = rest
                continue
            for j, v in zip(js, vals):
                beta[i, j, c] = v
                unknown[i, j, c] = False
                fixed[(i, int(j), c)] = v
    return beta, unknown, beta_bar, fixed


class _Node:
    """Per-solve constants shared by every iteration."""

    def __init__(self, problem: NodeProblem, options: SolverOptions):
        self.problem = problem
        self.options = options
        self.S = np.asarray(problem.demands, dtype=float)
        self.R = np.maximum(np.asarray(problem.supplies, dtype=float), options.supply_floor)
        self.p_reg = regularize_priorities(problem.priorities)
        self.S_total = np.zeros(self.S.shape[0])
        for c in range(self.S.shape[1]):
            self.S_total += self.S[:, c]
        beta, unknown, beta_bar, fixed = preassign(problem)
        self.beta_init = beta
        self.unknown = unknown
        self.beta_bar_init = beta_bar
        self.preassigned = fixed
        self.n_targets = unknown.sum(axis=1)  # |V_i^c|, (M, C)
        # original U_j membership, fixed for the whole solve
        self.U_mask = unknown.any(axis=2).T  # (N, M)

    def live_sets(self, beta_bar: np.ndarray):
        live_ic = beta_bar > 0
        # input i stays in U~_j while some class with an unknown toward j has remainder
        live_ij = (self.unknown & live_ic[:, None, :]).any(axis=2)  # (M, N)
        U_tilde = {}
        for j in range(live_ij.shape[1]):
            ins = np.flatnonzero(live_ij[:, j])
            if ins.size:
                U_tilde[j] = frozenset(int(i) for i in ins)
        return U_tilde, frozenset(U_tilde)

    def derive(self, st: SolverState) -> None:
        S, R = self.S, self.R
        M, N, C = self.beta_init.shape
        st.S_bar = st.beta_bar * S
        st.S_tilde = st.beta_tilde * S[:, None, :]
        share = np.where(self.unknown, st.beta_bar[:, None, :] / np.maximum(self.n_targets, 1)[:, None, :], 0.0)
        st.gamma = np.where(self.unknown, st.beta_tilde + share, st.beta_tilde)
        weighted = np.zeros((M, N))
        for c in range(C):
            weighted += st.gamma[:, :, c] * S[:, None, c]
        with np.errstate(divide="ignore", invalid="ignore"):
            p_or = np.where(
                self.S_total[:, None] > 0,
                self.p_reg[:, None] * weighted / self.S_total[:, None],
                0.0,
            )
        st.p_oriented = p_or
        pair_demand = np.zeros((M, N))
        for c in range(C):
            pair_demand += st.S_tilde[:, :, c]
        sumU = np.zeros(N)
        for i in range(M):
            sumU += np.where(self.U_mask[:, i], p_or[i, :], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = pair_demand / (p_or * R[None, :]) * sumU[None, :]
        # 0/0 dead pairs count as ratio zero
        st.ratio = np.where(pair_demand == 0, 0.0, ratio)
        self._pair_demand = pair_demand
        self._sumU = sumU
        st.mu_plus = float(st.ratio.max())

    def select(self, st: SolverState) -> None:
        ratio = st.ratio
        tol = self.options.tie_tol
        per_output = {}
        for j in sorted(st.V_tilde):
            per_output[j] = min(ratio[i, j] for i in sorted(st.U_tilde[j]))
        if not per_output:
            raise RuntimeError("live output set is empty")
        best = min(per_output.values())
        Y = [j for j in sorted(per_output) if per_output[j] <= best + tol * abs(best)]
        out_demand = np.zeros(ratio.shape[1])
        for i in range(ratio.shape[0]):
            out_demand += self._pair_demand[i, :]
        j_minus = first_near_min(((out_demand[j] / self.R[j], j) for j in Y), tol)
        m = per_output[j_minus]
        W = [i for i in sorted(st.U_tilde[j_minus]) if ratio[i, j_minus] <= m + tol * abs(m)]
        candidates = [
            (st.S_bar[i, c], (i, c))
            for i in W
            for c in range(self.S.shape[1])
            if st.beta_bar[i, c] > 0 and self.unknown[i, j_minus, c]
        ]
        if not candidates:
            raise RuntimeError(f"no live class for output {j_minus} among inputs {W}")
        i_minus, c_minus = first_near_min(candidates, tol)
        st.Y = frozenset(Y)
        st.j_minus = j_minus
        st.W = frozenset(W)
        st.i_minus = i_minus
        st.c_minus = c_minus
        st.mu_minus = float(ratio[i_minus, j_minus])

    def balance(self, st: SolverState, rule: BalanceRule):
        """One-shot spread of every live remainder; returns the new arrays."""
        beta_tilde = st.beta_tilde.copy()
        beta_bar = st.beta_bar.copy()
        M, N, C = beta_tilde.shape
        for i in range(M):
            for c in range(C):
                if beta_bar[i, c] <= 0:
                    continue
                js = [j for j in sorted(st.V_tilde) if self.unknown[i, j, c] and i in st.U_tilde[j]]
                if rule is BalanceRule.ORIENTED_SUPPLY:
                    w = [st.p_oriented[i, j] * self.R[j] for j in js]
                else:
                    w = [self.R[j] for j in js]
                total = 0.0
                for x in w:
                    total += x
                for j, x in zip(js, w):
                    beta_tilde[i, j, c] = beta_tilde[i, j, c] + x / total * beta_bar[i, c]
                beta_bar[i, c] = 0.0
        return beta_tilde, beta_bar

    def assign(self, st: SolverState):
        """Move part of the selected remainder toward the selected output."""
        i, j, c = st.i_minus, st.j_minus, st.c_minus
        S_bar = st.S_bar[i, c]
        needed = (
            st.mu_plus * st.p_oriented[i, j] * self.R[j] / (S_bar * self._sumU[j])
            - self._pair_demand[i, j] / S_bar
        )
        if __debug__ and st.mu_minus > 0:
            alt = (st.mu_plus / st.mu_minus - 1.0) * self._pair_demand[i, j] / S_bar
            assert abs(alt - needed) <= 1e-9 * max(1.0, abs(alt), st.mu_plus / st.mu_minus), (alt, needed)
        remainder = st.beta_bar[i, c]
        took_remainder = needed >= remainder
        delta = remainder if took_remainder else max(0.0, needed)
        beta_tilde = st.beta_tilde.copy()
        beta_bar = st.beta_bar.copy()
        beta_tilde[i, j, c] = beta_tilde[i, j, c] + delta
        beta_bar[i, c] = 0.0 if took_remainder else remainder - delta
        st.delta = float(delta)
        st.delta_took_remainder = bool(took_remainder)
        return beta_tilde, beta_bar


def _finish(node: _Node, trace: SolverTrace, k, beta_tilde, beta_bar, reason):
    U_tilde, V_tilde = node.live_sets(beta_bar)
    trace.snapshots.append(SolverState(k, beta_tilde, beta_bar, U_tilde, V_tilde))
    trace.termination = reason
    return beta_tilde


def solve(problem: NodeProblem, options: Optional[SolverOptions] = None) -> SolveResult:
    """Assign every unknown split ratio of ``problem``.

    The problem is validated first (``ValidationError`` propagates). The
    returned trace has one snapshot per iteration plus the terminal state.
    """
    options = options or SolverOptions()
    problem = validate(problem)
    node = _Node(problem, options)
    M, N, C = problem.shape
    cap = options.iteration_cap(problem.shape)
    stall_window = M * N * C
    trace = SolverTrace(preassigned=dict(node.preassigned))

    beta_tilde = node.beta_init.copy()
    beta_bar = node.beta_bar_init.copy()
    stalled = 0
    k = 0
    while True:
        U_tilde, V_tilde = node.live_sets(beta_bar)
        if not V_tilde:
            beta = _finish(node, trace, k, beta_tilde, beta_bar, Termination.EMPTY_V)
            break
        st = SolverState(k, beta_tilde, beta_bar, U_tilde, V_tilde)
        node.derive(st)
        forced = None
        if k >= cap:
            forced = Termination.ITERATION_CAP
        elif stalled >= stall_window:
            forced = Termination.STALL
        if forced is not None:
            st.branch = "a"
            trace.snapshots.append(st)
            beta_tilde, beta_bar = node.balance(st, options.balance_rule)
            beta = _finish(node, trace, k + 1, beta_tilde, beta_bar, forced)
            break
        node.select(st)
        trace.snapshots.append(st)
        if abs(st.mu_minus - st.mu_plus) <= options.mu_equal_tol * max(1.0, st.mu_plus):
            st.branch = "a"
            beta_tilde, beta_bar = node.balance(st, options.balance_rule)
            beta = _finish(node, trace, k + 1, beta_tilde, beta_bar, Termination.BALANCE_BRANCH)
            break
        st.branch = "b"
        beta_tilde, beta_bar = node.assign(st)
        stalled = stalled + 1 if st.delta < options.stall_tol else 0
        k += 1

    # known entries are carried through untouched
    for t, v in problem.known.items():
        beta[t] = v
    return SolveResult(beta=beta, trace=trace, problem=problem)


def force_balance(problem: NodeProblem, state: SolverState, rule, options: Optional[SolverOptions] = None):
    """Apply the one-shot spread to an arbitrary trace snapshot.

    Used to ask what a run would have produced had the balance branch fired
    at that iteration.
    """
    options = options or SolverOptions()
    node = _Node(validate(problem), options)
    st = SolverState(state.k, state.beta_tilde.copy(), state.beta_bar.copy(), state.U_tilde, state.V_tilde)
    node.derive(st)
    beta_tilde, _ = node.balance(st, BalanceRule(rule))
    return beta_tilde
