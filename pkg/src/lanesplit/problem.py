"""Node-problem vocabulary shared by the solver, node model and simulator.

Index conventions: inputs ``i`` in ``[0, M)``, outputs ``j`` in ``[0, N)``,
classes ``c`` in ``[0, C)``. A movement is the triple ``(i, j, c)``.
Flows and demands are in vehicles per timestep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Mapping, Sequence, Tuple

import numpy as np

Triple = Tuple[int, int, int]

ROW_TOL = 1e-9
PRIORITY_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when a node problem violates one or more input assumptions.

    ``issues`` holds one human-readable line per violation.
    """

    def __init__(self, issues: Sequence[str]):
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NodeProblem:
    """One interface's inputs to the split solver.

    ``demands`` is ``(M, C)``, ``supplies`` is ``(N,)``, ``priorities`` is
    ``(M,)``. ``known`` maps movements to fixed split ratios; ``unknown`` is
    the set of movements the solver assigns. Every other movement is
    implicitly zero.
    """

    demands: np.ndarray
    supplies: np.ndarray
    priorities: np.ndarray
    known: Mapping[Triple, float] = field(default_factory=dict)
    unknown: FrozenSet[Triple] = frozenset()
    input_labels: Tuple[str, ...] = ()
    output_labels: Tuple[str, ...] = ()
    class_labels: Tuple[str, ...] = ()
    notes: Tuple[str, ...] = ()

    def __post_init__(self):
        demands = np.atleast_2d(np.asarray(self.demands, dtype=float))
        object.__setattr__(self, "demands", _frozen(demands))
        object.__setattr__(self, "supplies", _frozen(np.ravel(self.supplies)))
        object.__setattr__(self, "priorities", _frozen(np.ravel(self.priorities)))
        object.__setattr__(
            self, "known", {tuple(int(x) for x in k): float(v) for k, v in dict(self.known).items()}
        )
        object.__setattr__(self, "unknown", frozenset(tuple(int(x) for x in t) for t in self.unknown))
        M, C = self.demands.shape
        N = self.supplies.shape[0]
        if not self.input_labels:
            object.__setattr__(self, "input_labels", tuple(str(i) for i in range(M)))
        if not self.output_labels:
            object.__setattr__(self, "output_labels", tuple(str(j) for j in range(N)))
        if not self.class_labels:
            object.__setattr__(self, "class_labels", tuple(str(c) for c in range(C)))
        object.__setattr__(self, "input_labels", tuple(self.input_labels))
        object.__setattr__(self, "output_labels", tuple(self.output_labels))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def shape(self) -> Tuple[int, int, int]:
        """``(M, N, C)``."""
        return self.demands.shape[0], self.supplies.shape[0], self.demands.shape[1]

    def label(self, i=None, j=None, c=None) -> str:
        parts = []
        if i is not None:
            parts.append(f"i={self.input_labels[i]}")
        if j is not None:
            parts.append(f"j={self.output_labels[j]}")
        if c is not None:
            parts.append(f"c={self.class_labels[c]}")
        return "(" + ", ".join(parts) + ")"

    def known_array(self) -> np.ndarray:
        """Dense ``(M, N, C)`` array of known splits, zero elsewhere."""
        out = np.zeros(self.shape)
        for (i, j, c), v in self.known.items():
            out[i, j, c] = v
        return out

    def unknown_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for i, j, c in self.unknown:
            mask[i, j, c] = True
        return mask

    def scaled(self, lam: float) -> "NodeProblem":
        """Copy with demands and supplies multiplied by ``lam``."""
        return replace(self, demands=self.demands * lam, supplies=self.supplies * lam)


@dataclass(frozen=True)
class NodeSets:
    """Index sets derived from the known/unknown partition of a node problem."""

    V: FrozenSet[int]
    U: Dict[int, FrozenSet[int]]
    V_ic: Dict[Tuple[int, int], FrozenSet[int]]
    beta_bar: np.ndarray
    trivially_assignable: FrozenSet[Tuple[int, int]]


def validate(problem: NodeProblem) -> NodeProblem:
    """Check every input assumption and return a normalized copy.

    Raises :class:`ValidationError` listing all violations at once.
    Priorities that do not sum to one are rescaled and the rescaling is
    recorded in ``notes``. Applying ``validate`` twice is the same as once.
    """
    issues = []
    notes = list(problem.notes)
    M, N, C = problem.shape
    S, R, p = problem.demands, problem.supplies, problem.priorities

    if M < 1 or N < 1 or C < 1:
        raise ValidationError([f"empty node: M={M}, N={N}, C={C}"])
    if p.shape != (M,):
        issues.append(f"priorities: expected {M} values, got {p.shape[0]}")
    for name, labels, n in (
        ("input_labels", problem.input_labels, M),
        ("output_labels", problem.output_labels, N),
        ("class_labels", problem.class_labels, C),
    ):
        if len(labels) != n:
            issues.append(f"{name}: expected {n} labels, got {len(labels)}")
    if not np.all(np.isfinite(S)) or np.any(S < 0):
        issues.append("demands: values must be finite and nonnegative")
    if not np.all(np.isfinite(R)) or np.any(R < 0):
        issues.append("supplies: values must be finite and nonnegative")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        issues.append("priorities: values must be finite and nonnegative")
    if issues:
        raise ValidationError(issues)

    def in_range(t: Triple) -> bool:
        i, j, c = t
        return 0 <= i < M and 0 <= j < N and 0 <= c < C

    for t in sorted(set(problem.known) | problem.unknown):
        if not in_range(t):
            issues.append(f"movement {t} out of range for M={M}, N={N}, C={C}")
    for t in sorted(set(problem.known) & problem.unknown):
        issues.append(f"movement {t} is both known and unknown")
    for t, v in sorted(problem.known.items()):
        if not (0.0 <= v <= 1.0) or math.isnan(v):
            issues.append(f"known split {t} = {v} outside [0, 1]")
    if issues:
        raise ValidationError(issues)

    known = problem.known_array()
    unknown = problem.unknown_mask()
    for i in range(M):
        for c in range(C):
            row = float(np.sum(known[i, :, c]))
            has_unknown = bool(unknown[i, :, c].any())
            if row > 1.0 + ROW_TOL:
                issues.append(f"row sum exceeds 1 for {problem.label(i=i, c=c)}: {row:.12g}")
            elif S[i, c] > 0 and not has_unknown and abs(row - 1.0) > ROW_TOL:
                issues.append(
                    f"splits for {problem.label(i=i, c=c)} sum to {row:.12g} with positive demand and no unknown entries"
                )
            if S[i, c] == 0 and has_unknown:
                note = f"zero demand with unknown splits for {problem.label(i=i, c=c)}; assigned uniformly"
                if note not in notes:
                    notes.append(note)

    total = float(np.sum(p))
    if total <= 0:
        issues.append("priorities: at least one must be positive")
    if issues:
        raise ValidationError(issues)
    if abs(total - 1.0) > PRIORITY_TOL:
        notes.append(f"priorities normalized from sum {total:.12g} to 1")
        p = p / total

    return replace(problem, priorities=p, notes=tuple(notes))


def derive_sets(problem: NodeProblem) -> NodeSets:
    """Output set with unknowns, per-output input sets, per-row output sets
    and unassigned portions.

    The unassigned portion of a row without unknown entries is reported as
    zero so that such rows never count as live.
    """
    M, N, C = problem.shape
    V = set()
    U: Dict[int, set] = {}
    V_ic: Dict[Tuple[int, int], set] = {}
    for i, j, c in problem.unknown:
        V.add(j)
        U.setdefault(j, set()).add(i)
        V_ic.setdefault((i, c), set()).add(j)
    beta_bar = np.zeros((M, C))
    for (i, c) in V_ic:
        known_sum = 0.0
        for j in range(N):
            known_sum += problem.known.get((i, j, c), 0.0)
        beta_bar[i, c] = min(1.0, max(0.0, 1.0 - known_sum))
    trivial = frozenset(ic for ic, js in V_ic.items() if len(js) == 1)
    return NodeSets(
        V=frozenset(V),
        U={j: frozenset(s) for j, s in sorted(U.items())},
        V_ic={ic: frozenset(s) for ic, s in sorted(V_ic.items())},
        beta_bar=beta_bar,
        trivially_assignable=trivial,
    )


@dataclass(frozen=True, eq=False)
class NodeFlows:
    """Realized flows ``f[i, j, c]`` through a node, vehicles per timestep."""

    flows: np.ndarray
    alpha: np.ndarray

    def inflow_to(self) -> np.ndarray:
        """Per-output total inflow, ``(N,)``."""
        return self.flows.sum(axis=(0, 2))

    def outflow_from(self) -> np.ndarray:
        """Per-(input, class) realized outflow, ``(M, C)``."""
        return self.flows.sum(axis=1)


def check_split_matrix(problem: NodeProblem, beta: np.ndarray, tol: float = ROW_TOL) -> list:
    """Return a list of split-matrix invariant violations (empty if valid)."""
    problems = []
    M, N, C = problem.shape
    if beta.shape != (M, N, C):
        return [f"shape {beta.shape} != {(M, N, C)}"]
    if np.any(beta < 0) or np.any(beta > 1):
        problems.append("entries outside [0, 1]")
    for i in range(M):
        for c in range(C):
            if problem.demands[i, c] > 0:
                s = float(beta[i, :, c].sum())
                if abs(s - 1.0) > tol:
                    problems.append(f"row {problem.label(i=i, c=c)} sums to {s!r}")
    for t, v in problem.known.items():
        if beta[t] != v:
            problems.append(f"known split {t} changed from {v!r} to {beta[t]!r}")
    return problems
