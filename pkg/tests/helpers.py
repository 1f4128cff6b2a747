"""Random node-problem generator shared by property and acceptance tests."""

import numpy as np

from lanesplit.problem import NodeProblem


def random_problem(rng: np.random.Generator, max_dim: int = 4, zero_prob: float = 0.15) -> NodeProblem:
    M, N, C = (int(x) for x in rng.integers(1, max_dim + 1, size=3))
    demands = rng.uniform(0, 100, size=(M, C))
    demands[rng.random((M, C)) < zero_prob] = 0.0
    supplies = rng.uniform(0, 100, size=N)
    priorities = rng.uniform(0, 1, size=M)
    priorities[rng.random(M) < zero_prob] = 0.0
    if priorities.sum() == 0:
        priorities[rng.integers(M)] = 1.0
    known, unknown = {}, set()
    for i in range(M):
        for c in range(C):
            kind = rng.choice(3, size=N, p=[0.5, 0.3, 0.2])  # unknown, known, implicit zero
            js_unknown = [j for j in range(N) if kind[j] == 0]
            js_known = [j for j in range(N) if kind[j] == 1]
            if not js_unknown and not js_known:
                js_known = [int(rng.integers(N))]
            if js_known:
                w = rng.dirichlet(np.ones(len(js_known) + (1 if js_unknown else 0)))
                for j, v in zip(js_known, w):
                    known[(i, j, c)] = float(v)
            for j in js_unknown:
                unknown.add((i, j, c))
    return NodeProblem(demands, supplies, priorities, known=known, unknown=frozenset(unknown))


TRACE_SCALARS = ("k", "mu_plus", "mu_minus", "j_minus", "i_minus", "c_minus", "branch", "delta")


def trace_mismatch(a, b, tol: float = 1e-12):
    """First difference between two solver traces, or None."""
    if a.termination != b.termination:
        return f"termination {a.termination} vs {b.termination}"
    if len(a.snapshots) != len(b.snapshots):
        return f"length {len(a.snapshots)} vs {len(b.snapshots)}"
    if a.preassigned.keys() != b.preassigned.keys():
        return "preassigned movements differ"
    for sa, sb in zip(a.snapshots, b.snapshots):
        for name in TRACE_SCALARS:
            va, vb = getattr(sa, name), getattr(sb, name)
            if isinstance(va, float) and isinstance(vb, float):
                if abs(va - vb) > tol:
                    return f"k={sa.k} {name}: {va!r} vs {vb!r}"
            elif va != vb:
                return f"k={sa.k} {name}: {va!r} vs {vb!r}"
        for name in ("beta_tilde", "beta_bar"):
            if np.max(np.abs(getattr(sa, name) - getattr(sb, name)), initial=0.0) > tol:
                return f"k={sa.k} {name} differs"
        if sa.V_tilde != sb.V_tilde or dict(sa.U_tilde) != dict(sb.U_tilde):
            return f"k={sa.k} live sets differ"
    return None
