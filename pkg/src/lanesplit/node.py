"""Realized flows through a merge-diverge node for given split ratios.

Supply at each output is apportioned among competing inputs in proportion to
their priorities; claims an input does not need are handed back and
redistributed until every remaining input is constrained. Each input then
moves at a single rate set by its most restrictive movement (first-in
first-out), so class and destination proportions inside an input are kept.
"""

from __future__ import annotations

import numpy as np

from .problem import NodeFlows


def allocate_supply(oriented: np.ndarray, supply: float, priorities: np.ndarray) -> np.ndarray:
    """Water-fill one output's supply over inputs with oriented demands.

    ``oriented`` is ``(M,)``. Inputs with zero oriented demand take nothing.
    If every still-open input has zero priority the leftover is shared
    equally among them.
    """
    M = oriented.shape[0]
    alloc = np.zeros(M)
    open_ = oriented > 0
    left = float(supply)
    for _ in range(M):
        if not open_.any():
            break
        w = np.where(open_, priorities, 0.0)
        if w.sum() <= 0:
            w = open_.astype(float)
        claims = left * w / w.sum()
        fits = open_ & (oriented <= claims)
        if not fits.any():
            alloc[open_] = claims[open_]
            break
        alloc[fits] = oriented[fits]
        left -= float(oriented[fits].sum())
        open_ &= ~fits
    return alloc


def compute_flows(demands, supplies, priorities, beta) -> NodeFlows:
    """Node flows ``f[i, j, c] = alpha_i * beta[i, j, c] * S[i, c]``."""
    S = np.asarray(demands, dtype=float)
    R = np.asarray(supplies, dtype=float)
    p = np.asarray(priorities, dtype=float)
    beta = np.asarray(beta, dtype=float)
    oriented = np.einsum("ijc,ic->ij", beta, S)
    M, N = oriented.shape
    alloc = np.empty((M, N))
    for j in range(N):
        alloc[:, j] = allocate_supply(oriented[:, j], R[j], p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(oriented > 0, alloc / oriented, np.inf)
    alpha = np.minimum(ratios.min(axis=1), 1.0)
    flows = alpha[:, None, None] * beta * S[:, None, :]
    return NodeFlows(flows=flows, alpha=alpha)
