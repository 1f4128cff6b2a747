"""Macroscopic managed-lane simulation with balancing split-ratio assignment."""

from .link import CellState, FundamentalDiagram, receiving, sending
from .node import compute_flows
from .problem import NodeFlows, NodeProblem, ValidationError, derive_sets, validate
from .simulator import Scenario, corridor, run, step_once
from .solver import BalanceRule, SolverOptions, Termination, regularize_priorities, solve

__all__ = [
    "BalanceRule",
    "CellState",
    "FundamentalDiagram",
    "NodeFlows",
    "NodeProblem",
    "Scenario",
    "SolverOptions",
    "Termination",
    "ValidationError",
    "compute_flows",
    "corridor",
    "derive_sets",
    "receiving",
    "regularize_priorities",
    "run",
    "sending",
    "solve",
    "step_once",
    "validate",
]
