"""Sending and receiving functions for finite-volume cells.

Triangular fundamental diagram; multi-class demand is split in proportion to
class density. All functions return vehicles per timestep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FundamentalDiagram:
    """Triangular flux: free-flow branch ``v*rho`` capped at ``q_max``,
    congested branch ``w*(rho_jam - rho)``."""

    free_flow_speed: float
    congestion_wave_speed: float
    capacity: float
    jam_density: float

    def __post_init__(self):
        for name in ("free_flow_speed", "congestion_wave_speed", "capacity", "jam_density"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.critical_density >= self.jam_density:
            raise ValueError("critical density capacity/free_flow_speed must be below jam density")

    @property
    def critical_density(self) -> float:
        return self.capacity / self.free_flow_speed


@dataclass(frozen=True)
class CellState:
    densities: np.ndarray  # per class, veh/length
    length: float

    @property
    def total(self) -> float:
        return float(np.sum(self.densities))


def sending(cell: CellState, fd: FundamentalDiagram, dt: float) -> np.ndarray:
    """Per-class demand of one cell."""
    return sending_array(np.asarray(cell.densities, dtype=float)[None, :], fd, dt)[0]


def receiving(cell: CellState, fd: FundamentalDiagram, dt: float) -> float:
    """Supply of one cell."""
    return float(receiving_array(np.array([cell.total]), fd, dt)[0])


def sending_array(rho: np.ndarray, fd: FundamentalDiagram, dt: float) -> np.ndarray:
    """Vectorized demand: ``rho`` is ``(cells, C)``, result has the same shape."""
    total = rho.sum(axis=1)
    S = np.minimum(fd.free_flow_speed * total, fd.capacity) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(total[:, None] > 0, rho / total[:, None], 0.0)
    return S[:, None] * share


def receiving_array(total: np.ndarray, fd: FundamentalDiagram, dt: float) -> np.ndarray:
    """Vectorized supply from total densities ``(cells,)``."""
    R = np.minimum(fd.capacity, fd.congestion_wave_speed * (fd.jam_density - total)) * dt
    return np.maximum(R, 0.0)
