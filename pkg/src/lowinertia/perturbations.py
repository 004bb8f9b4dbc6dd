"""Perturbation records applied by the solver at known event times."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class YbusChange:
    """Swap the static admittance matrix at ``time``."""

    time: float
    ybus: np.ndarray

    def __post_init__(self):
        ybus = np.array(self.ybus, dtype=complex)
        if ybus.ndim != 2 or ybus.shape[0] != ybus.shape[1]:
            raise ValueError("YbusChange.ybus must be a square matrix")
        object.__setattr__(self, "ybus", ybus)


@dataclass(frozen=True)
class NetworkChange:
    """Declarative Ybus change as written in case files.

    ``branches`` replaces the set of static branches (``None`` keeps the
    branches in service at the event); ``shunts`` adds per-bus complex
    admittances, e.g. a bolted fault ``((2, -1e6j),)``.
    """

    time: float
    branches: tuple | None = None
    shunts: tuple[tuple[int, complex], ...] = ()


@dataclass(frozen=True)
class BranchTrip:
    time: float
    branches: tuple[str, ...]

    def __post_init__(self):
        if isinstance(self.branches, str):
            object.__setattr__(self, "branches", (self.branches,))
        else:
            object.__setattr__(self, "branches", tuple(self.branches))
        if not self.branches:
            raise ValueError("BranchTrip needs at least one branch")


@dataclass(frozen=True)
class ReferenceStep:
    time: float
    device: str
    reference: str
    value: float


@dataclass(frozen=True)
class SimulationConfig:
    tspan: tuple[float, float] = (0.0, 10.0)
    dtmax: float = 0.02
    rtol: float = 1e-6
    atol: float = 1e-8
    method: str = "bdf"
    perturbations: tuple = field(default_factory=tuple)
    max_order: int = 5

    def __post_init__(self):
        t0, t1 = self.tspan
        if not t1 > t0:
            raise ValueError(f"tspan must be increasing, got {self.tspan}")
        if not self.dtmax > 0:
            raise ValueError("dtmax must be > 0")
        for p in self.perturbations:
            if not t0 <= p.time <= t1:
                raise ValueError(f"perturbation at t={p.time} outside tspan {self.tspan}")
