"""Solver-independent DER schedule container."""
import math
from dataclasses import dataclass, field

import numpy as np

from .netmodel import PHASES, Direction


class Formulation:
    LINDIST = "LinDist3Flow"
    SLP = "CurrentVoltageSLP"

    @staticmethod
    def parse(value):
        key = str(value).strip().lower()
        if key in ("lin", "lindist", "lindist3flow", "lp"):
            return Formulation.LINDIST
        if key in ("cv", "slp", "nlp", "currentvoltage", "currentvoltageslp", "current-voltage"):
            return Formulation.SLP
        raise ValueError(f"unknown formulation {value!r}")


@dataclass
class SolveResult:
    """A DER schedule for one or more periods.

    ``der_kw`` has shape ``(T, len(der_nodes), 3)``.  ``phases`` holds the
    phase index carrying DER power per (period, node) or -1 when none does.
    ``voltage_pred`` is the formulation's own voltage-magnitude prediction
    (``(T, N, 3)``), when it has one.
    """
    formulation: str
    direction: Direction
    der_nodes: tuple
    der_kw: np.ndarray
    demand: object
    status: str = "Optimal"
    gap: float = 0.0
    elapsed: float = 0.0
    iterations: int = 0
    phases: np.ndarray = None
    voltage_pred: np.ndarray = None
    model_objective_kw: float = math.nan
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.direction = Direction(self.direction)
        self.der_kw = np.asarray(self.der_kw, dtype=float)
        if self.phases is None:
            self.phases = phase_pattern(self.der_kw)

    @property
    def horizon(self):
        return self.der_kw.shape[0]

    @property
    def objective_kw(self):
        return float(self.der_kw.sum())

    @property
    def per_period_kw(self):
        return self.der_kw.sum(axis=(1, 2))

    def der_pu(self, base_power):
        return self.der_kw * 1e3 / base_power

    def scaled(self, factor):
        out = SolveResult(self.formulation, self.direction, self.der_nodes, self.der_kw * factor,
                          self.demand, self.status, self.gap, self.elapsed, self.iterations,
                          self.phases, None, self.model_objective_kw, list(self.flags))
        return out

    def per_node_kw(self, t=None):
        """``{node: {phase: kW}}`` for one period, or summed over all periods."""
        arr = self.der_kw.sum(axis=0) if t is None else self.der_kw[t]
        return {n: {p.name: float(arr[i, p]) for p in PHASES} for i, n in enumerate(self.der_nodes)}

    def schedule_rows(self):
        """``(period, node, phase, kW)`` tuples with nonzero power."""
        rows = []
        for t in range(self.horizon):
            for i, n in enumerate(self.der_nodes):
                for p in PHASES:
                    v = float(self.der_kw[t, i, p])
                    if v != 0.0:
                        rows.append((t, n, p.name, v))
        return rows


def phase_pattern(der_kw, tol=0.0):
    """Index of the phase carrying power per (period, node); -1 if none."""
    der_kw = np.asarray(der_kw)
    on = der_kw > tol
    out = np.where(on.any(axis=2), np.argmax(der_kw, axis=2), -1)
    return out
