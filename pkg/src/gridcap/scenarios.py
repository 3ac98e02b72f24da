"""Hosting-capacity and operating-envelope pipelines over the phase-selection scenarios."""
import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assignment import (Binaries, Fixed, PhaseAssignment, Scenario, ScenarioKind,
                         assign_phases)
from .errors import GridcapError
from .lindist import lindist_solve, predict_voltages
from .netmodel import PHASES, Direction, worst_case_snapshot
from .powerflow import InjectionSet, check_constraints, run_power_flow
from .results import Formulation, SolveResult
from .slp import SlpConfig, certify, exact_voltages, slp_solve

INFEASIBLE = "Infeasible"
FAILED = "Failed"


class ScenarioError(GridcapError):
    """A solver error re-raised with the scenario, formulation and period it came from."""

    def __init__(self, message, scenario=None, formulation=None, period=None):
        super().__init__(message)
        self.scenario = scenario
        self.formulation = formulation
        self.period = period


def _scenario(value, seed=0):
    return value if isinstance(value, Scenario) else Scenario.parse(value, seed)


def base_case_report(network, snapshot, direction):
    """Constraint report of ``snapshot`` with no DER connected."""
    inj = InjectionSet.from_demand(network, snapshot, 0, direction=direction)
    rep = check_constraints(run_power_flow(network, inj))
    return rep


@dataclass
class _Outcome:
    """Result of one single-period (or snapshot) solve."""
    status: str
    result: SolveResult = None
    report: object = None        # certified report, or the base-case diagnostic
    elapsed: float = 0.0
    message: str = ""


def _solve_snapshot(network, snapshot, direction, scenario, mode, formulation, gap, cfg):
    direction = Direction(direction)
    t0 = time.perf_counter()
    base = base_case_report(network, snapshot, direction)
    if not base.ok:
        return _Outcome(INFEASIBLE, None, base, time.perf_counter() - t0,
                        f"base case violates limits at {base.violations[0].entity}")
    if not network.der_nodes:
        empty = SolveResult(formulation, direction, (), np.zeros((1, 0, 3)), snapshot,
                            model_objective_kw=0.0)
        return _Outcome("Optimal", empty, base, time.perf_counter() - t0)
    try:
        if formulation == Formulation.LINDIST:
            res, raw = lindist_solve(network, snapshot, direction, mode, gap=gap)
            if res is None:
                return _Outcome(INFEASIBLE, None, base, time.perf_counter() - t0,
                                f"linearised program is {raw.status.value}")
        else:
            cfg = SlpConfig(gap=gap) if cfg is None else cfg
            start = None
            if isinstance(mode, Binaries):
                # the linearised optimum is a good first guess for the phase pattern
                lin, _ = lindist_solve(network, snapshot, direction, mode, gap=gap)
                start = None if lin is None else lin.der_kw
            res, _ = slp_solve(network, snapshot, direction, mode, cfg, start=start)
    except GridcapError as exc:
        raise ScenarioError(f"{scenario} / {formulation}: {exc}", str(scenario),
                            formulation) from exc
    rep = certify(network, res)
    res.elapsed = time.perf_counter() - t0
    return _Outcome(res.status, res, rep, res.elapsed)


# ------------------------------------------------------------------ HC
@dataclass
class HcResult:
    """Static hosting capacity of one (scenario, formulation) pair."""
    scenario: Scenario
    formulation: str
    direction: Direction
    status: str
    objective_kw: float = 0.0
    per_node_kw: dict = field(default_factory=dict)
    binding: list = field(default_factory=list)
    report: object = None
    elapsed: float = 0.0
    iterations: int = 0
    gap: float = 0.0
    solution: SolveResult = None
    message: str = ""

    @property
    def feasible(self):
        return self.status not in (INFEASIBLE, FAILED)

    @property
    def certified_violation(self):
        return self.report.worst_exceedance() if self.report is not None and self.feasible else 0.0

    def to_dict(self, timing=True):
        out = {
            "scenario": str(self.scenario),
            "formulation": self.formulation,
            "direction": self.direction.value,
            "status": self.status,
            "objective_kw": self.objective_kw,
            "per_node_kw": self.per_node_kw,
            "binding": [list(b) for b in self.binding],
            "gap": self.gap,
            "iterations": self.iterations,
            "certified_violation": self.certified_violation,
            "report": self.report.to_dict() if self.report is not None else None,
            "message": self.message,
        }
        if timing:
            out["time_s"] = self.elapsed
        return out


def _hc_assignment(network, profile, snapshot, scenario, direction):
    if scenario.kind is ScenarioKind.S1:
        return Binaries()
    if scenario.kind.is_fixed:
        # fixed-phase rules look at the whole day, not only the snapshot
        asg = assign_phases(profile, scenario, direction, nodes=network.der_nodes)
        return Fixed(asg.period(0))
    return Fixed(assign_phases(snapshot, scenario, direction, nodes=network.der_nodes))


def hc_solve(network, profile, direction, scenario, formulation=Formulation.LINDIST, gap=0.0,
             cfg=None):
    """Hosting capacity on the worst-case snapshot of ``profile``.

    :param scenario: :class:`Scenario` or label (``"S1"`` .. ``"S5"``).
    :param formulation: ``Formulation.LINDIST`` or ``Formulation.SLP`` (or an alias).
    :param gap: relative MILP gap for the free-phase scenario.
    :param cfg: optional :class:`SlpConfig` for the exact formulation.
    """
    direction = Direction(direction)
    scenario = _scenario(scenario)
    formulation = Formulation.parse(formulation)
    profile.check_against(network)
    snap = worst_case_snapshot(profile, direction)
    mode = _hc_assignment(network, profile, snap, scenario, direction)
    out = _solve_snapshot(network, snap, direction, scenario, mode, formulation, gap, cfg)
    if out.result is None:
        return HcResult(scenario, formulation, direction, out.status, 0.0, {}, [], out.report,
                        out.elapsed, 0, 0.0, None, out.message)
    res = out.result
    return HcResult(scenario, formulation, direction, out.status, res.objective_kw,
                    res.per_node_kw(), list(out.report.binding), out.report, out.elapsed,
                    res.iterations, res.gap, res, out.message)


# ------------------------------------------------------------------ DOE
@dataclass
class DoeResult:
    """Per-period operating envelope.

    ``der_kw`` has shape ``(T, D, 3)``; ``status`` and ``messages`` hold one
    entry per period.  Failed or infeasible periods contribute zero power.
    """
    scenario: Scenario
    formulation: str
    direction: Direction
    der_nodes: tuple
    der_kw: np.ndarray
    status: list
    times: np.ndarray
    messages: list
    violations: np.ndarray

    @property
    def horizon(self):
        return self.der_kw.shape[0]

    @property
    def per_period_kw(self):
        return self.der_kw.sum(axis=(1, 2))

    @property
    def aggregate_kw(self):
        return float(self.per_period_kw.sum())

    @property
    def failed_periods(self):
        return [t for t, s in enumerate(self.status) if s in (INFEASIBLE, FAILED)]

    def same_as(self, other):
        """Equality of every computed quantity (timings excluded)."""
        return (self.der_nodes == other.der_nodes and self.status == other.status
                and self.messages == other.messages
                and np.array_equal(self.der_kw, other.der_kw)
                and np.array_equal(self.violations, other.violations))

    def schedule_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "node", "phase", "p_der_kw"])
        for t in range(self.horizon):
            for i, n in enumerate(self.der_nodes):
                for p in PHASES:
                    w.writerow([t, n, p.name, repr(float(self.der_kw[t, i, p]))])
        return buf.getvalue()

    def to_dict(self, timing=True):
        out = {
            "scenario": str(self.scenario),
            "formulation": self.formulation,
            "direction": self.direction.value,
            "aggregate_kw": self.aggregate_kw,
            "per_period_kw": self.per_period_kw.tolist(),
            "status": list(self.status),
            "messages": list(self.messages),
            "certified_violation": self.violations.tolist(),
        }
        if timing:
            out["time_s"] = self.times.tolist()
        return out


def _doe_period(args):
    network, snapshot, direction, scenario, mode, formulation, gap, cfg, t = args
    try:
        out = _solve_snapshot(network, snapshot, direction, scenario, mode, formulation, gap, cfg)
    except GridcapError as exc:
        return t, FAILED, None, 0.0, f"{type(exc).__name__}: {exc}", 0.0
    if out.result is None:
        return t, out.status, None, out.elapsed, out.message, 0.0
    return (t, out.status, out.result.der_kw[0], out.elapsed, out.message,
            out.report.worst_exceedance())


def doe_solve(network, profile, direction, scenario, formulation=Formulation.LINDIST, gap=0.0,
              workers=1, cfg=None):
    """Operating envelope: an independent problem for every period of ``profile``.

    Phases of the fixed scenarios are assigned once on the whole profile
    before the periods are distributed, so the answer does not depend on
    ``workers`` or on the order in which periods finish.
    """
    direction = Direction(direction)
    scenario = _scenario(scenario)
    formulation = Formulation.parse(formulation)
    if int(workers) < 1:
        raise ValueError("workers must be at least 1")
    profile.check_against(network)
    horizon = profile.horizon
    asg = None
    if scenario.kind is not ScenarioKind.S1:
        asg = assign_phases(profile, scenario, direction, nodes=network.der_nodes)
    jobs = []
    for t in range(horizon):
        mode = Binaries() if asg is None else Fixed(asg.period(t))
        jobs.append((network, profile.period(t), direction, scenario, mode, formulation, gap,
                     cfg, t))
    if workers == 1 or horizon == 1:
        outs = [_doe_period(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            outs = list(pool.map(_doe_period, jobs, chunksize=max(1, horizon // (4 * workers))))
    outs.sort(key=lambda o: o[0])
    nd = len(network.der_nodes)
    der_kw = np.zeros((horizon, nd, 3))
    status, msgs = [], []
    times = np.zeros(horizon)
    viol = np.zeros(horizon)
    for t, st, kw, el, msg, v in outs:
        if kw is not None and nd:
            der_kw[t] = kw
        status.append(st)
        msgs.append(msg)
        times[t] = el
        viol[t] = v
    return DoeResult(scenario, formulation, direction, tuple(network.der_nodes), der_kw, status,
                     times, msgs, viol)


# ------------------------------------------------------------------ comparison
@dataclass
class ComparisonCell:
    scenario: str
    formulation: str
    status: str
    objective_kw: float
    time_s: float
    gap: float
    certified_violation: float
    message: str = ""
    result: HcResult = None

    def row(self, timing=True):
        out = {"scenario": self.scenario, "formulation": self.formulation, "status": self.status,
               "objective_kw": self.objective_kw, "gap": self.gap,
               "certified_violation": self.certified_violation, "message": self.message}
        if timing:
            out["time_s"] = self.time_s
        return out


@dataclass
class ComparisonTable:
    direction: Direction
    cells: list

    COLUMNS = ("scenario", "formulation", "status", "objective_kw", "time_s", "gap",
               "certified_violation", "message")

    @property
    def shape(self):
        return (len({c.scenario for c in self.cells}), len({c.formulation for c in self.cells}))

    def cell(self, scenario, formulation):
        formulation = Formulation.parse(formulation)
        for c in self.cells:
            if c.formulation == formulation and c.scenario.split("(")[0] == str(scenario).split("(")[0]:
                return c
        raise KeyError((scenario, formulation))

    def best(self, formulation):
        formulation = Formulation.parse(formulation)
        ok = [c for c in self.cells if c.formulation == formulation
              and c.status not in (INFEASIBLE, FAILED)]
        return max(ok, key=lambda c: c.objective_kw) if ok else None

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for c in self.cells:
            w.writerow(c.row())
        return buf.getvalue()

    def to_dict(self, timing=True):
        return {"direction": self.direction.value,
                "cells": [c.row(timing) for c in self.cells]}

    def to_json(self, timing=True):
        return json.dumps(self.to_dict(timing), indent=1)


def _cell_from(hc):
    return ComparisonCell(str(hc.scenario), hc.formulation, hc.status, hc.objective_kw,
                          hc.elapsed, hc.gap, hc.certified_violation, hc.message, hc)


def compare_scenarios(network, profile, direction, formulations, scenarios, gap=0.0, seed=0,
                      cfg=None):
    """Hosting capacity for every (scenario, formulation) pair.

    Scenario labels are turned into :class:`Scenario` objects with ``seed``
    for the random ones.  A failing cell is recorded as ``Failed`` with its
    message and does not stop the others.
    """
    formulations = [Formulation.parse(f) for f in formulations]
    scenarios = [_scenario(s, seed) for s in scenarios]
    if not formulations or not scenarios:
        raise ValueError("at least one scenario and one formulation are required")
    direction = Direction(direction)
    cells = []
    for sc in scenarios:
        for form in formulations:
            try:
                cells.append(_cell_from(hc_solve(network, profile, direction, sc, form, gap, cfg)))
            except GridcapError as exc:
                cells.append(ComparisonCell(str(sc), form, FAILED, math.nan, 0.0, math.nan,
                                            math.nan, f"{type(exc).__name__}: {exc}"))
    return ComparisonTable(direction, cells)


def voltage_comparison(network, result):
    """Rows ``(node, phase, exact, linearised)`` for every period-0 node-phase of ``result``."""
    exact = exact_voltages(network, result)[0]
    lin = predict_voltages(network, result.demand, result.der_kw, result.direction)[0]
    return [(n, p.name, float(exact[i, p]), float(lin[i, p]))
            for i, n in enumerate(network.nodes) for p in PHASES]


def default_workers():
    return max(1, os.cpu_count() or 1)


__all__ = ["Scenario", "ScenarioKind", "PhaseAssignment", "assign_phases", "HcResult",
           "DoeResult", "ComparisonTable", "ComparisonCell", "ScenarioError", "hc_solve",
           "doe_solve", "compare_scenarios", "base_case_report", "voltage_comparison",
           "INFEASIBLE", "FAILED"]
