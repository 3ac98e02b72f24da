"""Exact current-voltage hosting capacity by successive linear programming.

Each iteration solves the exact power flow at the present DER schedule,
linearises the squared voltage magnitudes, the negative and positive
sequence voltages and the branch current phasors with respect to the DER
powers, and solves an LP (a MILP when the phase is free) inside a
trust region.  Constraint rows are elastic with an l1 penalty, and the trust
radius follows the ratio of actual to predicted change of the penalised
objective.  The returned schedule is always re-checked by the exact power
flow and scaled back when needed, so the reported value is the physical one.
"""
import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .assignment import Binaries, Fixed, PhaseAssignment
from .errors import ModelError, NoProgress
from .lp_core import LinearProgram, MilpProblem, Sense, solve_lp, solve_milp
from .netmodel import Direction
from .powerflow import (InjectionSet, check_constraints, injection_sensitivity, run_power_flow,
                        worst_report)
from .results import Formulation, SolveResult

_A = np.exp(2j * np.pi / 3)
_POS = np.array([1, _A, _A ** 2]) / 3.0
_NEG = np.array([1, _A ** 2, _A]) / 3.0
CURRENT_GUARD = 1e-6


@dataclass(frozen=True)
class SlpConfig:
    """Iteration controls.  Powers and radii are per unit."""
    max_iterations: int = 30
    step_tolerance: float = 1e-6
    trust_radius: float = 0.1
    feasibility_shrink: float = 0.98
    min_radius: float = 1e-4
    max_radius: float = 1.0
    penalty: float = 1e4
    margin: float = 1e-6
    gap: float = 0.0

    def __post_init__(self):
        for name in ("max_iterations", "step_tolerance", "trust_radius", "feasibility_shrink",
                     "min_radius", "max_radius", "penalty"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.feasibility_shrink < 1.0:
            raise ValueError("feasibility_shrink must be below 1")


@dataclass
class SlpStep:
    iteration: int
    lp_obj: float
    exact_obj: float
    max_violation: float
    step_norm: float
    radius: float = math.nan
    accepted: bool = True
    period: int = 0


@dataclass
class SlpTrace:
    steps: list = field(default_factory=list)
    status: str = "Converged"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "lp_obj", "exact_obj", "max_violation", "step_norm"])
        for s in self.steps:
            w.writerow([s.iteration, repr(s.lp_obj), repr(s.exact_obj), repr(s.max_violation),
                        repr(s.step_norm)])
        return buf.getvalue()

    @property
    def last_violation(self):
        return self.steps[-1].max_violation if self.steps else 0.0


# ------------------------------------------------------------------ physics
_CUT_ANGLES = np.exp(-1j * 2 * np.pi * np.arange(8) / 8)


class _Model:
    """Constraint values and their linear models for one period.

    Voltage limits use the first-order expansion of ``|U|^2``.  The negative
    sequence voltage and the branch currents are expanded as complex-affine
    functions of the DER powers and their magnitudes are bounded by
    supporting hyperplanes: one aligned with the present phasor (the exact
    first-order model of the magnitude) plus eight fixed directions.
    """

    def __init__(self, network, snapshot, direction, der_idx, cfg):
        self.net = network
        self.direction = Direction(direction)
        self.der_idx = np.asarray(der_idx, dtype=int)   # network node index per DER node
        self.inj = InjectionSet.from_demand(network, snapshot, 0, direction=self.direction)
        self.cfg = cfg
        lim = network.limits
        self.amp = np.array([br.ampacity for br in network.branches])
        self.u2 = (lim.u_min ** 2 + cfg.margin, lim.u_max ** 2 - cfg.margin)
        self.vuf = lim.vuf_max
        nonslack = np.ones(len(network.nodes), dtype=bool)
        nonslack[network.node_index[network.slack]] = False
        self.nonslack = nonslack

    def der_matrix(self, p, columns):
        der = np.zeros((len(self.net.nodes), 3))
        for (n, ph), v in zip(columns, p):
            der[n, ph] += v
        return der

    def state(self, p, columns):
        return run_power_flow(self.net, self.inj.with_der(self.der_matrix(p, columns)))

    def values(self, st):
        """Constraint functions; positive entries are violations."""
        v = st.voltage[self.nonslack]
        mag2 = np.abs(v) ** 2
        m = self.cfg.margin
        return {
            "vmin": (self.u2[0] - mag2).ravel(),
            "vmax": (mag2 - self.u2[1]).ravel(),
            "vuf": np.abs(v @ _NEG) - self.vuf * np.abs(v @ _POS) + m,
            "cur": (np.abs(st.branch_current) - self.amp[:, None] * (1 - m)).ravel(),
        }

    def violation(self, vals):
        return float(sum(np.maximum(a, 0.0).sum() for a in vals.values()))

    def block_values(self, st):
        """Exact value of each block's constraint function, in the units of its rows."""
        v = st.voltage[self.nonslack]
        names = [n for n, keep in zip(self.net.nodes, self.nonslack) if keep]
        vals = self.values(st)
        out = {}
        for i, name in enumerate(names):
            for ph in range(3):
                out[("vmin", f"{name}.{ph}")] = vals["vmin"][3 * i + ph]
                out[("vmax", f"{name}.{ph}")] = vals["vmax"][3 * i + ph]
            out[("vuf", name)] = vals["vuf"][i]
        cur = vals["cur"].reshape(-1, 3)
        for b, br in enumerate(self.net.branches):
            for ph in range(3):
                out[("cur", f"{br.from_node}-{br.to_node}.{ph}")] = cur[b, ph]
        return out

    def blocks(self, st, p, columns):
        """Linear rows ``G @ P <= b`` grouped in blocks that share one elastic slack."""
        inj = self.inj.with_der(self.der_matrix(p, columns))
        dv, di = injection_sensitivity(st, inj, columns)
        m = self.cfg.margin
        v = st.voltage[self.nonslack]
        dvn = dv[self.nonslack]
        names = [n for n, keep in zip(self.net.nodes, self.nonslack) if keep]
        out = []
        g_mag2 = 2.0 * np.real(np.conj(v)[:, :, None] * dvn)
        mag2 = np.abs(v) ** 2
        for i, name in enumerate(names):
            for ph in range(3):
                g = g_mag2[i, ph]
                out.append(("vmin", f"{name}.{ph}", -g[None, :],
                            np.array([mag2[i, ph] - self.u2[0] - g @ p])))
                out.append(("vmax", f"{name}.{ph}", g[None, :],
                            np.array([self.u2[1] - mag2[i, ph] + g @ p])))
        up, un = v @ _POS, v @ _NEG
        dup = np.einsum("p,npk->nk", _POS, dvn)
        dun = np.einsum("p,npk->nk", _NEG, dvn)
        for i, name in enumerate(names):
            # |U1| to first order; |U2 + dU2 dP| <= vuf |U1| by cuts
            g_up = np.real(np.conj(up[i]) * dup[i]) / abs(up[i])
            dirs = _CUT_ANGLES if abs(un[i]) < 1e-12 else np.concatenate(
                [[np.conj(un[i]) / abs(un[i])], _CUT_ANGLES])
            rows = np.real(dirs[:, None] * dun[i][None, :]) - self.vuf * g_up[None, :]
            rhs = (self.vuf * abs(up[i]) - m - np.real(dirs * un[i])) + rows @ p
            out.append(("vuf", name, rows, rhs))
        dib = np.einsum("bn,npk->bpk", self.net.subtree, di)
        ib = st.branch_current
        for b, br in enumerate(self.net.branches):
            for ph in range(3):
                if abs(ib[b, ph]) < CURRENT_GUARD:
                    continue   # gradient degenerates at zero current
                dirs = np.concatenate([[np.conj(ib[b, ph]) / abs(ib[b, ph])], _CUT_ANGLES])
                rows = np.real(dirs[:, None] * dib[b, ph][None, :])
                rhs = self.amp[b] * (1 - m) - np.real(dirs * ib[b, ph]) + rows @ p
                out.append(("cur", f"{br.from_node}-{br.to_node}.{ph}", rows, rhs))
        return out


def _merit(p, vals, mu, model):
    return float(np.sum(p)) - mu * model.violation(vals)


# ------------------------------------------------------------------ steps
def _corrected(blocks, exact, p_new):
    """Blocks with rhs lowered by the linearisation error observed at ``p_new``."""
    out = []
    for kind, entity, rows, rhs in blocks:
        err = exact[(kind, entity)] - float(np.max(rows @ p_new - rhs))
        out.append((kind, entity, rows, rhs - max(err, 0.0)))
    return out


def _build_step(blocks, p0, radius, groups, mu):
    """LP (or MILP) for one trust-region step.

    ``groups`` is None for fixed phases, otherwise a list of column-index
    triples, one per DER node, sharing a total-power trust region.
    """
    lp = LinearProgram(Sense.MAXIMIZE, name="slp_step")
    k = p0.size
    if groups is None:
        cols = [lp.add_variable(f"P{j}", max(0.0, p0[j] - radius), p0[j] + radius, obj=1.0)
                for j in range(k)]
        reach = np.full(k, radius)
    else:
        cols = [None] * k
        reach = np.zeros(k)
        for g in groups:
            tot = float(sum(p0[j] for j in g))
            for j in g:
                cols[j] = lp.add_variable(f"P{j}", 0.0, tot + radius, obj=1.0)
                reach[j] = tot + radius
    bins, sos = [], []
    if groups is not None:
        for g in groups:
            tot = float(sum(p0[j] for j in g))
            xs = []
            for j in g:
                xj = lp.add_variable(f"x{j}", 0.0, 1.0)
                lp.add_constraint({cols[j]: 1.0, xj: -(tot + radius)}, "<=", 0.0, kind="der_link")
                xs.append(xj)
            lp.add_constraint({x: 1.0 for x in xs}, "<=", 1.0, kind="der_group")
            lp.add_constraint({cols[j]: 1.0 for j in g}, "<=", tot + radius, kind="trust")
            if tot - radius > 0:
                lp.add_constraint({cols[j]: 1.0 for j in g}, ">=", tot - radius, kind="trust")
            bins.extend(xs)
            sos.append(tuple(xs))
    for kind, entity, rows, rhs in blocks:
        # skip blocks whose rows cannot become active anywhere in the region
        if np.max(rows @ p0 - rhs + np.abs(rows) @ reach) < 0.0:
            continue
        e = lp.add_variable(f"e[{kind},{entity}]", 0.0, math.inf, obj=-mu)
        for row, b in zip(rows, rhs):
            coefs = {cols[j]: row[j] for j in range(k) if row[j] != 0.0}
            coefs[e] = -1.0
            lp.add_constraint(coefs, "<=", float(b), kind=kind, name=f"{kind}[{entity}]")
    return lp, cols, bins, sos


def _step_norm(step, groups):
    """Trust-region measure of a step: per column, or per node total when phases are free."""
    norm = float(np.max(np.abs(step)))
    if groups is not None:
        norm = max(norm, max(abs(float(sum(step[j] for j in g))) for g in groups))
    return norm


def _step_program(blocks, p, radius, groups, mu, cfg):
    """Build and solve one step program; returns ``(LP solution, P column indices)``."""
    lp, cols, bins, sos = _build_step(blocks, p, radius, groups, mu)
    if bins:
        x0 = np.zeros(lp.n_vars)
        x0[cols] = p
        for g, xs in zip(groups, sos):
            if sum(p[j] for j in g) > 0:
                x0[xs[int(np.argmax([p[j] for j in g]))]] = 1.0
        sol = solve_milp(MilpProblem(lp, bins, sos), gap_tol=cfg.gap, incumbent=x0)
        return sol.incumbent, cols
    return solve_lp(lp), cols


def _scale_to_feasible(model, p, columns, cfg):
    """Largest feasible multiple of ``p``: bisection on [shrink, 1], then repeated shrinking."""
    def ok(scale):
        try:
            st = model.state(p * scale, columns)
        except Exception:
            return False, None
        return check_constraints(st).ok, st

    good, st = ok(1.0)
    if good:
        return 1.0, st
    lo = cfg.feasibility_shrink
    good_lo, st_lo = ok(lo)
    if good_lo:
        hi = 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            g, s = ok(mid)
            if g:
                lo, st_lo = mid, s
            else:
                hi = mid
        return lo, st_lo
    scale = lo
    for _ in range(400):
        scale *= cfg.feasibility_shrink
        g, s = ok(scale)
        if g:
            return scale, s
    g, s = ok(0.0)
    return 0.0, s


def _solve_period(network, snapshot, direction, der_nodes, phases, cfg, start, period):
    """SLP on one period; ``phases`` is a phase per DER node or None for free choice."""
    idx = network.node_index
    der_idx = [idx[n] for n in der_nodes]
    model = _Model(network, snapshot, direction, der_idx, cfg)
    if phases is None:
        columns = [(n, ph) for n in der_idx for ph in range(3)]
        groups = [tuple(range(3 * d, 3 * d + 3)) for d in range(len(der_idx))]
    else:
        columns = [(n, int(ph)) for n, ph in zip(der_idx, phases)]
        groups = None
    k = len(columns)
    p = np.zeros(k)
    if start is not None:
        p = np.maximum(np.asarray(start, dtype=float).reshape(k), 0.0)
    mu = cfg.penalty
    radius = cfg.trust_radius
    trace = []
    status = "Converged"
    if k == 0:
        st = model.state(p, columns)
        rep = check_constraints(st)
        trace.append(SlpStep(0, 0.0, 0.0, rep.worst_exceedance(), 0.0, radius, True, period))
        return p, columns, trace, status, 0
    st = model.state(p, columns)
    vals = model.values(st)
    phi = _merit(p, vals, mu, model)
    it = 0
    while True:
        if it >= cfg.max_iterations:
            status = "IterationLimit"
            break
        it += 1
        blocks = model.blocks(st, p, columns)
        lps, cols = _step_program(blocks, p, radius, groups, mu, cfg)
        if lps is None or not lps.ok:
            raise ModelError(f"trust-region step program is {getattr(lps, 'status', 'missing')}")
        p_new = np.maximum(lps.x[cols], 0.0)
        step = p_new - p
        pred = lps.objective - phi
        if pred <= 1e-10 or float(np.max(np.abs(step))) <= 1e-12:
            rep = check_constraints(st)
            trace.append(SlpStep(it, lps.objective, float(p.sum()), rep.worst_exceedance(),
                                 0.0, radius, False, period))
            break
        try:
            st_new = model.state(p_new, columns)
            vals_new = model.values(st_new)
            phi_new = _merit(p_new, vals_new, mu, model)
        except Exception:
            st_new, phi_new = None, -math.inf
        rho = (phi_new - phi) / pred
        if rho < 0.1 and st_new is not None:
            # second-order correction: shift the rows by the observed curvature error
            soc, soc_cols = _step_program(_corrected(blocks, model.block_values(st_new), p_new),
                                          p, radius, groups, mu, cfg)
            if soc is not None and soc.ok:
                p_soc = np.maximum(soc.x[soc_cols], 0.0)
                try:
                    st_soc = model.state(p_soc, columns)
                    vals_soc = model.values(st_soc)
                    phi_soc = _merit(p_soc, vals_soc, mu, model)
                    if (phi_soc - phi) / pred >= 0.1:
                        p_new, st_new, vals_new, phi_new = p_soc, st_soc, vals_soc, phi_soc
                        rho = (phi_new - phi) / pred
                        step = p_new - p
                except Exception:
                    pass
        accepted = rho >= 0.1
        step_norm = _step_norm(step, groups)
        rep = check_constraints(st_new) if st_new is not None else None
        trace.append(SlpStep(it, lps.objective, float(p_new.sum()),
                             rep.worst_exceedance() if rep else math.inf, step_norm, radius,
                             accepted, period))
        if not accepted:
            radius *= 0.5
            if radius < cfg.min_radius:
                if check_constraints(st).ok:
                    status = "Converged"
                    break
                raise NoProgress(f"trust radius fell below {cfg.min_radius:g} without a "
                                 "feasible point")
            continue
        dv = float(np.max(np.abs(st_new.voltage - st.voltage)))
        p, st, vals, phi = p_new, st_new, vals_new, phi_new
        if rho > 0.75 and step_norm >= 0.99 * radius:
            radius = min(2.0 * radius, cfg.max_radius)
        if dv < cfg.step_tolerance:
            break
    return p, columns, trace, status, it


def slp_solve(network, demand, direction, mode, cfg=None, start=None):
    """Maximise total DER power under the exact constraint set.

    :param mode: :class:`~gridcap.assignment.Fixed` or
        :class:`~gridcap.assignment.Binaries`.
    :param start: optional starting DER powers in kW, shape ``(T, D, 3)``.
    :returns: ``(SolveResult, SlpTrace)``
    """
    cfg = SlpConfig() if cfg is None else cfg
    direction = Direction(direction)
    demand.check_against(network)
    if network.slack in network.der_nodes:
        raise ModelError(f"DER node {network.slack} is the slack bus")
    if isinstance(mode, PhaseAssignment):
        mode = Fixed(mode)
    if isinstance(mode, Fixed) and mode.assignment.is_free:
        mode = Binaries()
    der_nodes = network.der_nodes
    horizon = demand.horizon
    if isinstance(mode, Fixed):
        asg = mode.assignment.restricted(der_nodes)
        if asg.horizon != horizon:
            raise ModelError(f"assignment covers {asg.horizon} periods, demand {horizon}")
    t0 = time.perf_counter()
    to_pu = 1e3 / network.base_power
    der_kw = np.zeros((horizon, len(der_nodes), 3))
    trace = SlpTrace()
    iterations = 0
    for t in range(horizon):
        snap = demand.period(t)
        phases = None if isinstance(mode, Binaries) else asg.phases[:, t]
        st_kw = None
        if start is not None:
            s = np.asarray(start, dtype=float)[t]
            st_kw = s.reshape(-1) if phases is None else s[np.arange(len(der_nodes)), phases]
            st_kw = st_kw * to_pu
        p, columns, steps, status, its = _solve_period(network, snap, direction, der_nodes,
                                                       phases, cfg, st_kw, t)
        iterations += its
        trace.steps.extend(steps)
        model = _Model(network, snap, direction, [network.node_index[n] for n in der_nodes], cfg)
        scale, _ = _scale_to_feasible(model, p, columns, cfg)
        if scale < 1.0:
            trace.steps.append(SlpStep(its + 1, math.nan, float(p.sum() * scale), 0.0,
                                       float(np.max(p) * (1 - scale)) if p.size else 0.0,
                                       math.nan, True, t))
        p = p * scale
        if status != "Converged":
            trace.status = status
        lookup = {n: d for d, n in enumerate(der_nodes)}
        node_names = network.nodes
        for (n, ph), v in zip(columns, p):
            der_kw[t, lookup[node_names[n]], ph] += v / to_pu
    res = SolveResult(Formulation.SLP, direction, der_nodes, der_kw, demand,
                      status=trace.status, gap=cfg.gap, elapsed=time.perf_counter() - t0,
                      iterations=iterations,
                      model_objective_kw=float(der_kw.sum()))
    return res, trace


def certify(network, result):
    """Exact power flow of every period of ``result``; worst-case constraint report."""
    demand = result.demand
    idx = network.node_index
    to_pu = 1e3 / network.base_power
    reports = []
    for t in range(result.horizon):
        inj = InjectionSet.from_demand(network, demand, t, direction=result.direction)
        der = np.zeros((len(network.nodes), 3))
        for d, n in enumerate(result.der_nodes):
            der[idx[n]] = result.der_kw[t, d] * to_pu
        st = run_power_flow(network, inj.with_der(der))
        rep = check_constraints(st)
        rep.period = t
        reports.append(rep)
    return worst_report(reports)


def exact_voltages(network, result):
    """Exact voltage magnitudes ``(T, N, 3)`` under the schedule of ``result``."""
    demand = result.demand
    idx = network.node_index
    to_pu = 1e3 / network.base_power
    out = np.zeros((result.horizon, len(network.nodes), 3))
    for t in range(result.horizon):
        inj = InjectionSet.from_demand(network, demand, t, direction=result.direction)
        der = np.zeros((len(network.nodes), 3))
        for d, n in enumerate(result.der_nodes):
            der[idx[n]] = result.der_kw[t, d] * to_pu
        out[t] = run_power_flow(network, inj.with_der(der)).magnitude
    return out


def shrink_to_feasible(network, result, cfg=None):
    """Copy of ``result`` with each period scaled to its largest physically feasible multiple.

    Uses the same search as the SLP exit (bisection on ``[shrink, 1]``, then
    repeated shrinking), so schedules from any formulation are comparable on
    certified value.
    """
    cfg = SlpConfig() if cfg is None else cfg
    idx = network.node_index
    der_idx = [idx[n] for n in result.der_nodes]
    columns = [(n, ph) for n in der_idx for ph in range(3)]
    to_pu = 1e3 / network.base_power
    der_kw = np.array(result.der_kw, dtype=float)
    for t in range(result.horizon):
        model = _Model(network, result.demand.period(t), result.direction, der_idx, cfg)
        scale, _ = _scale_to_feasible(model, der_kw[t].reshape(-1) * to_pu, columns, cfg)
        der_kw[t] *= scale
    return SolveResult(result.formulation, result.direction, result.der_nodes, der_kw,
                       result.demand, result.status, result.gap, result.elapsed,
                       result.iterations, result.phases, None, result.model_objective_kw,
                       list(result.flags) + ["shrunk"])
