"""Linearised three-phase branch flow (LinDist3Flow) hosting-capacity programs.

Squared voltage magnitudes ``W`` are the voltage variables; branch flows are
lossless and the drop across a branch is linear in its per-phase P and Q
through the matrices returned by :func:`build_sensitivity_matrices`.  Branch
current and voltage unbalance are not representable in this model and no
row refers to them.
"""
import math
import time
from dataclasses import dataclass

import numpy as np

from .assignment import Binaries, Fixed, PhaseAssignment
from .errors import ExtractionError, ModelError
from .lp_core import LinearProgram, MilpProblem, MilpSolution, Sense
from .netmodel import PHASES, Direction
from .results import Formulation, SolveResult

# phase rotation a = 1, b = 1/-120deg, c = 1/120deg
_ROT = np.exp(1j * np.deg2rad([0.0, -120.0, 120.0]))
_GAMMA = np.outer(_ROT, np.conj(_ROT))

BIG_M_FACTOR = 10.0


def build_sensitivity_matrices(branch):
    """Return ``(M_P, M_Q)`` with ``W_j = W_i - M_P @ P_ij - M_Q @ Q_ij``.

    Assumes nearly balanced voltage angles, so that the ratio of phase
    voltages ``V_p / V_q`` is the fixed rotation ``gamma_pq``.  Off-diagonal
    entries become ``-R + sqrt(3) X`` and ``-X - sqrt(3) R`` for a leading
    pair of phases and the mirrored signs for a lagging pair.
    """
    z = np.asarray(branch.r, dtype=float) + 1j * np.asarray(branch.x, dtype=float)
    zg = np.conj(z) * _GAMMA
    return 2.0 * zg.real, -2.0 * zg.imag


@dataclass
class LinFormulation:
    """A built LinDist3Flow program plus the index maps needed to read it.

    Index arrays hold LP column numbers: ``w`` is ``(T, N, 3)``, ``p`` and
    ``q`` are ``(T, B, 3)``, ``der`` and ``x`` (S1 only) are ``(T, D, 3)``.
    """
    network: object
    demand: object
    direction: Direction
    mode: object
    lp: LinearProgram
    milp: MilpProblem
    w: np.ndarray
    p: np.ndarray
    q: np.ndarray
    der: np.ndarray
    x: np.ndarray
    big_m: float
    crash_basis: list

    @property
    def horizon(self):
        return self.w.shape[0]

    @property
    def problem(self):
        return self.milp if self.milp is not None else self.lp


def default_big_m(network):
    slack_amp = sum(br.ampacity for br in network.branches if br.from_node == network.slack)
    return BIG_M_FACTOR * slack_amp


def build_lin_problem(network, demand, direction, mode, big_m=None, slack_w=1.0,
                      strengthen=True):
    """Build the LinDist3Flow program for every period of ``demand``.

    :param mode: :class:`~gridcap.assignment.Binaries` (phase chosen by
        binaries) or :class:`~gridcap.assignment.Fixed` with an assignment
        covering the DER nodes and the demand horizon.
    :param big_m: per-unit power bound used in the binary linking rows.
    :param slack_w: squared slack voltage magnitude.
    :param strengthen: with binaries, add one valid row per DER node and
        period that caps the relaxation's multi-phase split (see
        :func:`add_phase_hull_rows`).
    """
    direction = Direction(direction)
    demand.check_against(network)
    if network.slack in network.der_nodes:
        raise ModelError(f"DER node {network.slack} is the slack bus")
    if isinstance(mode, PhaseAssignment):
        mode = Fixed(mode)
    if not isinstance(mode, (Binaries, Fixed)):
        raise ModelError(f"unsupported phase mode {mode!r}")
    horizon = demand.horizon
    der_nodes = network.der_nodes
    if isinstance(mode, Fixed):
        asg = mode.assignment
        if asg.is_free:
            mode = Binaries()
        else:
            missing = [n for n in der_nodes if n not in asg.nodes]
            if missing:
                raise ModelError(f"assignment has no phase for DER node {missing[0]}")
            if asg.horizon != horizon:
                raise ModelError(f"assignment covers {asg.horizon} periods, demand {horizon}")
            asg = asg.restricted(der_nodes)
    binaries = isinstance(mode, Binaries)
    big_m = default_big_m(network) if big_m is None else float(big_m)
    lim = network.limits
    w_lo, w_hi = lim.u_min ** 2, lim.u_max ** 2
    nn, nb, nd = len(network.nodes), len(network.branches), len(der_nodes)
    idx = network.node_index
    slack = idx[network.slack]
    feed = network.feeding_branch
    children = [[] for _ in range(nn)]
    for k, br in enumerate(network.branches):
        children[idx[br.from_node]].append(k)
    mats = [build_sensitivity_matrices(br) for br in network.branches]
    sign = direction.der_sign
    der_at = {idx[n]: d for d, n in enumerate(der_nodes)}

    lp = LinearProgram(Sense.MAXIMIZE, name="lindist3flow")
    w = np.zeros((horizon, nn, 3), dtype=int)
    pf = np.zeros((horizon, nb, 3), dtype=int)
    qf = np.zeros((horizon, nb, 3), dtype=int)
    der = np.zeros((horizon, nd, 3), dtype=int)
    xb = np.full((horizon, nd, 3), -1, dtype=int)
    bins, groups = [], []
    basic_of_row = []
    for t in range(horizon):
        net = demand.net_demand(network, t)
        for n, name in enumerate(network.nodes):
            for p in PHASES:
                lo, hi = (0.0, math.inf) if n == slack else (w_lo, w_hi)
                w[t, n, p] = lp.add_variable(f"W[{name},{p.name},{t}]", lo, hi)
        for k, br in enumerate(network.branches):
            tag = f"{br.from_node}-{br.to_node}"
            for p in PHASES:
                pf[t, k, p] = lp.add_variable(f"P[{tag},{p.name},{t}]", -math.inf, math.inf)
                qf[t, k, p] = lp.add_variable(f"Q[{tag},{p.name},{t}]", -math.inf, math.inf)
        for d, name in enumerate(der_nodes):
            for p in PHASES:
                der[t, d, p] = lp.add_variable(f"Pder[{name},{p.name},{t}]", 0.0, math.inf, obj=1.0)
                if binaries:
                    xb[t, d, p] = lp.add_variable(f"x[{name},{p.name},{t}]", 0.0, 1.0)
                    bins.append(int(xb[t, d, p]))
        # slack reference
        for p in PHASES:
            lp.add_constraint({w[t, slack, p]: 1.0}, "=", slack_w, kind="slack_voltage",
                              name=f"slack[{p.name},{t}]")
            basic_of_row.append(int(w[t, slack, p]))
        # nodal balance: inflow - outflows -/+ DER = net demand
        for n, name in enumerate(network.nodes):
            if n == slack:
                continue
            kin = feed[n]
            for p in PHASES:
                for kind, flows, value in (("balance_p", pf, net[n, p].real),
                                           ("balance_q", qf, net[n, p].imag)):
                    row = {flows[t, kin, p]: 1.0}
                    for kc in children[n]:
                        row[flows[t, kc, p]] = -1.0
                    if kind == "balance_p" and n in der_at:
                        row[der[t, der_at[n], p]] = -sign
                    lp.add_constraint(row, "=", value, kind=kind, name=f"{kind}[{name},{p.name},{t}]")
                    basic_of_row.append(int(flows[t, kin, p]))
        # voltage drop along each branch
        for k, br in enumerate(network.branches):
            i, j = idx[br.from_node], idx[br.to_node]
            mp, mq = mats[k]
            for p in PHASES:
                row = {w[t, j, p]: 1.0, w[t, i, p]: -1.0}
                for q in PHASES:
                    if mp[p, q] != 0.0:
                        row[pf[t, k, q]] = mp[p, q]
                    if mq[p, q] != 0.0:
                        row[qf[t, k, q]] = mq[p, q]
                lp.add_constraint(row, "=", 0.0, kind="voltage_drop",
                                  name=f"drop[{br.from_node}-{br.to_node},{p.name},{t}]")
                basic_of_row.append(int(w[t, j, p]))
        # phase selection
        for d, name in enumerate(der_nodes):
            if binaries:
                for p in PHASES:
                    lp.add_constraint({der[t, d, p]: 1.0, xb[t, d, p]: -big_m}, "<=", 0.0,
                                      kind="der_link", name=f"link[{name},{p.name},{t}]")
                    basic_of_row.append(None)
                lp.add_constraint({xb[t, d, p]: 1.0 for p in PHASES}, "<=", 1.0,
                                  kind="der_group", name=f"group[{name},{t}]")
                basic_of_row.append(None)
                groups.append(tuple(int(xb[t, d, p]) for p in PHASES))
            else:
                chosen = int(asg.phases[d, t])
                for p in PHASES:
                    if p != chosen:
                        lp.add_constraint({der[t, d, p]: 1.0}, "=", 0.0, kind="der_off",
                                          name=f"off[{name},{p.name},{t}]")
                        basic_of_row.append(None)
    n = lp.n_vars
    crash = [c if c is not None else n + r for r, c in enumerate(basic_of_row)]
    milp = MilpProblem(lp, bins, groups) if binaries else None
    f = LinFormulation(network, demand, direction, mode, lp, milp, w, pf, qf, der,
                       xb if binaries else None, big_m, crash)
    if binaries and strengthen:
        add_phase_hull_rows(f)
    return f


def add_phase_hull_rows(f, tol=1e-9):
    """Add ``sum_p P[d,p] / U[d,p] <= 1`` for every DER node and period.

    ``U[d,p]`` is the largest injection on phase ``p`` the LP relaxation
    allows.  Any point with one active phase per node satisfies the row, so
    the integer feasible set is unchanged, but the relaxation can no longer
    spread a node's injection over three phases at three times the
    single-phase limit.  Phases with no room are left out of the row.
    Returns the bound array, or ``None`` when the relaxation has no finite
    bound to offer (the rows are then not added).
    """
    from .lp_core import solve_lp

    lp = f.lp
    probe = lp.copy()
    base = solve_lp(probe, basis=f.crash_basis)
    if not base.ok:
        return None
    bound = np.zeros(f.der.shape)
    for idx in np.ndindex(f.der.shape):
        probe.objective = {}
        probe.set_objective(int(f.der[idx]), 1.0)
        sol = solve_lp(probe, basis=base.basis)
        if not sol.ok:
            return None
        bound[idx] = sol.objective
    n = lp.n_vars
    for t in range(f.der.shape[0]):
        for d, name in enumerate(f.network.der_nodes):
            row = {int(f.der[t, d, p]): 1.0 / bound[t, d, p] for p in PHASES
                   if bound[t, d, p] > tol}
            if row:
                r = lp.add_constraint(row, "<=", 1.0, kind="der_hull", name=f"hull[{name},{t}]")
                f.crash_basis.append(n + r)
    return bound


def solve_formulation(f, gap=0.0, node_limit=100_000, incumbent=None, method="simplex"):
    """Solve the program held by ``f`` (LP or MILP) with the embedded solver."""
    from .lp_core import solve_lp, solve_milp

    if f.milp is not None:
        return solve_milp(f.milp, gap_tol=gap, node_limit=node_limit, incumbent=incumbent,
                          method=method, basis=f.crash_basis if method == "simplex" else None)
    return solve_lp(f.lp, basis=f.crash_basis if method == "simplex" else None, method=method)


def extract_solution(f, sol, elapsed=None):
    """Turn a solver answer into a :class:`SolveResult` (kW schedule, voltages, phases)."""
    net = f.network
    if isinstance(sol, MilpSolution):
        if not sol.ok:
            raise ExtractionError(f"cannot extract from a {sol.status.value} MILP result")
        lps, gap, status = sol.incumbent, sol.gap, sol.status.value
        iterations = sol.nodes_explored
    else:
        if not sol.ok:
            raise ExtractionError(f"cannot extract from a {sol.status.value} LP result")
        lps, gap, status, iterations = sol, 0.0, sol.status.value, sol.iterations
    x = lps.x
    to_kw = net.base_power / 1e3
    der_kw = np.maximum(x[f.der], 0.0) * to_kw
    w = np.maximum(x[f.w], 0.0)
    phases = np.full(der_kw.shape[:2], -1, dtype=int)
    if f.x is not None and f.x.size:
        xv = x[f.x]
        frac = np.abs(xv - np.round(xv))
        if frac.size and frac.max() > 1e-6:
            raise ExtractionError(f"binary is fractional by {frac.max():.2e}")
        on = np.round(xv) > 0.5
        phases = np.where(on.any(axis=2), np.argmax(on, axis=2), -1)
    elif isinstance(f.mode, Fixed):
        asg = f.mode.assignment.restricted(net.der_nodes)
        phases = asg.phases.T.copy() if asg.phases.size else phases
    flags = []
    if f.x is not None and f.x.size:
        near = (np.round(x[f.x]) > 0.5) & (x[f.der] >= f.big_m - 1e-6)
        if near.any():
            flags.append("big_m_binding")
    res = SolveResult(Formulation.LINDIST, f.direction, net.der_nodes, der_kw, f.demand,
                      status=status, gap=gap,
                      elapsed=lps.elapsed if elapsed is None else elapsed,
                      iterations=iterations, phases=phases, voltage_pred=np.sqrt(w),
                      model_objective_kw=float(der_kw.sum()), flags=flags)
    return res


def lindist_solve(network, demand, direction, mode, gap=0.0, method="simplex"):
    """Build, solve and extract in one call; returns ``(SolveResult or None, raw solution)``."""
    start = time.perf_counter()
    f = build_lin_problem(network, demand, direction, mode)
    sol = solve_formulation(f, gap=gap, method=method)
    if not sol.ok:
        return None, sol
    return extract_solution(f, sol, elapsed=time.perf_counter() - start), sol


def predict_voltages(network, demand, der_kw, direction, slack_w=1.0):
    """LinDist3Flow voltage magnitudes ``(T, N, 3)`` for a given DER schedule.

    Evaluates the linear model directly: lossless branch flows are subtree
    sums of the net demand and squared magnitudes drop along each path.

    :param der_kw: DER powers in kW, shape ``(T, len(network.der_nodes), 3)``.
    """
    direction = Direction(direction)
    der_kw = np.asarray(der_kw, dtype=float)
    idx = network.node_index
    der_rows = [idx[n] for n in network.der_nodes]
    mats = [build_sensitivity_matrices(br) for br in network.branches]
    sub = np.asarray(network.subtree, dtype=float)    # (B, N), 1 where node is below branch
    out = np.zeros((demand.horizon, len(network.nodes), 3))
    for t in range(demand.horizon):
        s = demand.net_demand(network, t)
        if der_rows:
            np.add.at(s, der_rows, direction.der_sign * der_kw[t] * 1e3 / network.base_power)
        flow = sub @ s
        drop = np.array([mp @ f.real + mq @ f.imag for (mp, mq), f in zip(mats, flow)])
        w = slack_w - sub.T @ drop if len(drop) else np.full((len(network.nodes), 3), slack_w)
        out[t] = np.sqrt(np.maximum(w, 0.0))
    return out
