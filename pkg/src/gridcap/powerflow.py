"""Exact unbalanced power flow on radial feeders and constraint evaluation.

The backward/forward sweep is written in matrix form: branch currents are the
subtree sums of the nodal injection currents and node voltages are the slack
voltage minus the accumulated 3x3 coupled drops along the path.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import CollapseDetected, DegeneratePositiveSequence, NonConvergence
from .netmodel import PHASES, Direction

ALPHA = np.exp(2j * np.pi / 3)
_SEQ = np.array([[1, 1, 1], [1, ALPHA, ALPHA ** 2], [1, ALPHA ** 2, ALPHA]]) / 3.0
_SEQ_INV = np.array([[1, 1, 1], [1, ALPHA ** 2, ALPHA], [1, ALPHA, ALPHA ** 2]])

COLLAPSE_LEVEL = 0.5


def balanced_reference(magnitude=1.0):
    return magnitude * np.exp(1j * np.deg2rad([p.angle_deg for p in PHASES]))


def sequence_components(u_abc):
    """Zero, positive and negative sequence of phase phasors (last axis = phase)."""
    return np.asarray(u_abc) @ _SEQ.T


def phase_components(u_012):
    return np.asarray(u_012) @ _SEQ_INV.T


@dataclass(frozen=True, eq=False)
class InjectionSet:
    """Nodal injections on the network node order.

    ``load`` and ``gen`` are complex per-unit powers of shape ``(N, 3)``;
    ``der`` is the real DER active power.  DER reactive power is always zero.
    ``direction`` fixes the sign of the DER term in the current balance.
    """

    load: np.ndarray
    gen: np.ndarray
    der: np.ndarray
    direction: Direction = Direction.EXPORT

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))

    @classmethod
    def from_demand(cls, network, demand, t=0, der=None, direction=Direction.EXPORT):
        n = len(network.nodes)
        load = np.zeros((n, 3), dtype=complex)
        gen = np.zeros((n, 3), dtype=complex)
        if demand is not None:
            idx = [network.node_index[k] for k in demand.nodes]
            load[idx] = demand.p[:, :, t] + 1j * demand.q[:, :, t]
            gen[idx] = demand.gen_p[:, :, t] + 1j * demand.gen_q[:, :, t]
        der_arr = np.zeros((n, 3)) if der is None else np.asarray(der, dtype=float).reshape(n, 3)
        load[network.node_index[network.slack]] = 0.0
        gen[network.node_index[network.slack]] = 0.0
        return cls(load, gen, der_arr, Direction(direction))

    @property
    def der_q(self):
        return np.zeros_like(self.der)

    def net(self):
        """Net complex demand: load - gen +/- der."""
        return self.load - self.gen + self.direction.der_sign * self.der

    def with_der(self, der):
        return InjectionSet(self.load, self.gen, np.asarray(der, dtype=float), self.direction)


@dataclass(frozen=True, eq=False)
class PowerFlowState:
    network: object
    voltage: np.ndarray         # (N, 3) complex
    branch_current: np.ndarray  # (B, 3) complex, from -> to
    injection_current: np.ndarray  # (N, 3) complex net demand current
    residual: float
    iterations: int
    converged: bool = True
    history: list = field(default_factory=list)

    @property
    def branch_p(self):
        v_from = self.voltage[[self.network.node_index[b.from_node] for b in self.network.branches]]
        return v_from.real * self.branch_current.real + v_from.imag * self.branch_current.imag

    @property
    def branch_q(self):
        v_from = self.voltage[[self.network.node_index[b.from_node] for b in self.network.branches]]
        return v_from.imag * self.branch_current.real - v_from.real * self.branch_current.imag

    @property
    def magnitude(self):
        return np.abs(self.voltage)

    def kcl_mismatch(self):
        """Largest nodal current mismatch of the stored solution."""
        net = self.network
        mism = np.zeros_like(self.voltage)
        for k, br in enumerate(net.branches):
            mism[net.node_index[br.to_node]] -= self.branch_current[k]
            mism[net.node_index[br.from_node]] += self.branch_current[k]
        mism += self.injection_current
        mism[net.node_index[net.slack]] = 0.0
        return float(np.abs(mism).max()) if mism.size else 0.0


def _injection_currents(s_net, v):
    return np.conj(s_net / v)


def run_power_flow(network, inj, v_slack=None, tol_v=1e-10, tol_kcl=1e-8, max_iter=200):
    """Constant-PQ backward/forward sweep.

    :param network: radial :class:`NetworkModel`
    :param inj: :class:`InjectionSet` on the network node order
    :param v_slack: slack phasors, default balanced 1.0 p.u.
    :raises NonConvergence: iteration cap reached
    :raises CollapseDetected: a voltage magnitude fell below 0.5 p.u.
    """
    v_ref = balanced_reference() if v_slack is None else np.asarray(v_slack, dtype=complex)
    T = network.subtree
    z = network.z_stack
    s_net = inj.net()
    slack = network.node_index[network.slack]
    s_net[slack] = 0.0
    v = np.tile(v_ref, (len(network.nodes), 1))
    history = []
    for it in range(1, max_iter + 1):
        i_inj = _injection_currents(s_net, v)
        i_br = T @ i_inj
        drops = np.einsum("bpq,bq->bp", z, i_br)
        v_new = v_ref[None, :] - T.T @ drops
        dv = float(np.abs(v_new - v).max())
        v = v_new
        mag = np.abs(v)
        if mag.min() < COLLAPSE_LEVEL:
            n, p = np.unravel_index(np.argmin(mag), mag.shape)
            raise CollapseDetected(f"voltage collapse at node {network.nodes[n]} phase "
                                   f"{PHASES[p].name} (|U| = {mag[n, p]:.3f} p.u.)",
                                   node=network.nodes[n], magnitude=float(mag[n, p]))
        i_inj_new = _injection_currents(s_net, v)
        residual = float(np.abs(T @ i_inj_new - i_br).max()) if i_br.size else 0.0
        history.append(residual)
        if dv < tol_v and residual < tol_kcl:
            return PowerFlowState(network, v, i_br, i_inj_new, residual, it, True, history)
    raise NonConvergence(f"sweep did not converge in {max_iter} iterations "
                         f"(last residual {history[-1]:.3e})", history=history)


def compute_vuf(state_or_voltage, node=None):
    """Negative over positive sequence magnitude.

    Accepts a :class:`PowerFlowState` plus node id, or a phasor triple.
    """
    if isinstance(state_or_voltage, PowerFlowState):
        u = state_or_voltage.voltage[state_or_voltage.network.node_index[str(node)]]
    else:
        u = np.asarray(state_or_voltage, dtype=complex)
    _, pos, neg = sequence_components(u)
    if abs(pos) < 1e-6:
        raise DegeneratePositiveSequence(f"positive sequence |U1| = {abs(pos):.2e} p.u.")
    return float(abs(neg) / abs(pos))


def vuf_all(voltage):
    seq = sequence_components(voltage)
    return np.abs(seq[:, 2]) / np.abs(seq[:, 1])


@dataclass
class Violation:
    kind: str       # voltage_min | voltage_max | vuf | current
    entity: str
    value: float
    limit: float

    @property
    def exceedance(self):
        return abs(self.value - self.limit)

    def to_dict(self):
        return {"kind": self.kind, "entity": self.entity, "value": self.value,
                "limit": self.limit, "exceedance": self.exceedance}


@dataclass
class ConstraintReport:
    min_voltage: tuple   # (node, phase, value)
    max_voltage: tuple
    max_vuf: tuple       # (node, value)
    max_loading: tuple   # (branch, phase, fraction of ampacity)
    violations: list
    binding: list = field(default_factory=list)
    period: int = 0

    @property
    def ok(self):
        return not self.violations

    def worst_exceedance(self, kind=None):
        vals = [v.exceedance for v in self.violations if kind is None or v.kind == kind]
        return max(vals, default=0.0)

    def to_dict(self):
        return {
            "period": self.period,
            "min_voltage": {"node": self.min_voltage[0], "phase": self.min_voltage[1],
                            "value": self.min_voltage[2]},
            "max_voltage": {"node": self.max_voltage[0], "phase": self.max_voltage[1],
                            "value": self.max_voltage[2]},
            "max_vuf": {"node": self.max_vuf[0], "value": self.max_vuf[1]},
            "max_loading": {"branch": self.max_loading[0], "phase": self.max_loading[1],
                            "value": self.max_loading[2]},
            "violations": [v.to_dict() for v in self.violations],
            "binding": list(self.binding),
        }


def _branch_name(br):
    return f"{br.from_node}-{br.to_node}"


def check_constraints(state, network=None, binding_tol=1e-4):
    """Voltage band, VUF and ampacity check on a solved state.

    Violations are strict exceedances of the limits; ``binding`` lists every
    quantity within ``binding_tol`` of its limit.
    """
    network = state.network if network is None else network
    lim = network.limits
    mag = np.abs(state.voltage)
    vuf = vuf_all(state.voltage)
    amp = np.array([br.ampacity for br in network.branches])
    loading = np.abs(state.branch_current) / amp[:, None] if len(amp) else np.zeros((0, 3))
    names = network.nodes
    violations, binding = [], []
    for n in range(len(names)):
        for p in PHASES:
            val = float(mag[n, p])
            ent = f"{names[n]}.{p.name}"
            if val < lim.u_min:
                violations.append(Violation("voltage_min", ent, val, lim.u_min))
            if val > lim.u_max:
                violations.append(Violation("voltage_max", ent, val, lim.u_max))
            if abs(val - lim.u_min) <= binding_tol:
                binding.append(("voltage_min", ent))
            if abs(val - lim.u_max) <= binding_tol:
                binding.append(("voltage_max", ent))
        if vuf[n] > lim.vuf_max:
            violations.append(Violation("vuf", names[n], float(vuf[n]), lim.vuf_max))
        if abs(vuf[n] - lim.vuf_max) <= binding_tol:
            binding.append(("vuf", names[n]))
    for k, br in enumerate(network.branches):
        for p in PHASES:
            ent = f"{_branch_name(br)}.{p.name}"
            cur = float(abs(state.branch_current[k, p]))
            if cur > br.ampacity:
                violations.append(Violation("current", ent, cur, br.ampacity))
            if abs(cur - br.ampacity) / br.ampacity <= binding_tol:
                binding.append(("current", ent))
    n_lo, p_lo = np.unravel_index(np.argmin(mag), mag.shape)
    n_hi, p_hi = np.unravel_index(np.argmax(mag), mag.shape)
    n_vuf = int(np.argmax(vuf))
    if loading.size:
        b_ld, p_ld = np.unravel_index(np.argmax(loading), loading.shape)
        max_loading = (_branch_name(network.branches[b_ld]), PHASES[p_ld].name, float(loading[b_ld, p_ld]))
    else:
        max_loading = ("", "", 0.0)
    return ConstraintReport(
        min_voltage=(names[n_lo], PHASES[p_lo].name, float(mag[n_lo, p_lo])),
        max_voltage=(names[n_hi], PHASES[p_hi].name, float(mag[n_hi, p_hi])),
        max_vuf=(names[n_vuf], float(vuf[n_vuf])),
        max_loading=max_loading,
        violations=violations,
        binding=binding,
    )


def worst_report(reports):
    """Merge per-period reports into the worst case across periods."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to merge")
    lo = min(reports, key=lambda r: r.min_voltage[2])
    hi = max(reports, key=lambda r: r.max_voltage[2])
    vu = max(reports, key=lambda r: r.max_vuf[1])
    ld = max(reports, key=lambda r: r.max_loading[2])
    violations, binding = [], []
    for r in reports:
        violations.extend(r.violations)
        binding.extend(b for b in r.binding if b not in binding)
    return ConstraintReport(lo.min_voltage, hi.max_voltage, vu.max_vuf, ld.max_loading,
                            violations, binding, period=lo.period)


def injection_sensitivity(state, inj, columns):
    """Derivatives of node voltages and injection currents w.r.t. DER active power.

    Linearises ``V = V_slack - Zbus * conj(S / V)`` at the solved state.  Each
    column is a ``(node_index, phase)`` pair; a unit increase of DER power
    there changes the net demand by ``direction.der_sign``.

    :returns: ``(dV, dI)`` complex arrays of shape ``(N, 3, ncol)``
    """
    net = state.network
    n = len(net.nodes)
    v = state.voltage.reshape(-1)
    s = inj.net().reshape(-1).copy()
    s[net.node_index[net.slack] * 3: net.node_index[net.slack] * 3 + 3] = 0.0
    zb = net.zbus.reshape(3 * n, 3 * n)
    d = np.conj(s) / np.conj(v) ** 2
    k = zb * d[None, :]
    ncol = len(columns)
    ds_conj = np.zeros((3 * n, ncol), dtype=complex)
    for c, (node, phase) in enumerate(columns):
        ds_conj[node * 3 + int(phase), c] = inj.direction.der_sign
    di_direct = ds_conj / np.conj(v)[:, None]
    rhs = -(zb @ di_direct)
    eye = np.eye(3 * n)
    lhs = np.block([[eye - k.real, -k.imag], [-k.imag, eye + k.real]])
    sol = np.linalg.solve(lhs, np.vstack([rhs.real, rhs.imag]))
    dv = sol[:3 * n] + 1j * sol[3 * n:]
    di = di_direct - d[:, None] * np.conj(dv)
    return dv.reshape(n, 3, ncol), di.reshape(n, 3, ncol)
