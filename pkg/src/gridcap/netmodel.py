"""Three-phase radial feeder and demand data model.

All electrical quantities are stored per unit on a per-phase base:
``base_voltage`` is the phase-to-neutral voltage and ``base_power`` the
single-phase apparent power, so ``S = V * conj(I)`` holds in per unit.
"""
import csv
import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ._curves import RESIDENTIAL_DAY
from .errors import ParseError, ValidationError


class Phase(enum.IntEnum):
    A = 0
    B = 1
    C = 2

    @property
    def angle_deg(self):
        return (0.0, -120.0, 120.0)[self.value]

    @classmethod
    def parse(cls, value):
        if isinstance(value, Phase):
            return value
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ParseError(f"unknown phase {value!r}") from None


PHASES = (Phase.A, Phase.B, Phase.C)


class Direction(str, enum.Enum):
    EXPORT = "export"
    IMPORT = "import"

    @property
    def der_sign(self):
        """Sign of DER power in the net demand (load - gen +/- der)."""
        return -1.0 if self is Direction.EXPORT else 1.0


def sequence_to_phase(z1, z0):
    """3x3 phase impedance of a transposed line from its sequence impedances."""
    zs = (z0 + 2.0 * z1) / 3.0
    zm = (z0 - z1) / 3.0
    return np.full((3, 3), zm) + np.eye(3) * (zs - zm)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OperatingLimits:
    u_min: float = 0.9
    u_max: float = 1.1
    vuf_max: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.u_min < 1.0 < self.u_max:
            raise ValidationError(f"voltage limits must satisfy 0 < u_min < 1 < u_max, got "
                                  f"{self.u_min}, {self.u_max}", entity="limits")
        if not 0.0 < self.vuf_max < 1.0:
            raise ValidationError(f"vuf_max must lie in (0, 1), got {self.vuf_max}", entity="limits")

    def to_dict(self):
        return {"u_min": self.u_min, "u_max": self.u_max, "vuf_max": self.vuf_max}


@dataclass(frozen=True, eq=False)
class Branch:
    """A three-phase line section.  ``r``/``x``/``ampacity`` are per unit.

    The raw file data (ohm/km matrices, length, amperes) is kept so a model
    can be written back to disk byte-for-byte.
    """

    from_node: str
    to_node: str
    r: np.ndarray
    x: np.ndarray
    ampacity: float
    r_ohm_per_km: np.ndarray = None
    x_ohm_per_km: np.ndarray = None
    length_km: float = 1.0
    ampacity_a: float = None

    @property
    def z(self):
        return self.r + 1j * self.x

    def reversed(self):
        return Branch(self.to_node, self.from_node, self.r, self.x, self.ampacity,
                      self.r_ohm_per_km, self.x_ohm_per_km, self.length_km, self.ampacity_a)


def make_branch(from_node, to_node, r_ohm_per_km, x_ohm_per_km, length_km, ampacity_a,
                v_ll_volts, s_base_va):
    """Build a per-unit branch from ohm/km matrices, a length and an ampacity in amperes."""
    v_base = v_ll_volts / math.sqrt(3.0)
    z_base = v_base ** 2 / s_base_va
    i_base = s_base_va / v_base
    r_km = _frozen(r_ohm_per_km)
    x_km = _frozen(x_ohm_per_km)
    if r_km.shape != (3, 3) or x_km.shape != (3, 3):
        raise ValidationError(f"branch {from_node}->{to_node}: impedance matrices must be 3x3",
                              entity=(from_node, to_node))
    return Branch(
        from_node=str(from_node),
        to_node=str(to_node),
        r=_frozen(r_km * length_km / z_base),
        x=_frozen(x_km * length_km / z_base),
        ampacity=float(ampacity_a) / i_base,
        r_ohm_per_km=r_km,
        x_ohm_per_km=x_km,
        length_km=float(length_km),
        ampacity_a=float(ampacity_a),
    )


@dataclass(frozen=True, eq=False)
class NetworkModel:
    nodes: tuple
    branches: tuple
    slack: str
    v_ll_volts: float = 400.0
    base_power: float = 1e6
    limits: OperatingLimits = field(default_factory=OperatingLimits)
    der_nodes: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(str(n) for n in self.nodes))
        object.__setattr__(self, "slack", str(self.slack))
        object.__setattr__(self, "der_nodes", tuple(str(n) for n in self.der_nodes))
        object.__setattr__(self, "branches", tuple(self.branches))
        self._validate()
        # orient every branch away from the slack
        oriented = []
        depth = self._bfs_depth()
        for br in self.branches:
            oriented.append(br if depth[br.from_node] < depth[br.to_node] else br.reversed())
        object.__setattr__(self, "branches", tuple(oriented))

    @property
    def base_voltage(self):
        return self.v_ll_volts / math.sqrt(3.0)

    @property
    def base_current(self):
        return self.base_power / self.base_voltage

    def _validate(self):
        nodes = set(self.nodes)
        if len(nodes) != len(self.nodes):
            raise ValidationError("duplicate node ids", entity="nodes")
        if self.slack not in nodes:
            raise ValidationError(f"slack node {self.slack} is not a network node", entity=self.slack)
        for br in self.branches:
            if br.from_node == br.to_node:
                raise ValidationError(f"branch {br.from_node}->{br.to_node} is a self-loop at node "
                                      f"{br.from_node}", entity=br.from_node)
            for end in (br.from_node, br.to_node):
                if end not in nodes:
                    raise ValidationError(f"branch references unknown node {end}", entity=end)
            for label, m in (("R", br.r), ("X", br.x)):
                if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
                    raise ValidationError(f"branch {br.from_node}->{br.to_node}: {label} matrix is "
                                          f"not symmetric", entity=(br.from_node, br.to_node))
                off = np.abs(m - np.diag(np.diag(m)))
                if np.any(np.diag(m) < off.max(axis=1) - 1e-15):
                    raise ValidationError(f"branch {br.from_node}->{br.to_node}: {label} diagonal "
                                          f"smaller than a mutual term", entity=(br.from_node, br.to_node))
            if not br.ampacity > 0.0:
                raise ValidationError(f"branch {br.from_node}->{br.to_node}: ampacity must be positive",
                                      entity=(br.from_node, br.to_node))
        # cycle detection before the size check so the message names the culprit
        parent = {n: n for n in self.nodes}

        def find(n):
            while parent[n] != n:
                parent[n] = parent[parent[n]]
                n = parent[n]
            return n

        for br in self.branches:
            a, b = find(br.from_node), find(br.to_node)
            if a == b:
                raise ValidationError(f"branch {br.from_node}->{br.to_node} closes a cycle at node "
                                      f"{br.to_node}", entity=br.to_node)
            parent[a] = b
        roots = {find(n) for n in self.nodes}
        if len(roots) > 1:
            root_slack = find(self.slack)
            lonely = next(n for n in self.nodes if find(n) != root_slack)
            raise ValidationError(f"node {lonely} is disconnected from the slack", entity=lonely)
        bad = [n for n in self.der_nodes if n not in nodes or n == self.slack]
        if bad:
            raise ValidationError(f"DER node {bad[0]} must be a non-slack network node", entity=bad[0])

    def _bfs_depth(self):
        adj = {n: [] for n in self.nodes}
        for br in self.branches:
            adj[br.from_node].append(br.to_node)
            adj[br.to_node].append(br.from_node)
        depth = {self.slack: 0}
        queue = deque([self.slack])
        while queue:
            n = queue.popleft()
            for m in adj[n]:
                if m not in depth:
                    depth[m] = depth[n] + 1
                    queue.append(m)
        return depth

    # topology helpers -------------------------------------------------

    @cached_property
    def node_index(self):
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def branch_index(self):
        return {(br.from_node, br.to_node): k for k, br in enumerate(self.branches)}

    @cached_property
    def feeding_branch(self):
        """Index of the branch entering each node (-1 for the slack)."""
        out = np.full(len(self.nodes), -1, dtype=int)
        for k, br in enumerate(self.branches):
            out[self.node_index[br.to_node]] = k
        out.setflags(write=False)
        return out

    @cached_property
    def subtree(self):
        """Incidence ``T[b, n] = 1`` when node ``n`` lies downstream of branch ``b``."""
        nb, nn = len(self.branches), len(self.nodes)
        children = {n: [] for n in self.nodes}
        for br in self.branches:
            children[br.from_node].append(br.to_node)
        T = np.zeros((nb, nn))
        for k, br in enumerate(self.branches):
            stack = [br.to_node]
            while stack:
                n = stack.pop()
                T[k, self.node_index[n]] = 1.0
                stack.extend(children[n])
        T.setflags(write=False)
        return T

    @cached_property
    def z_stack(self):
        z = np.array([br.z for br in self.branches]).reshape(len(self.branches), 3, 3)
        z.setflags(write=False)
        return z

    @cached_property
    def zbus(self):
        """Driving-point impedance of the radial tree, shape ``(N, 3, N, 3)``."""
        T = self.subtree
        zb = np.einsum("bk,bm,bpq->kpmq", T, T, self.z_stack)
        zb.setflags(write=False)
        return zb

    def to_dict(self):
        return {
            "nodes": [{"id": n, "is_slack": n == self.slack} for n in self.nodes],
            "branches": [
                {
                    "from": br.from_node,
                    "to": br.to_node,
                    "r_matrix": np.asarray(br.r_ohm_per_km).tolist(),
                    "x_matrix": np.asarray(br.x_ohm_per_km).tolist(),
                    "length_km": br.length_km,
                    "ampacity_a": br.ampacity_a,
                }
                for br in self.branches
            ],
            "base": {"v_ll_volts": self.v_ll_volts, "s_base_va": self.base_power},
            "limits": self.limits.to_dict(),
            "der_nodes": list(self.der_nodes),
        }

    def with_limits(self, **kwargs):
        limits = OperatingLimits(**{**self.limits.to_dict(), **kwargs})
        return NetworkModel(self.nodes, self.branches, self.slack, self.v_ll_volts, self.base_power,
                            limits, self.der_nodes, self.name)

    def with_der_nodes(self, der_nodes):
        return NetworkModel(self.nodes, self.branches, self.slack, self.v_ll_volts, self.base_power,
                            self.limits, tuple(der_nodes), self.name)


@dataclass(frozen=True, eq=False)
class LoadProfile:
    """Per node/phase/period demand.  Arrays have shape ``(len(nodes), 3, T)``.

    Values are held in kW/kvar (the file unit) and exposed in per unit through
    :attr:`p`, :attr:`q`, :attr:`gen_p` and :attr:`gen_q`.
    """

    nodes: tuple
    p_kw: np.ndarray
    q_kvar: np.ndarray
    base_power: float
    step_minutes: int = 15
    gen_p_kw: np.ndarray = None
    gen_q_kvar: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(str(n) for n in self.nodes))
        p = _frozen(self.p_kw)
        q = _frozen(self.q_kvar)
        if p.ndim != 3 or p.shape[1] != 3 or p.shape[0] != len(self.nodes):
            raise ValidationError(f"demand array must have shape (nodes, 3, T), got {p.shape}")
        if q.shape != p.shape:
            raise ValidationError("active and reactive demand must share the same keys")
        if p.shape[2] < 1:
            raise ValidationError("profile horizon must be at least one period")
        if int(self.step_minutes) <= 0:
            raise ValidationError("step_minutes must be positive")
        gp = np.zeros_like(p) if self.gen_p_kw is None else _frozen(self.gen_p_kw)
        gq = np.zeros_like(p) if self.gen_q_kvar is None else _frozen(self.gen_q_kvar)
        gp.setflags(write=False)
        gq.setflags(write=False)
        for name, arr in (("p_kw", p), ("q_kvar", q), ("gen_p_kw", gp), ("gen_q_kvar", gq)):
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "step_minutes", int(self.step_minutes))

    @property
    def horizon(self):
        return self.p_kw.shape[2]

    @property
    def p(self):
        return self.p_kw * 1e3 / self.base_power

    @property
    def q(self):
        return self.q_kvar * 1e3 / self.base_power

    @property
    def gen_p(self):
        return self.gen_p_kw * 1e3 / self.base_power

    @property
    def gen_q(self):
        return self.gen_q_kvar * 1e3 / self.base_power

    @cached_property
    def node_index(self):
        return {n: i for i, n in enumerate(self.nodes)}

    def check_against(self, network):
        missing = [n for n in self.nodes if n not in network.node_index]
        if missing:
            raise ValidationError(f"profile references unknown node {missing[0]}", entity=missing[0])
        if self.base_power != network.base_power:
            raise ValidationError("profile and network use different power bases")

    def period(self, t):
        sl = slice(t, t + 1)
        return DemandSnapshot(self.nodes, self.p_kw[:, :, sl], self.q_kvar[:, :, sl], self.base_power,
                              self.step_minutes, self.gen_p_kw[:, :, sl], self.gen_q_kvar[:, :, sl])

    def periods(self, ts):
        ts = list(ts)
        return LoadProfile(self.nodes, self.p_kw[:, :, ts], self.q_kvar[:, :, ts], self.base_power,
                           self.step_minutes, self.gen_p_kw[:, :, ts], self.gen_q_kvar[:, :, ts])

    def scaled(self, factor):
        return type(self)(self.nodes, self.p_kw * factor, self.q_kvar * factor, self.base_power,
                          self.step_minutes, self.gen_p_kw, self.gen_q_kvar)

    def net_demand(self, network, t):
        """Complex net demand ``S_load - S_gen`` on the network node order, shape ``(N, 3)``."""
        out = np.zeros((len(network.nodes), 3), dtype=complex)
        idx = [network.node_index[n] for n in self.nodes]
        out[idx] = (self.p[:, :, t] - self.gen_p[:, :, t]) + 1j * (self.q[:, :, t] - self.gen_q[:, :, t])
        return out

    def same_as(self, other):
        return (self.nodes == other.nodes and self.base_power == other.base_power
                and self.step_minutes == other.step_minutes
                and all(np.array_equal(getattr(self, a), getattr(other, a))
                        for a in ("p_kw", "q_kvar", "gen_p_kw", "gen_q_kvar")))


class DemandSnapshot(LoadProfile):
    """A single-period slice of a :class:`LoadProfile`."""

    def __post_init__(self):
        super().__post_init__()
        if self.horizon != 1:
            raise ValidationError(f"a snapshot has exactly one period, got {self.horizon}")


def worst_case_snapshot(profile, direction):
    """Per node and phase, the period of minimum (export) or maximum (import) active demand.

    Reactive power and pre-existing generation are taken at the same period
    as the selected active-power extremum.
    """
    direction = Direction(direction)
    pick = np.argmin if direction is Direction.EXPORT else np.argmax
    idx = pick(profile.p_kw, axis=2)[:, :, None]

    def take(a):
        return np.take_along_axis(a, idx, axis=2)

    return DemandSnapshot(profile.nodes, take(profile.p_kw), take(profile.q_kvar), profile.base_power,
                          profile.step_minutes, take(profile.gen_p_kw), take(profile.gen_q_kvar))


# ---------------------------------------------------------------- file io

def _network_from_dict(data, source="<dict>"):
    try:
        base = data["base"]
        v_ll = float(base["v_ll_volts"])
        s_base = float(base["s_base_va"])
        nodes = [str(n["id"]) for n in data["nodes"]]
        slacks = [str(n["id"]) for n in data["nodes"] if n.get("is_slack")]
        branches = [
            make_branch(b["from"], b["to"], b["r_matrix"], b["x_matrix"], float(b["length_km"]),
                        float(b["ampacity_a"]), v_ll, s_base)
            for b in data["branches"]
        ]
        limits = OperatingLimits(**{k: float(v) for k, v in data.get("limits", {}).items()})
        der_nodes = [str(n) for n in data.get("der_nodes", [])]
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{source}: malformed network description ({exc!r})") from exc
    if len(slacks) != 1:
        raise ParseError(f"{source}: exactly one slack node required, found {len(slacks)}")
    if len(branches) != len(nodes) - 1:
        # a tree has exactly |N|-1 branches; let validation name the culprit first
        NetworkModel(nodes, branches, slacks[0], v_ll, s_base, limits, der_nodes)
        raise ValidationError(f"{source}: {len(branches)} branches for {len(nodes)} nodes, not a tree")
    return NetworkModel(nodes, branches, slacks[0], v_ll, s_base, limits, der_nodes,
                        name=Path(str(source)).stem)


def load_network(path):
    """Read and validate a network JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return _network_from_dict(data, source=path)


def save_network(network, path):
    Path(path).write_text(json.dumps(network.to_dict(), indent=1) + "\n")


def _sidecar(path):
    return Path(path).with_suffix(".json")


def load_profile(path, network=None, base_power=None):
    """Read a ``node,phase,period,p_kw,q_kvar`` CSV (plus its ``.json`` sidecar)."""
    path = Path(path)
    if base_power is None:
        base_power = network.base_power if network is not None else 1e6
    step = 15
    side = _sidecar(path)
    if side.exists():
        try:
            step = int(json.loads(side.read_text())["step_minutes"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"{side}: missing or invalid step_minutes") from exc
    rows = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["node", "phase", "period", "p_kw", "q_kvar"]
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
            raise ParseError(f"{path}: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((row["node"].strip(), Phase.parse(row["phase"]), int(row["period"]),
                             float(row["p_kw"]), float(row["q_kvar"])))
            except (ValueError, AttributeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no demand rows")
    nodes = list(dict.fromkeys(r[0] for r in rows))
    horizon = max(r[2] for r in rows) + 1
    if min(r[2] for r in rows) < 0:
        raise ParseError(f"{path}: negative period index")
    p = np.zeros((len(nodes), 3, horizon))
    q = np.zeros_like(p)
    pos = {n: i for i, n in enumerate(nodes)}
    for node, ph, t, pk, qk in rows:
        p[pos[node], ph, t] = pk
        q[pos[node], ph, t] = qk
    profile = LoadProfile(tuple(nodes), p, q, base_power, step)
    if network is not None:
        profile.check_against(network)
    return profile


def save_profile(profile, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "phase", "period", "p_kw", "q_kvar"])
        for i, node in enumerate(profile.nodes):
            for ph in PHASES:
                for t in range(profile.horizon):
                    w.writerow([node, ph.name, t, repr(float(profile.p_kw[i, ph, t])),
                                repr(float(profile.q_kvar[i, ph, t]))])
    _sidecar(path).write_text(json.dumps({"step_minutes": profile.step_minutes}) + "\n")


# ---------------------------------------------------------------- builders

# positive-sequence cable data of the CIGRE LV residential feeder (ohm/km)
_CIGRE_CABLES = {"UG1": (0.162, 0.0832), "UG3": (0.822, 0.0847)}
_CIGRE_LINES = (
    ("R1", "R2", 0.035, "UG1"), ("R2", "R3", 0.035, "UG1"), ("R3", "R4", 0.035, "UG1"),
    ("R4", "R5", 0.035, "UG1"), ("R5", "R6", 0.035, "UG1"), ("R6", "R7", 0.035, "UG1"),
    ("R7", "R8", 0.035, "UG1"), ("R8", "R9", 0.035, "UG1"), ("R9", "R10", 0.035, "UG1"),
    ("R3", "R11", 0.030, "UG3"), ("R4", "R12", 0.035, "UG3"), ("R12", "R13", 0.035, "UG3"),
    ("R13", "R14", 0.035, "UG3"), ("R14", "R15", 0.030, "UG3"), ("R6", "R16", 0.030, "UG3"),
    ("R9", "R17", 0.030, "UG3"), ("R10", "R18", 0.030, "UG3"),
)
# end-user peak demand (kW, kvar), three-phase totals
_CIGRE_LOADS = (
    ("R11", 14.25, 4.683748), ("R15", 49.4, 16.236995), ("R16", 52.25, 17.173744),
    ("R17", 33.25, 10.928746), ("R18", 44.65, 14.675745),
)
# uncoupled phases: per-phase positive-sequence impedance, as in the benchmark data
_ZERO_SEQ_RATIO = 1.0
# concentration of the per-user phase split; 1 would be uniform over the simplex
_SPLIT_CONCENTRATION = 8.0


def _phase_matrices(r1, x1):
    z = sequence_to_phase(complex(r1, x1), _ZERO_SEQ_RATIO * complex(r1, x1))
    return z.real, z.imag


def build_cigre_lv(seed=1):
    """Residential CIGRE LV feeder (18 nodes, 17 lines) with a seeded per-phase load split.

    Each end-user's three-phase demand is divided over the phases with shares
    drawn from a symmetric Dirichlet distribution; the daily profile scales the
    peak values by the bundled residential curve.
    """
    v_ll, s_base = 400.0, 1e6
    nodes = [f"R{k}" for k in range(1, 19)]
    branches = []
    for a, b, length, kind in _CIGRE_LINES:
        r, x = _phase_matrices(*_CIGRE_CABLES[kind])
        branches.append(make_branch(a, b, r, x, length, 1000.0, v_ll, s_base))
    load_nodes = tuple(n for n, _, _ in _CIGRE_LOADS)
    network = NetworkModel(nodes, branches, "R1", v_ll, s_base, OperatingLimits(), load_nodes,
                           name="cigre_lv")
    rng = np.random.default_rng(seed)
    curve = np.asarray(RESIDENTIAL_DAY)
    p = np.zeros((len(load_nodes), 3, curve.size))
    q = np.zeros_like(p)
    for i, (_, pk, qk) in enumerate(_CIGRE_LOADS):
        share = rng.dirichlet(np.full(3, _SPLIT_CONCENTRATION))
        p[i] = np.outer(share * pk, curve)
        q[i] = np.outer(share * qk, curve)
    return network, LoadProfile(load_nodes, p, q, s_base, 15)


# typical LV cables: (r1 ohm/km, x1 ohm/km, ampacity A)
_FEEDER_CABLES = ((0.125, 0.078, 430.0), (0.206, 0.080, 275.0), (0.320, 0.082, 215.0),
                  (0.641, 0.086, 145.0))
# smallest number of supplied users for which each cable above is used
_CABLE_USERS = (30, 16, 6, 0)


def build_synthetic_feeder(seed=7, n_nodes=64, n_users=43):
    """Seeded stand-in for a 64-node residential feeder with three-phase end-users.

    The tree grows by attaching each new node to one of the ten most recent
    nodes, which yields a mix of long laterals and short spurs.  Cables are
    sized by the number of users downstream.  User profiles
    follow the evening-peaked residential curve with per-user scale, time
    shift and multiplicative noise.
    """
    rng = np.random.default_rng(seed)
    v_ll, s_base = 400.0, 1e6
    nodes = [f"N{k}" for k in range(n_nodes)]
    parents, lengths = [], []
    for k in range(1, n_nodes):
        lo = max(0, k - 10)
        parents.append(int(rng.integers(lo, k)) if k > 1 else 0)
        lengths.append(float(np.round(rng.uniform(0.02, 0.045), 4)))
    users = tuple(nodes[k] for k in sorted(rng.choice(np.arange(1, n_nodes), size=n_users,
                                                          replace=False)))
    # size each cable by the number of users it supplies
    downstream = np.zeros(n_nodes, dtype=int)
    for u in users:
        downstream[int(u[1:])] += 1
    for k in range(n_nodes - 1, 0, -1):
        downstream[parents[k - 1]] += downstream[k]
    branches = []
    for k in range(1, n_nodes):
        n_down = downstream[k]
        kind = next(i for i, lim in enumerate(_CABLE_USERS) if n_down >= lim)
        r1, x1, amp = _FEEDER_CABLES[kind]
        r, x = _phase_matrices(r1, x1)
        branches.append(make_branch(nodes[parents[k - 1]], nodes[k], r, x, lengths[k - 1], amp,
                                    v_ll, s_base))
    network = NetworkModel(nodes, branches, nodes[0], v_ll, s_base, OperatingLimits(), users,
                           name="synthetic64")
    curve = np.asarray(RESIDENTIAL_DAY)
    horizon = curve.size
    p = np.zeros((len(users), 3, horizon))
    q = np.zeros_like(p)
    for i in range(len(users)):
        shift = int(rng.integers(-3, 4))
        base = np.roll(curve, shift)
        peak = rng.uniform(1.0, 2.6, size=3)
        noise = rng.lognormal(0.0, 0.18, size=(3, horizon))
        pf = rng.uniform(0.93, 0.98)
        p[i] = np.round(peak[:, None] * base[None, :] * noise, 4)
        q[i] = np.round(p[i] * math.tan(math.acos(pf)), 4)
    return network, LoadProfile(users, p, q, s_base, 15)
