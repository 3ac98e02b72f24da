"""Phase-selection scenarios and DER connection-phase assignments."""
import zlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .netmodel import PHASES, Direction, Phase


class ScenarioKind(str, Enum):
    S1 = "S1"   # phase chosen by binaries inside the optimisation
    S2 = "S2"   # random phase in every period
    S3 = "S3"   # random phase, same in every period
    S4 = "S4"   # most/least loaded phase of each period
    S5 = "S5"   # most/least loaded phase over the day

    @property
    def is_random(self):
        return self in (ScenarioKind.S2, ScenarioKind.S3)

    @property
    def is_fixed(self):
        """True when the phase does not change between periods."""
        return self in (ScenarioKind.S3, ScenarioKind.S5)


_LONG_NAMES = {"S1_BINARIES": "S1", "S2_RANDOMPERPERIOD": "S2", "S3_RANDOMFIXED": "S3",
               "S4_LOADEDPERPERIOD": "S4", "S5_LOADEDFIXED": "S5"}


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.kind.is_random and self.seed is None:
            raise ValidationError(f"scenario {self.kind.value} needs a seed")
        if not self.kind.is_random and self.seed is not None:
            raise ValidationError(f"scenario {self.kind.value} takes no seed")

    @classmethod
    def parse(cls, label, seed=0):
        key = str(label).strip().upper()
        key = _LONG_NAMES.get(key, key)
        kind = ScenarioKind(key)
        return cls(kind, int(seed) if kind.is_random else None)

    @property
    def label(self):
        return self.kind.value

    def __str__(self):
        return self.label if self.seed is None else f"{self.label}(seed={self.seed})"


@dataclass(frozen=True, eq=False)
class PhaseAssignment:
    """DER connection phase per node and period.

    ``phases`` has shape ``(len(nodes), T)`` and holds phase indices; a free
    assignment (phase left to the optimiser) stores ``-1`` everywhere.
    """
    nodes: tuple
    phases: np.ndarray

    def __post_init__(self):
        ph = np.array(self.phases, dtype=int)
        if ph.ndim != 2 or ph.shape[0] != len(self.nodes):
            raise ValidationError("assignment must have shape (nodes, T)")
        if ph.size and (ph.min() < -1 or ph.max() > 2):
            raise ValidationError("phase index out of range")
        free = ph == -1
        if free.any() and not free.all():
            raise ValidationError("an assignment is either fully free or fully fixed")
        ph.setflags(write=False)
        object.__setattr__(self, "nodes", tuple(str(n) for n in self.nodes))
        object.__setattr__(self, "phases", ph)

    @classmethod
    def free(cls, nodes, horizon):
        return cls(tuple(nodes), np.full((len(nodes), horizon), -1, dtype=int))

    @property
    def is_free(self):
        return bool(self.phases.size) and bool((self.phases == -1).all())

    @property
    def horizon(self):
        return self.phases.shape[1]

    @property
    def period_invariant(self):
        return bool((self.phases == self.phases[:, :1]).all()) if self.phases.size else True

    def phase(self, node, t):
        v = int(self.phases[self.nodes.index(str(node)), t])
        return None if v < 0 else PHASES[v]

    def period(self, t):
        return PhaseAssignment(self.nodes, self.phases[:, t:t + 1])

    def restricted(self, nodes):
        idx = [self.nodes.index(n) for n in nodes]
        return PhaseAssignment(tuple(nodes), self.phases[idx])

    def to_dict(self):
        return {n: [None if v < 0 else PHASES[v].name for v in row]
                for n, row in zip(self.nodes, self.phases.tolist())}


class PhaseMode:
    """How the DER phase is decided inside a formulation."""

    @staticmethod
    def binaries():
        return Binaries()

    @staticmethod
    def fixed(assignment):
        return Fixed(assignment)


@dataclass(frozen=True)
class Binaries(PhaseMode):
    pass


@dataclass(frozen=True, eq=False)
class Fixed(PhaseMode):
    assignment: PhaseAssignment


def node_stream(seed, node, *extra):
    """Independent generator per (seed, node, extra...) regardless of call order."""
    # SeedSequence ignores trailing zero words, so close the key with a constant
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(str(node).encode()), *(int(e) for e in extra),
           0x5EED]
    return np.random.default_rng(np.random.SeedSequence(key))


def _single_phase(p_row):
    """Phase index of a user whose demand sits on one phase only, else None."""
    used = np.flatnonzero(np.any(p_row != 0.0, axis=1))
    return int(used[0]) if used.size == 1 else None


def assign_phases(profile, scenario, direction, nodes=None):
    """Connection phase of the DER at each node for every period of ``profile``.

    :param nodes: nodes that receive a DER; defaults to the profile's nodes.
        Nodes without demand data are treated as zero-demand three-phase users.
    """
    scenario = scenario if isinstance(scenario, Scenario) else Scenario.parse(scenario)
    direction = Direction(direction)
    nodes = tuple(profile.nodes if nodes is None else nodes)
    horizon = profile.horizon
    if scenario.kind is ScenarioKind.S1:
        return PhaseAssignment.free(nodes, horizon)
    out = np.zeros((len(nodes), horizon), dtype=int)
    pick = np.argmax if direction is Direction.EXPORT else np.argmin
    for i, node in enumerate(nodes):
        if node in profile.node_index:
            p = profile.p_kw[profile.node_index[node]]
        else:
            p = np.zeros((3, horizon))
        single = _single_phase(p)
        if single is not None:
            out[i] = single
            continue
        kind = scenario.kind
        if kind is ScenarioKind.S2:
            out[i] = [node_stream(scenario.seed, node, t).integers(3) for t in range(horizon)]
        elif kind is ScenarioKind.S3:
            out[i] = node_stream(scenario.seed, node).integers(3)
        elif kind is ScenarioKind.S4:
            # argmax/argmin return the first extremum, so ties go to A, then B
            out[i] = pick(p, axis=0)
        else:
            out[i] = pick(p.sum(axis=1))
    return PhaseAssignment(nodes, out)


__all__ = ["Scenario", "ScenarioKind", "PhaseAssignment", "PhaseMode", "Binaries", "Fixed",
           "assign_phases", "node_stream", "Phase"]
