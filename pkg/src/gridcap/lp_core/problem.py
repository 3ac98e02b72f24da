"""Containers for linear and mixed-binary programs and their solutions."""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError

INF = math.inf


class Sense(str, Enum):
    MAXIMIZE = "max"
    MINIMIZE = "min"


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"<=": cls.LE, "<": cls.LE, "le": cls.LE, "=": cls.EQ, "==": cls.EQ,
                   "eq": cls.EQ, ">=": cls.GE, ">": cls.GE, "ge": cls.GE}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown relation {value!r}") from None


class LpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class MilpStatus(str, Enum):
    OPTIMAL = "Optimal"
    GAP_REACHED = "GapReached"
    INFEASIBLE = "Infeasible"
    NODE_LIMIT = "NodeLimit"


class LinearProgram:
    """A linear program assembled row by row.

    Variables carry a name and bounds (infinite bounds allowed).  Rows are
    sparse dicts ``{column: coefficient}`` with a relation and right-hand
    side, plus a free-form ``kind`` tag that formulation builders use to label
    the physical meaning of a row.
    """

    def __init__(self, sense=Sense.MAXIMIZE, name="lp"):
        self.sense = Sense(sense)
        self.name = name
        self.var_names = []
        self.lower = []
        self.upper = []
        self.objective = {}
        self.rows = []
        self.relations = []
        self.rhs = []
        self.row_kinds = []
        self.row_names = []
        self._cache = None

    # -- building ---------------------------------------------------------
    @property
    def n_vars(self):
        return len(self.var_names)

    @property
    def n_rows(self):
        return len(self.rows)

    def add_variable(self, name, lower=0.0, upper=INF, obj=0.0):
        lower, upper = float(lower), float(upper)
        if math.isnan(lower) or math.isnan(upper):
            raise ValidationError(f"NaN bound on variable {name}", name)
        if lower > upper:
            raise ValidationError(f"variable {name} has lower bound above upper bound", name)
        self.var_names.append(str(name))
        self.lower.append(lower)
        self.upper.append(upper)
        j = len(self.var_names) - 1
        if obj:
            self.objective[j] = float(obj)
        self._cache = None
        return j

    def set_objective(self, j, coef):
        if coef:
            self.objective[j] = float(coef)
        else:
            self.objective.pop(j, None)
        self._cache = None

    def add_constraint(self, coefs, relation, rhs, kind="", name=None):
        row = {}
        for j, a in coefs.items():
            j = int(j)
            if not 0 <= j < self.n_vars:
                raise ValidationError(f"row references unknown variable {j}", j)
            a = float(a)
            if math.isnan(a):
                raise ValidationError("NaN coefficient", j)
            if a != 0.0:
                row[j] = row.get(j, 0.0) + a
        rhs = float(rhs)
        if math.isnan(rhs):
            raise ValidationError("NaN right-hand side", name)
        self.rows.append(row)
        self.relations.append(Relation.parse(relation))
        self.rhs.append(rhs)
        self.row_kinds.append(kind)
        self.row_names.append(name if name is not None else f"r{len(self.rows) - 1}")
        self._cache = None
        return len(self.rows) - 1

    def copy(self):
        other = LinearProgram(self.sense, self.name)
        other.var_names = list(self.var_names)
        other.lower = list(self.lower)
        other.upper = list(self.upper)
        other.objective = dict(self.objective)
        other.rows = [dict(r) for r in self.rows]
        other.relations = list(self.relations)
        other.rhs = list(self.rhs)
        other.row_kinds = list(self.row_kinds)
        other.row_names = list(self.row_names)
        return other

    # -- dense/sparse views -----------------------------------------------
    def arrays(self):
        """Return ``(c, A, row_lo, row_hi, lb, ub)`` with ``A`` in CSC form.

        ``c`` is in the problem's own sense; callers negate for maximisation.
        """
        if self._cache is None:
            n, m = self.n_vars, self.n_rows
            c = np.zeros(n)
            for j, v in self.objective.items():
                c[j] = v
            ri, ci, vals = [], [], []
            for i, row in enumerate(self.rows):
                ri.extend([i] * len(row))
                ci.extend(row.keys())
                vals.extend(row.values())
            a = sp.csc_matrix((vals, (ri, ci)), shape=(m, n))
            rhs = np.asarray(self.rhs, dtype=float)
            rel = self.relations
            lo = np.array([r if s in (Relation.GE, Relation.EQ) else -INF
                           for r, s in zip(rhs, rel)], dtype=float).reshape(m)
            hi = np.array([r if s in (Relation.LE, Relation.EQ) else INF
                           for r, s in zip(rhs, rel)], dtype=float).reshape(m)
            self._cache = (c, a, lo, hi, np.asarray(self.lower, dtype=float),
                           np.asarray(self.upper, dtype=float))
        return self._cache

    def row_activity(self, x):
        _, a, _, _, _, _ = self.arrays()
        return a @ np.asarray(x, dtype=float)

    def max_violation(self, x):
        """Largest absolute row or bound violation of the point ``x``."""
        _, _, lo, hi, lb, ub = self.arrays()
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x)
        worst = 0.0
        if act.size:
            worst = max(worst, float(np.max(np.maximum(lo - act, 0.0))),
                        float(np.max(np.maximum(act - hi, 0.0))))
        if x.size:
            worst = max(worst, float(np.max(np.maximum(lb - x, 0.0))),
                        float(np.max(np.maximum(x - ub, 0.0))))
        return worst

    def objective_value(self, x):
        c = self.arrays()[0]
        return float(c @ np.asarray(x, dtype=float))

    def rows_of_kind(self, kind):
        return [i for i, k in enumerate(self.row_kinds) if k == kind]


@dataclass
class LpSolution:
    status: LpStatus
    objective: float
    x: np.ndarray
    var_names: list
    iterations: int = 0
    elapsed: float = 0.0
    basis: object = None
    message: str = ""

    @property
    def primal(self):
        return dict(zip(self.var_names, self.x.tolist()))

    @property
    def ok(self):
        return self.status == LpStatus.OPTIMAL


@dataclass
class MilpProblem:
    """LP relaxation plus the set of binary columns and "sum <= 1" groups."""
    lp: LinearProgram
    binaries: list
    sos_groups: list = field(default_factory=list)

    def __post_init__(self):
        self.binaries = [int(j) for j in self.binaries]
        self.sos_groups = [tuple(int(j) for j in g) for g in self.sos_groups]
        for j in self.binaries:
            if not 0 <= j < self.lp.n_vars:
                raise ValidationError(f"binary {j} is not a variable", j)
            if self.lp.lower[j] < 0.0 or self.lp.upper[j] > 1.0:
                raise ValidationError(f"binary {self.lp.var_names[j]} must be bounded by [0, 1]", j)
        members = set(self.binaries)
        for g in self.sos_groups:
            if not set(g) <= members:
                raise ValidationError("group member is not a binary", g)


@dataclass
class MilpSolution:
    status: MilpStatus
    incumbent: LpSolution
    best_bound: float
    gap: float
    nodes_explored: int = 0
    elapsed: float = 0.0

    @property
    def objective(self):
        return self.incumbent.objective if self.incumbent is not None else math.nan

    @property
    def ok(self):
        return self.status in (MilpStatus.OPTIMAL, MilpStatus.GAP_REACHED)


def relative_gap(bound, incumbent):
    return abs(bound - incumbent) / max(abs(incumbent), 1e-9)
