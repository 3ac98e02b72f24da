"""Bounded-variable revised simplex.

Rows are turned into equalities with one bounded logical per row,
``A x - s = 0`` with ``row_lo <= s <= row_hi``, so every column (structural or
logical) simply lives between two possibly infinite bounds.  Infeasible
starting bases are repaired by a composite phase 1 that minimises the sum of
bound violations of the basic variables; the logicals of equality rows act as
the artificials.  The basis inverse is kept as a sparse LU factor plus a
product-form eta file that is refactored every few pivots.
"""
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import NumericalBreakdown
from .problem import LpSolution, LpStatus, Sense

FEAS_TOL = 1e-7
PRIMAL_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 50
BLAND_AFTER = 500
COND_LIMIT = 1e12


@dataclass
class Basis:
    """Basic column per row plus which nonbasic columns sit at their upper bound."""
    basic: np.ndarray
    at_upper: np.ndarray


class _Factor:
    def __init__(self, matrix):
        self.lu = splu(sp.csc_matrix(matrix), permc_spec="COLAMD")
        diag = np.abs(self.lu.U.diagonal())
        lo = diag.min() if diag.size else 1.0
        self.condition = math.inf if lo == 0.0 else float(diag.max() / lo)
        self.etas = []

    def ftran(self, v):
        x = self.lu.solve(v)
        for r, col in self.etas:
            xr = x[r] / col[r]
            x -= col * xr
            x[r] = xr
        return x

    def btran(self, v):
        w = np.array(v, dtype=float)
        for r, col in reversed(self.etas):
            w[r] = (w[r] - (col @ w - col[r] * w[r])) / col[r]
        return self.lu.solve(w, trans="T")

    def update(self, r, col):
        self.etas.append((r, col.copy()))


def _column(a, j):
    col = np.zeros(a.shape[0])
    lo, hi = a.indptr[j], a.indptr[j + 1]
    col[a.indices[lo:hi]] = a.data[lo:hi]
    return col


def _trivial(lp, cmin, lb, ub, start):
    """Solve a program without rows: every column goes to its cheapest bound."""
    x = np.zeros(lp.n_vars)
    for j in range(lp.n_vars):
        if cmin[j] < 0.0:
            x[j] = ub[j]
        elif cmin[j] > 0.0:
            x[j] = lb[j]
        else:
            x[j] = lb[j] if math.isfinite(lb[j]) else (ub[j] if math.isfinite(ub[j]) else 0.0)
        if not math.isfinite(x[j]):
            return LpSolution(LpStatus.UNBOUNDED, math.nan, np.full(lp.n_vars, math.nan),
                              lp.var_names, 0, time.perf_counter() - start,
                              message=f"column {lp.var_names[j]} is unbounded")
    return LpSolution(LpStatus.OPTIMAL, lp.objective_value(x), x, lp.var_names, 0,
                      time.perf_counter() - start)


def solve_lp(lp, basis=None, lower=None, upper=None, method="simplex", max_iter=None):
    """Solve ``lp`` and return an :class:`LpSolution`.

    :param basis: optional warm start, either a :class:`Basis` from an earlier
        solve or a list of one column index per row (logical of row ``i`` is
        column ``n + i``).  A singular or ill-conditioned hint is ignored.
    :param lower: optional per-variable lower bounds overriding the program's.
    :param upper: optional per-variable upper bounds overriding the program's.
    :param method: ``"simplex"`` (default) or ``"highs"`` for scipy's HiGHS.
    """
    start = time.perf_counter()
    c, a, row_lo, row_hi, lb, ub = lp.arrays()
    lb = lb if lower is None else np.asarray(lower, dtype=float)
    ub = ub if upper is None else np.asarray(upper, dtype=float)
    if method == "highs":
        return _solve_highs(lp, c, a, row_lo, row_hi, lb, ub, start)
    if method != "simplex":
        raise ValueError(f"unknown method {method!r}")
    n, m = lp.n_vars, lp.n_rows
    cmin = -c if lp.sense == Sense.MAXIMIZE else c.copy()
    if np.any(lb > ub):
        j = int(np.argmax(lb > ub))
        return LpSolution(LpStatus.INFEASIBLE, math.nan, np.full(n, math.nan), lp.var_names, 0,
                          time.perf_counter() - start,
                          message=f"empty bounds on {lp.var_names[j]}")
    if m == 0:
        return _trivial(lp, cmin, lb, ub, start)
    solver = _Simplex(a, cmin, np.concatenate([lb, row_lo]), np.concatenate([ub, row_hi]), n, m,
                      max_iter)
    status, message = solver.run(basis)
    x = np.clip(solver.x[:n], lb, ub)
    obj = lp.objective_value(x) if status == LpStatus.OPTIMAL else math.nan
    if status != LpStatus.OPTIMAL:
        x = solver.x[:n].copy()
    sol = LpSolution(status, obj, x, lp.var_names, solver.iterations,
                     time.perf_counter() - start, solver.basis(), message)
    return sol


class _Simplex:
    def __init__(self, a, cmin, lower, upper, n, m, max_iter):
        self.n, self.m = n, m
        self.a = sp.hstack([a, -sp.identity(m, format="csc")], format="csc")
        self.at = self.a.T.tocsr()
        self.cost = np.concatenate([cmin, np.zeros(m)])
        self.lo, self.hi = lower, upper
        self.x = np.zeros(n + m)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.head = np.arange(n, n + m)
        self.iterations = 0
        self.max_iter = max_iter if max_iter is not None else 50 * (n + m) + 1000
        self.factor = None
        self.pivot_history = 0

    # -- basis handling ---------------------------------------------------
    def _place_nonbasic(self, j, prefer_upper=False):
        lo, hi = self.lo[j], self.hi[j]
        if prefer_upper and math.isfinite(hi):
            self.x[j] = hi
        elif math.isfinite(lo):
            self.x[j] = lo
        elif math.isfinite(hi):
            self.x[j] = hi
        else:
            self.x[j] = 0.0

    def _install(self, head, at_upper=None):
        self.head = np.asarray(head, dtype=int).copy()
        self.is_basic[:] = False
        self.is_basic[self.head] = True
        for j in np.flatnonzero(~self.is_basic):
            self._place_nonbasic(j, bool(at_upper[j]) if at_upper is not None else False)
        self._refactor(check=False)

    def _refactor(self, check=True):
        self.factor = _Factor(self.a[:, self.head])
        if check and self.factor.condition > COND_LIMIT:
            raise NumericalBreakdown(
                f"basis condition estimate {self.factor.condition:.3g} exceeds {COND_LIMIT:g}",
                self.pivot_history)
        self._recompute_basics()

    def _recompute_basics(self):
        xn = np.where(self.is_basic, 0.0, self.x)
        self.x[self.head] = self.factor.ftran(-(self.a @ xn))

    def _start(self, hint):
        if hint is not None:
            if isinstance(hint, Basis):
                head, at_upper = hint.basic, hint.at_upper
            else:
                head, at_upper = np.asarray(hint, dtype=int), None
            if (head.size == self.m and len(set(head.tolist())) == self.m
                    and head.min() >= 0 and head.max() < self.n + self.m):
                try:
                    self._install(head, at_upper)
                    if self.factor.condition <= COND_LIMIT:
                        return
                except (RuntimeError, ValueError):
                    pass
        self._install(np.arange(self.n, self.n + self.m))

    def basis(self):
        at_upper = np.zeros(self.n + self.m, dtype=bool)
        nb = ~self.is_basic
        at_upper[nb] = (self.x[nb] == self.hi[nb]) & (self.lo[nb] != self.hi[nb])
        return Basis(self.head.copy(), at_upper)

    # -- main loop --------------------------------------------------------
    def run(self, hint):
        self._start(hint)
        ptol = PRIMAL_TOL
        degenerate = 0
        verified = False
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalBreakdown(f"iteration limit {self.max_iter} reached",
                                         self.pivot_history)
            if len(self.factor.etas) >= REFACTOR_EVERY:
                self._refactor()
            xb = self.x[self.head]
            lob, hib = self.lo[self.head], self.hi[self.head]
            below = xb < lob - ptol
            above = xb > hib + ptol
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                y = self.factor.btran(cb)
                d = -(self.at @ y)
            else:
                y = self.factor.btran(self.cost[self.head])
                d = self.cost - self.at @ y
            q, sigma = self._price(d, bland=degenerate > BLAND_AFTER)
            if q < 0:
                if phase1:
                    infeas = float(np.max(np.concatenate([lob - xb, xb - hib])))
                    if infeas <= FEAS_TOL and ptol < FEAS_TOL:
                        ptol = FEAS_TOL
                        continue
                    rows = np.flatnonzero(below | above)
                    return LpStatus.INFEASIBLE, (
                        f"phase 1 stalled with bound violation {infeas:.3g} on "
                        f"{rows.size} basic column(s)")
                if not verified and self.factor.etas:
                    self._refactor()
                    verified = True
                    continue
                return LpStatus.OPTIMAL, ""
            verified = False
            alpha = self.factor.ftran(_column(self.a, q))
            delta = -sigma * alpha
            step, row, target = self._ratio(delta, xb, lob, hib, below, above, ptol,
                                            bland=degenerate > BLAND_AFTER)
            span = self.hi[q] - self.lo[q]
            if row < 0 and not math.isfinite(span):
                if phase1:
                    raise NumericalBreakdown("phase 1 direction without a blocking row",
                                             self.pivot_history)
                return LpStatus.UNBOUNDED, f"column {q} improves without limit"
            self.iterations += 1
            if row < 0 or span <= step:
                # bound flip of the entering column, basis unchanged
                self.x[self.head] += span * delta
                self.x[q] = self.hi[q] if sigma > 0 else self.lo[q]
                degenerate = 0
                continue
            self.x[self.head] += step * delta
            self.x[q] += sigma * step
            leave = self.head[row]
            self.x[leave] = target
            self.is_basic[leave] = False
            self.is_basic[q] = True
            self.head[row] = q
            self.factor.update(row, alpha)
            self.pivot_history += 1
            degenerate = degenerate + 1 if step <= 1e-12 else 0

    def _price(self, d, bland):
        nb = ~self.is_basic
        x, lo, hi = self.x, self.lo, self.hi
        up = nb & (x < hi) & (d < -OPT_TOL)
        down = nb & (x > lo) & (d > OPT_TOL)
        cand = up | down
        if not cand.any():
            return -1, 0
        if bland:
            q = int(np.argmax(cand))
        else:
            score = np.where(cand, np.abs(d), -1.0)
            q = int(np.argmax(score))
        return q, (1.0 if up[q] else -1.0)

    def _ratio(self, delta, xb, lob, hib, below, above, ptol, bland):
        """Harris two-pass ratio test; returns ``(step, row, leaving target)``."""
        big = np.abs(delta) > PIVOT_TOL
        dec = big & (delta < 0)
        inc = big & (delta > 0)
        ratio = np.full(delta.size, math.inf)
        relaxed = np.full(delta.size, math.inf)
        target = np.full(delta.size, math.nan)
        feas = ~(below | above)
        with np.errstate(invalid="ignore", divide="ignore"):
            # feasible basics block at the bound they move towards
            m = feas & dec & np.isfinite(lob)
            ratio[m] = (xb[m] - lob[m]) / -delta[m]
            relaxed[m] = (xb[m] - lob[m] + ptol) / -delta[m]
            target[m] = lob[m]
            m = feas & inc & np.isfinite(hib)
            ratio[m] = (hib[m] - xb[m]) / delta[m]
            relaxed[m] = (hib[m] - xb[m] + ptol) / delta[m]
            target[m] = hib[m]
            # infeasible basics stop once they reach the violated bound
            m = below & inc
            ratio[m] = (lob[m] - xb[m]) / delta[m]
            relaxed[m] = ratio[m]
            target[m] = lob[m]
            m = above & dec
            ratio[m] = (xb[m] - hib[m]) / -delta[m]
            relaxed[m] = ratio[m]
            target[m] = hib[m]
        if not np.isfinite(relaxed).any():
            return math.inf, -1, math.nan
        bound = relaxed.min()
        cand = np.flatnonzero(ratio <= bound)
        if bland:
            # smallest ratio, ties to the lowest column index
            best = cand[ratio[cand] <= ratio[cand].min() + 1e-12]
            row = int(best[np.argmin(self.head[best])])
        else:
            row = int(cand[np.argmax(np.abs(delta[cand]))])
        return max(float(ratio[row]), 0.0), row, float(target[row])


def _solve_highs(lp, c, a, row_lo, row_hi, lb, ub, start):
    from scipy.optimize import Bounds, LinearConstraint, milp

    sign = -1.0 if lp.sense == Sense.MAXIMIZE else 1.0
    cons = [LinearConstraint(a, row_lo, row_hi)] if lp.n_rows else []
    res = milp(sign * c, constraints=cons, bounds=Bounds(lb, ub))
    status = {0: LpStatus.OPTIMAL, 2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}.get(res.status)
    if status is None:
        raise NumericalBreakdown(f"HiGHS returned status {res.status}: {res.message}")
    x = res.x if res.x is not None else np.full(lp.n_vars, math.nan)
    obj = lp.objective_value(x) if status == LpStatus.OPTIMAL else math.nan
    return LpSolution(status, obj, np.asarray(x, dtype=float), lp.var_names, 0,
                      time.perf_counter() - start, None, res.message)
