"""Best-bound branch-and-bound over binary columns."""
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import GridcapError
from .problem import LpStatus, MilpSolution, MilpStatus, Sense, relative_gap
from .simplex import solve_lp

INT_TOL = 1e-6
PRUNE_TOL = 1e-9


@dataclass(order=True)
class _Node:
    key: tuple
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)
    sol: object = field(compare=False)
    depth: int = field(compare=False, default=0)


class _Search:
    def __init__(self, problem, method):
        self.p = problem
        self.lp = problem.lp
        self.method = method
        self.sign = 1.0 if self.lp.sense == Sense.MAXIMIZE else -1.0
        self.bins = np.asarray(sorted(problem.binaries), dtype=int)
        self.group_of = {}
        for g in problem.sos_groups:
            for j in g:
                self.group_of.setdefault(j, g)
        self.incumbent = None
        self.lp_solves = 0
        self.seq = 0
        # pseudo-costs: objective loss per unit change, down and up, per binary
        n = self.lp.n_vars
        self.pc_sum = np.zeros((2, n))
        self.pc_cnt = np.zeros((2, n), dtype=int)

    # -- helpers ----------------------------------------------------------
    def solve(self, lower, upper, basis=None):
        self.lp_solves += 1
        sol = solve_lp(self.lp, basis=basis, lower=lower, upper=upper, method=self.method)
        if sol.status == LpStatus.UNBOUNDED:
            raise GridcapError("the LP relaxation is unbounded")
        return sol

    def better(self, value, than):
        return than is None or self.sign * (value - than) > PRUNE_TOL

    def fractional(self, x):
        xb = x[self.bins]
        dist = np.abs(xb - np.round(xb))
        return self.bins[dist > INT_TOL], xb

    def offer(self, lower, upper, values, basis):
        """Fix the binaries at ``values``, re-solve, and keep the point if it improves."""
        lo, up = lower.copy(), upper.copy()
        lo[self.bins] = values
        up[self.bins] = values
        if np.any(lo > up):
            return
        sol = self.solve(lo, up, basis)
        if sol.ok and self.better(sol.objective, self.incumbent and self.incumbent.objective):
            self.incumbent = sol

    def rounding(self, sol, lower, upper):
        x = sol.x
        vals = np.clip(np.round(x[self.bins]), 0.0, 1.0)
        pos = {j: k for k, j in enumerate(self.bins)}
        for g in self.p.sos_groups:
            idx = [pos[j] for j in g]
            vals[idx] = 0.0
            best = max(g, key=lambda j: (x[j], -j))
            if x[best] > INT_TOL and upper[best] >= 1.0:
                vals[pos[best]] = 1.0
        vals = np.clip(vals, lower[self.bins], upper[self.bins])
        self.offer(lower, upper, vals, sol.basis)

    def node(self, lower, upper, basis, depth, sol=None):
        sol = self.solve(lower, upper, basis) if sol is None else sol
        if not sol.ok:
            return None
        self.seq += 1
        return _Node((-self.sign * sol.objective, self.seq), lower, upper, sol, depth)

    def children(self, node, j):
        """Bounds of the down and up branch on binary ``j``."""
        down_u = node.upper.copy()
        down_u[j] = 0.0
        up_l, up_u = node.lower.copy(), node.upper.copy()
        up_l[j] = 1.0
        for k in self.group_of.get(j, ()):
            if k != j:
                up_u[k] = 0.0
        return (node.lower, down_u), (up_l, up_u)

    def record(self, j, side, parent, child, frac):
        """Update the pseudo-cost of ``j``; returns the objective loss (inf if infeasible)."""
        if not child.ok:
            return math.inf
        loss = max(self.sign * (parent - child.objective), 0.0)
        dist = frac if side == 0 else 1.0 - frac
        if dist > INT_TOL:
            self.pc_sum[side, j] += loss / dist
            self.pc_cnt[side, j] += 1
        return loss

    def estimate(self, j, side, frac):
        cnt = self.pc_cnt[side]
        if cnt[j]:
            unit = self.pc_sum[side, j] / cnt[j]
        else:
            seen = cnt > 0
            unit = self.pc_sum[side, seen].sum() / cnt[seen].sum() if seen.any() else 1.0
        return unit * (frac if side == 0 else 1.0 - frac)

    def choose(self, node, frac, reliable, lookahead):
        """Reliability branching; returns ``(j, solved children or None)``."""
        x = node.sol.x
        f = x[frac] - np.floor(x[frac])
        dist = np.minimum(f, 1.0 - f)
        order = np.argsort(-dist, kind="stable")
        best, best_score, best_kids = None, -1.0, None
        strong = 0
        for k in order:
            j = int(frac[k])
            gains = []
            kids = None
            if min(self.pc_cnt[0, j], self.pc_cnt[1, j]) < reliable and strong < lookahead:
                strong += 1
                kids = []
                for side, (lo, up) in enumerate(self.children(node, j)):
                    if np.any(lo > up):
                        kids.append(None)
                        gains.append(math.inf)
                        continue
                    sol = self.solve(lo, up, node.sol.basis)
                    kids.append(sol)
                    gains.append(self.record(j, side, node.sol.objective, sol, f[k]))
            else:
                gains = [self.estimate(j, 0, f[k]), self.estimate(j, 1, f[k])]
            score = max(min(gains), 1e-9) * max(max(gains), 1e-9)
            if score > best_score:
                best, best_score, best_kids = j, score, kids
        return best, best_kids


def solve_milp(problem, gap_tol=0.0, node_limit=100_000, incumbent=None, method="simplex",
               heuristic_every=25, basis=None, branching="pseudocost", reliable=2, lookahead=8):
    """Branch-and-bound with best-bound node selection.

    With ``branching="pseudocost"`` the branching binary maximises the product
    of the estimated down and up objective losses.  Estimates are running
    averages of observed losses per unit change; a binary with fewer than
    ``reliable`` observations on either side is evaluated by solving both
    children (at most ``lookahead`` such binaries per node, most fractional
    first), and those solves are reused as the node's children.  With
    ``branching="fractional"`` the most fractional binary is taken (ties to
    the lowest column index).  When the chosen binary belongs to a
    "sum <= 1" group, the up branch also fixes the other members to zero.

    :param gap_tol: relative optimality gap at which the search stops.
    :param node_limit: maximum number of LP relaxations solved.
    :param incumbent: optional starting point (primal vector); its binaries are
        rounded, fixed and the LP is re-solved to obtain a valid incumbent.
    :param heuristic_every: run the rounding heuristic at the root and every
        this many nodes (0 disables it).
    :param basis: optional warm-start basis for the root relaxation.
    """
    if gap_tol < 0:
        raise ValueError("gap_tol must be non-negative")
    if branching not in ("pseudocost", "fractional"):
        raise ValueError(f"unknown branching rule {branching!r}")
    start = time.perf_counter()
    s = _Search(problem, method)
    lp = problem.lp
    _, _, _, _, lb0, ub0 = lp.arrays()
    lb0, ub0 = lb0.copy(), ub0.copy()
    if incumbent is not None:
        x0 = np.asarray(incumbent, dtype=float)
        s.offer(lb0, ub0, np.clip(np.round(x0[s.bins]), 0.0, 1.0), None)
    root = s.node(lb0, ub0, basis, 0)
    heap = []
    if root is not None:
        heapq.heappush(heap, root)
        if heuristic_every:
            s.rounding(root.sol, lb0, ub0)
    popped = 0
    status = None
    while heap:
        top = heap[0]
        bound = -s.sign * top.key[0]
        if s.incumbent is not None:
            if not s.better(bound, s.incumbent.objective):
                heap.clear()
                break
            if relative_gap(bound, s.incumbent.objective) <= gap_tol:
                status = MilpStatus.GAP_REACHED
                break
        if s.lp_solves >= node_limit:
            status = MilpStatus.NODE_LIMIT
            break
        node = heapq.heappop(heap)
        popped += 1
        frac, _ = s.fractional(node.sol.x)
        if frac.size == 0:
            s.offer(node.lower, node.upper, np.round(node.sol.x[s.bins]), node.sol.basis)
            continue
        if branching == "fractional":
            xf = node.sol.x[frac]
            score = np.minimum(xf - np.floor(xf), np.ceil(xf) - xf)
            j, kids = int(frac[np.argmax(score)]), None  # ties to the lowest index
        else:
            j, kids = s.choose(node, frac, reliable, lookahead)
        xj = node.sol.x[j]
        for side, (lo, up) in enumerate(s.children(node, j)):
            if np.any(lo > up):
                continue
            if kids is not None:
                child = s.node(lo, up, None, node.depth + 1, sol=kids[side])
            else:
                sol = s.solve(lo, up, node.sol.basis)
                if branching == "pseudocost":
                    s.record(j, side, node.sol.objective, sol, xj - math.floor(xj))
                child = s.node(lo, up, None, node.depth + 1, sol=sol)
            if child is None:
                continue
            cb = child.sol.objective
            if s.incumbent is None or s.better(cb, s.incumbent.objective):
                heapq.heappush(heap, child)
        if heuristic_every and popped % heuristic_every == 0:
            s.rounding(node.sol, node.lower, node.upper)
    elapsed = time.perf_counter() - start
    if s.incumbent is None:
        st = MilpStatus.NODE_LIMIT if status == MilpStatus.NODE_LIMIT else MilpStatus.INFEASIBLE
        bound = -s.sign * heap[0].key[0] if heap else math.nan
        return MilpSolution(st, None, bound, math.inf, s.lp_solves, elapsed)
    inc = s.incumbent.objective
    if heap and status is not None:
        bound = -s.sign * heap[0].key[0]
        bound = bound if s.better(bound, inc) else inc
    else:
        bound = inc
    gap = relative_gap(bound, inc)
    if status is None or gap == 0.0:
        status = MilpStatus.OPTIMAL
    s.incumbent.elapsed = elapsed
    return MilpSolution(status, s.incumbent, bound, gap, s.lp_solves, elapsed)
