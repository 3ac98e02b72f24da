"""Embedded LP and binary-MILP solving."""
from .bnb import solve_milp
from .lpformat import mps_text, write_mps
from .problem import (INF, LinearProgram, LpSolution, LpStatus, MilpProblem, MilpSolution,
                      MilpStatus, Relation, Sense, relative_gap)
from .simplex import Basis, solve_lp

__all__ = ["INF", "Basis", "LinearProgram", "LpSolution", "LpStatus", "MilpProblem",
           "MilpSolution", "MilpStatus", "Relation", "Sense", "relative_gap", "solve_lp",
           "solve_milp", "mps_text", "write_mps"]
