"""DER hosting capacity and operating envelopes for unbalanced low-voltage feeders."""
from .assignment import Binaries, Fixed, PhaseAssignment, Scenario, ScenarioKind, assign_phases
from .lindist import build_lin_problem, build_sensitivity_matrices, lindist_solve
from .netmodel import (Direction, LoadProfile, NetworkModel, Phase, build_cigre_lv,
                       build_synthetic_feeder, load_network, load_profile, worst_case_snapshot)
from .powerflow import InjectionSet, check_constraints, compute_vuf, run_power_flow
from .results import Formulation, SolveResult
from .scenarios import compare_scenarios, doe_solve, hc_solve
from .slp import SlpConfig, certify, slp_solve

__version__ = "0.1.0"

__all__ = ["Binaries", "Fixed", "PhaseAssignment", "Scenario", "ScenarioKind", "assign_phases",
           "build_lin_problem", "build_sensitivity_matrices", "lindist_solve", "Direction",
           "LoadProfile", "NetworkModel", "Phase", "build_cigre_lv", "build_synthetic_feeder",
           "load_network", "load_profile", "worst_case_snapshot", "InjectionSet",
           "check_constraints", "compute_vuf", "run_power_flow", "Formulation", "SolveResult",
           "compare_scenarios", "doe_solve", "hc_solve", "SlpConfig", "certify", "slp_solve"]
