"""Small hand-built feeders and profiles for the tests."""
import numpy as np

from gridcap.netmodel import LoadProfile, NetworkModel, OperatingLimits, make_branch

V_LL = 400.0
S_BASE = 1e6


def diag_branch(a, b, r_ohm_km, x_ohm_km, length_km, amp_a=400.0):
    """Branch with uncoupled phases (diagonal impedance matrices)."""
    return make_branch(a, b, np.eye(3) * r_ohm_km, np.eye(3) * x_ohm_km, length_km, amp_a,
                       V_LL, S_BASE)


def coupled_branch(a, b, r_ohm_km, x_ohm_km, length_km, amp_a=400.0, mutual=0.3):
    """Branch with mutual coupling ``mutual`` times the self impedance."""
    m = np.full((3, 3), mutual) + np.eye(3) * (1 - mutual)
    return make_branch(a, b, m * r_ohm_km, m * x_ohm_km, length_km, amp_a, V_LL, S_BASE)


def two_node(r=0.3, x=0.08, length=0.2, amp=400.0, limits=None, der=("N1",)):
    net = NetworkModel(("N0", "N1"), (diag_branch("N0", "N1", r, x, length, amp),), "N0",
                       V_LL, S_BASE, limits or OperatingLimits(), der)
    return net


def four_node(amp=300.0, coupled=True):
    """``N0 - N1 - N2`` with a spur ``N1 - N3``; DER at N2 and N3."""
    mk = coupled_branch if coupled else diag_branch
    brs = (mk("N0", "N1", 0.2, 0.08, 0.15, amp), mk("N1", "N2", 0.6, 0.09, 0.12, amp),
           mk("N1", "N3", 0.5, 0.09, 0.10, amp))
    return NetworkModel(("N0", "N1", "N2", "N3"), brs, "N0", V_LL, S_BASE, OperatingLimits(),
                        ("N2", "N3"))


def chain(n, r=0.25, x=0.08, length=0.05, amp=400.0, der=None, coupled=False):
    nodes = tuple(f"N{k}" for k in range(n))
    mk = coupled_branch if coupled else diag_branch
    brs = tuple(mk(nodes[k], nodes[k + 1], r, x, length, amp) for k in range(n - 1))
    der = nodes[1:] if der is None else der
    return NetworkModel(nodes, brs, "N0", V_LL, S_BASE, OperatingLimits(), der)


def profile(nodes, p_kw, q_ratio=0.3):
    """Profile from an array ``(len(nodes), 3, T)`` of kW; reactive power is ``q_ratio * p``."""
    p = np.asarray(p_kw, dtype=float)
    return LoadProfile(tuple(nodes), p, p * q_ratio, S_BASE)


def flat_profile(nodes, kw_per_phase, horizon=1, q_ratio=0.3):
    p = np.full((len(nodes), 3, horizon), float(kw_per_phase))
    return profile(nodes, p, q_ratio)
