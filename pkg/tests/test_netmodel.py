import json

import numpy as np
import pytest

from gridcap.errors import ParseError, ValidationError
from gridcap.netmodel import (Direction, LoadProfile, NetworkModel, Phase, build_cigre_lv,
                              build_synthetic_feeder, load_network, load_profile, make_branch,
                              save_network, save_profile, sequence_to_phase,
                              worst_case_snapshot)

from feeders import S_BASE, V_LL, chain, diag_branch, flat_profile


def test_cigre_shape(cigre):
    net, prof = cigre
    assert len(net.nodes) == 18 and len(net.branches) == 17
    assert net.slack == "R1"
    assert set(net.der_nodes) == {"R11", "R15", "R16", "R17", "R18"}
    assert prof.horizon == 96


def test_synthetic_shape(synthetic):
    net, prof = synthetic
    assert len(net.nodes) == 64 and len(net.branches) == 63
    assert prof.horizon == 96
    assert set(prof.nodes) == set(net.der_nodes)


def test_builders_are_deterministic():
    a, pa = build_synthetic_feeder(seed=3)
    b, pb = build_synthetic_feeder(seed=3)
    assert a.to_dict() == b.to_dict() and pa.same_as(pb)
    c, pc = build_synthetic_feeder(seed=4)
    assert not pa.same_as(pc)


def test_sequence_to_phase_diagonalises():
    z1, z0 = 0.2 + 0.1j, 0.7 + 0.4j
    z = sequence_to_phase(z1, z0)
    a = np.exp(2j * np.pi / 3)
    f = np.array([[1, 1, 1], [1, a ** 2, a], [1, a, a ** 2]])
    zs = np.linalg.inv(f) @ z @ f
    assert np.allclose(np.diag(zs), [z0, z1, z1])
    assert np.allclose(zs - np.diag(np.diag(zs)), 0.0)


def test_per_unit_conversion():
    br = make_branch("a", "b", np.eye(3) * 0.4, np.eye(3) * 0.1, 0.5, 200.0, V_LL, S_BASE)
    z_base = (V_LL / np.sqrt(3)) ** 2 / S_BASE
    assert br.r[0, 0] == pytest.approx(0.2 / z_base)
    assert br.ampacity == pytest.approx(200.0 * (V_LL / np.sqrt(3)) / S_BASE)


def test_network_round_trip(tmp_path, cigre):
    net, prof = cigre
    save_network(net, tmp_path / "n.json")
    save_profile(prof, tmp_path / "p.csv")
    net2 = load_network(tmp_path / "n.json")
    prof2 = load_profile(tmp_path / "p.csv", network=net2)
    assert net2.to_dict() == net.to_dict()
    assert prof2.same_as(prof)
    for b1, b2 in zip(net.branches, net2.branches):
        assert np.array_equal(b1.r, b2.r) and np.array_equal(b1.x, b2.x)


def test_branch_orientation_follows_slack():
    brs = (diag_branch("N1", "N0", 0.2, 0.1, 0.1), diag_branch("N2", "N1", 0.2, 0.1, 0.1))
    net = NetworkModel(("N0", "N1", "N2"), brs, "N0")
    assert [(b.from_node, b.to_node) for b in net.branches] == [("N0", "N1"), ("N1", "N2")]


def test_cycle_is_rejected():
    brs = (diag_branch("N0", "N1", 0.2, 0.1, 0.1), diag_branch("N1", "N2", 0.2, 0.1, 0.1),
           diag_branch("N2", "N0", 0.2, 0.1, 0.1))
    with pytest.raises(ValidationError):
        NetworkModel(("N0", "N1", "N2"), brs, "N0")


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_network(p)
    p.write_text(json.dumps({"nodes": []}))
    with pytest.raises(ParseError):
        load_network(p)


def test_profile_header_checked(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("node,phase,p_kw\nN1,A,1\n")
    with pytest.raises(ParseError):
        load_profile(p)


def test_profile_unknown_node():
    net = chain(3)
    prof = flat_profile(("N9",), 1.0)
    with pytest.raises(ValidationError):
        prof.check_against(net)


def test_worst_case_snapshot_per_phase():
    p = np.zeros((1, 3, 4))
    p[0, 0] = [5, 1, 7, 3]
    p[0, 1] = [2, 8, 4, 6]
    p[0, 2] = [9, 9, 1, 1]
    prof = LoadProfile(("N1",), p, p * 0.1, S_BASE)
    exp = worst_case_snapshot(prof, Direction.EXPORT)
    imp = worst_case_snapshot(prof, "import")
    assert exp.p_kw[0, :, 0].tolist() == [1, 2, 1]
    assert imp.p_kw[0, :, 0].tolist() == [7, 8, 9]
    # reactive power is taken at the same period as the active extremum
    assert np.allclose(imp.q_kvar, imp.p_kw * 0.1)


def test_phase_parse():
    assert Phase.parse("b") is Phase.B
    with pytest.raises(ParseError):
        Phase.parse("D")
