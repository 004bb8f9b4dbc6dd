import math
from dataclasses import replace

import numpy as np
import pytest

from lowinertia.network import (build_ybus, dynamic_branch_residual, network_residual, remove_branches)
from lowinertia.system import BranchData, Bus

from conftest import case, operating_point


def test_single_line_ybus():
    Y = build_ybus([BranchData("l", 1, 2, R=0.0, X=0.5)], [1, 2])
    np.testing.assert_allclose(Y, [[-2j, 2j], [2j, -2j]], atol=1e-15)


def test_no_branches_gives_zero_matrix():
    Y = build_ybus([], [Bus(1, "slack"), Bus(2), Bus(3)])
    assert Y.shape == (3, 3)
    assert not Y.any()


def test_extra_shunts_on_diagonal():
    Y = build_ybus([BranchData("l", 1, 2, X=0.5)], [1, 2], extra_shunts={2: 0.3 - 0.1j})
    assert Y[1, 1] == pytest.approx(-2j + 0.3 - 0.1j)


def test_dynamic_branches_skipped_by_default():
    br = BranchData("d", 1, 2, X=0.5, B_from=0.01, B_to=0.01, kind="dynamic")
    assert not build_ybus([br], [1, 2]).any()
    assert build_ybus([br], [1, 2], include_dynamic=True).any()


def test_threebus_ybus_against_elementwise_sum():
    s = case("case1_threebus")
    lines = [replace(br, B_from=0.0, B_to=0.0) for br in s.branches]
    Y = build_ybus(lines, s.buses)
    # oracle: accumulate series admittances entry by entry
    pos = {b.number: k for k, b in enumerate(s.buses)}
    ref = [[0j] * 3 for _ in range(3)]
    for br in lines:
        y = 1 / complex(br.R, br.X)
        f, t = pos[br.from_bus], pos[br.to_bus]
        ref[f][f] += y
        ref[t][t] += y
        ref[f][t] -= y
        ref[t][f] -= y
    np.testing.assert_allclose(Y, np.array(ref), rtol=0, atol=1e-12)
    np.testing.assert_allclose(Y, Y.T, atol=0)
    assert np.max(np.abs(Y.sum(axis=1))) < 1e-12


def test_remove_branches_matches_rebuild():
    s = case("case1_threebus")
    full = build_ybus(s.branches, s.buses)
    tripped = [s.branch("line13")]
    kept = [br for br in s.branches if br.name != "line13"]
    np.testing.assert_allclose(remove_branches(full, tripped, s.buses), build_ybus(kept, s.buses), atol=1e-13)


def test_network_residual_identity():
    rng = np.random.default_rng(7)
    Y = build_ybus(case("case1_threebus").branches, case("case1_threebus").buses)
    v = rng.normal(size=3) + 1j * rng.normal(size=3)
    res = network_residual(v, Y @ v, Y)
    assert res.shape == (6,)
    assert np.max(np.abs(res)) < 1e-14


def test_network_residual_single_bus_load():
    y_load = 0.8 - 0.3j
    v = np.array([0.97 * np.exp(0.1j)])
    assert np.max(np.abs(network_residual(v, y_load * v, np.array([[y_load]])))) < 1e-15


def test_omib_powerflow_satisfies_network_equations():
    op = operating_point("omib")
    model = op.model
    v = model.bus_voltages(op.u0)
    res = network_residual(v, model.injections(op.u0), model._Y_eff)
    assert np.max(np.abs(res)) < 1e-8


DYN = BranchData("d", 1, 2, R=0.01, X=0.1, B_from=0.02, B_to=0.03, kind="dynamic")
OB = 2 * math.pi * 60


def test_dynamic_branch_no_flow_equilibrium():
    v = 1.02 * np.exp(0.3j)
    d = dynamic_branch_residual(0j, v, v, DYN, 1j * DYN.B_from * v, 1j * DYN.B_to * v, OB)
    assert np.max(np.abs(d)) < 1e-12


def test_dynamic_branch_with_flow_equilibrium():
    vf, vt = 1.0 + 0.1j, 0.97 - 0.05j
    il = (vf - vt) / DYN.impedance
    d = dynamic_branch_residual(il, vf, vt, DYN, 1j * DYN.B_from * vf, 1j * DYN.B_to * vt, OB)
    assert np.max(np.abs(d)) < 1e-12


def test_dynamic_branch_voltage_step_response():
    br = replace(DYN, R=0.0)
    v = 1.0 + 0j
    dv = 0.01 + 0.02j
    d = dynamic_branch_residual(0j, v + dv, v, br, 1j * br.B_from * (v + dv), 1j * br.B_to * v, OB)
    expected = OB * dv / br.X
    assert d[0] == pytest.approx(expected.real, rel=1e-12)
    assert d[1] == pytest.approx(expected.imag, rel=1e-12)


def test_zero_impedance_rejected():
    with pytest.raises(ValueError):
        BranchData("z", 1, 2, R=0.0, X=0.0)


def test_dynamic_branch_needs_capacitance():
    with pytest.raises(ValueError):
        BranchData("d", 1, 2, X=0.1, kind="dynamic")
