import cmath
import math

import numpy as np
import pytest

from lowinertia import find_equilibrium, initialize, solve_powerflow
from lowinertia.generators import Classical, DynamicGenerator, SingleMass, machine_eval, ri_to_dq
from lowinertia.initialization import EquilibriumError, PowerFlowError, initialize_device
from lowinertia.system import system_from_dict

from conftest import case, operating_point, two_bus_doc


def test_flat_profile_without_injections():
    doc = two_bus_doc()
    doc["static_injections"][1]["P"] = 0.0
    doc["buses"][0]["V"] = 1.03
    pf = solve_powerflow(system_from_dict(doc))
    np.testing.assert_allclose(pf.V_mag, 1.03, atol=1e-12)
    np.testing.assert_allclose(pf.V_angle, 0.0, atol=1e-12)


def test_two_bus_closed_form():
    # lossless line, unity power factor load: Q balance gives V2 = cos(theta),
    # P balance gives sin(2 theta) = 2 X P = 0.5, so theta = 15 degrees
    pf = solve_powerflow(system_from_dict(two_bus_doc()))
    assert pf.mismatch < 1e-10
    assert pf.V_mag[1] == pytest.approx(math.cos(math.radians(15)), abs=1e-10)
    assert pf.V_angle[1] == pytest.approx(-math.radians(15), abs=1e-10)
    assert pf.P_inj[0] == pytest.approx(0.5, abs=1e-10)


def test_threebus_converges():
    s = case("case1_threebus")
    pf = solve_powerflow(s)
    assert pf.mismatch < 1e-10
    assert pf.iterations <= 10
    np.testing.assert_allclose(pf.V_mag, [b.voltage_magnitude for b in s.buses], atol=1e-12)
    # the slack covers the loads net of the two generator dispatches and the losses
    assert pf.P_inj[0] + pf.P_inj[1] + pf.P_inj[2] > 0
    assert pf.P_inj[1] == pytest.approx(1.0 - 1.5, abs=1e-10)


def test_overloaded_line_fails():
    doc = two_bus_doc()
    doc["static_injections"][1]["P"] = 5.0
    with pytest.raises(PowerFlowError):
        solve_powerflow(system_from_dict(doc))


def test_classical_backsolve_phasor():
    gen = DynamicGenerator("g", 2, Classical(R=0.01, Xd_p=0.3), SingleMass(H=3.0))
    v = 0.98 * cmath.exp(0.2j)
    s_inj = 0.7 + 0.2j
    x0, new = initialize_device(gen, v, s_inj)
    i = (s_inj / v).conjugate()
    e = v + complex(0.01, 0.3) * i
    assert x0[0] == pytest.approx(cmath.phase(e), abs=1e-14)
    assert x0[1] == 1.0
    assert new.machine.eq_p == pytest.approx(abs(e), abs=1e-14)
    # plugging the back-solved point into the machine reproduces the current
    vd, vq = ri_to_dq(x0[0], v.real, v.imag)
    _, (i_d, i_q), tau_e = machine_eval(new.machine, (), (vd, vq), 0.0)
    id_ref, iq_ref = ri_to_dq(x0[0], i.real, i.imag)
    assert (i_d, i_q) == pytest.approx((id_ref, iq_ref), abs=1e-12)
    # the mechanical torque covers the electrical power plus stator loss
    assert new.P_ref == pytest.approx(0.7 + 0.01 * abs(i) ** 2, abs=1e-12)
    assert tau_e == pytest.approx(new.P_ref, abs=1e-12)


def test_initialization_reports_adjusted_references():
    op = operating_point("omib")
    # the scheduled bus voltage already yields eq_p = 0.7087, so only the unused field voltage moves
    assert op.system.device("OMIB_Gen").machine.eq_p == pytest.approx(0.7087, abs=1e-12)
    assert set(op.report["OMIB_Gen"]) == {"avr.Vf"}
    assert op.report["inf_bus"]["V_mag"]["initialized"] > 1.0
    gen2 = operating_point("case1_threebus").report["gen2"]
    assert set(gen2) == {"V_ref"}
    assert gen2["V_ref"]["initialized"] > gen2["V_ref"]["given"]


@pytest.mark.parametrize("name", ["omib", "case1_threebus", "case2_vsm_step", "case3_multimass",
                                  "case4_vsm_machine_dynlines"])
def test_initial_residual(name):
    op = operating_point(name)
    assert op.residual_norm < 1e-9
    assert np.max(np.abs(op.model.rhs(0.0, op.u0))) < 1e-9


def test_exact_guess_returns_in_one_iteration():
    op = operating_point("case1_threebus")
    u, info = find_equilibrium(op.model, op.u0)
    assert info.iterations == 1
    np.testing.assert_array_equal(u, op.u0)


def test_perturbed_guess_returns_to_equilibrium():
    for name in ("case1_threebus", "case2_vsm_step"):
        op = operating_point(name)
        u, info = find_equilibrium(op.model, op.u0 + 1e-3, tol=1e-11)
        assert np.max(np.abs(u - op.u0)) < 1e-9, name
        assert info.residual_norm < 1e-11


def test_infeasible_dispatch_has_no_equilibrium():
    op = operating_point("omib")
    model = op.model.copy()
    model.set_reference("OMIB_Gen", "P_ref", 5.0)   # above the maximum transfer eq_p*E/X ~ 1.77
    with pytest.raises(EquilibriumError):
        find_equilibrium(model, op.u0)


def test_initialize_does_not_mutate_input():
    s = case("omib")
    before = s.device("OMIB_Gen")
    initialize(s)
    assert s.device("OMIB_Gen") is before
