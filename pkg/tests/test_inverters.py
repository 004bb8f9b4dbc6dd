import math
from dataclasses import replace

import numpy as np
import pytest

from lowinertia.inverters import (GRID_FEEDING, LCFilter, LCLFilter, PLL, DynamicInverter, InnerLoop, OuterLoop,
                                  filter_eval, inner_loop_eval, inverter_residual, outer_loop_eval, pll_eval)

from conftest import operating_point

OB = 2 * math.pi * 50


def test_pll_locked():
    pll = PLL()
    v = 1.02 * np.exp(0.4j)
    dx, w = pll_eval(pll, (1.02, 0.0, 0.0, 0.4), v, OB)
    assert w == 1.0
    assert np.max(np.abs(dx)) < 1e-12


def test_pll_leading_voltage_speeds_up():
    dx, w = pll_eval(PLL(), (1.0, 0.05, 0.0, 0.0), 1.0 * np.exp(0.05j), OB)
    assert w > 1.0
    assert dx[2] > 0


def test_pll_small_angle_lock_rate():
    pll = PLL()
    rates = []
    for a in (1e-5, 2e-5):
        x = (math.cos(a), math.sin(a), 0.0, 0.0)
        dx, _ = pll_eval(pll, x, np.exp(1j * a), OB)
        rates.append(dx[3])
    slope = (rates[1] - rates[0]) / 1e-5
    assert slope == pytest.approx(OB * pll.kp_pll, rel=1e-6)


REFS = {"omega_ref": 1.0, "V_ref": 1.0, "P_ref": 0.5, "Q_ref": 0.0}


def test_outer_loop_equilibrium():
    ol = OuterLoop()
    dx, theta, v_ref = outer_loop_eval(ol, (0.3, 1.0, 0.1), 0.5, 0.1, 1.0, REFS, OB)
    assert np.all(dx == 0.0)
    assert theta == 0.3
    assert v_ref == pytest.approx(1.0 + ol.kq * (0.0 - 0.1))


def test_outer_loop_power_step_initial_acceleration():
    ol = OuterLoop(Ta=2.0)
    dx, _, _ = outer_loop_eval(ol, (0.3, 1.0, 0.0), 0.5, 0.0, 1.0, {**REFS, "P_ref": 0.7}, OB)
    assert dx[1] == pytest.approx(0.2 / 2.0, rel=1e-12)


def test_outer_loop_pure_inertia_ramp():
    ol = OuterLoop(Ta=2.0, kd=0.0, kw=0.0)
    for w in (1.0, 1.01, 0.97):
        dx, _, _ = outer_loop_eval(ol, (0.0, w, 0.0), 0.4, 0.0, 1.0, REFS, OB)
        assert dx[1] == pytest.approx(0.1 / 2.0, rel=1e-12)


def test_grid_feeding_makes_omega_algebraic():
    ol = OuterLoop(mode=GRID_FEEDING)
    assert ol.differential == (True, False, True)
    with pytest.raises(ValueError):
        OuterLoop(mode="droopy")


MEAS = {"vo_d": 1.0, "vo_q": 0.0, "icv_d": 0.5, "icv_q": 0.074, "io_d": 0.5, "io_q": 0.0}


def test_inner_loop_identity_virtual_impedance():
    il = InnerLoop(rv=0.0, lv=0.0, kad=0.0)
    x = (0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    dx, _ = inner_loop_eval(il, x, 1.0, MEAS, 1.0, cf=0.074, lf=0.08)
    # voltage error is exactly v_ref_inner - v_o
    assert dx[0] == pytest.approx(0.0, abs=1e-15)
    dx, _ = inner_loop_eval(il, x, 1.1, MEAS, 1.0, cf=0.074, lf=0.08)
    assert dx[0] == pytest.approx(0.1, rel=1e-12)


def test_inner_loop_without_active_damping():
    il = InnerLoop(kad=0.0)
    x = (0.01, 0.0, 0.02, 0.0, 0.3, 0.1)
    _, m1 = inner_loop_eval(il, x, 1.0, MEAS, 1.0, cf=0.074, lf=0.08)
    dx, m2 = inner_loop_eval(il, (*x[:4], 0.9, -0.2), 1.0, MEAS, 1.0, cf=0.074, lf=0.08)
    assert m1 == m2
    assert dx[4] == pytest.approx(il.wad * (1.0 - 0.9))


def test_inner_loop_at_backsolved_integrators():
    op = operating_point("case2_vsm_step")
    inv = op.system.device("VSM")
    x = op.u0[op.model.index.slice("VSM")]
    f = inv.filter
    meas = dict(zip(("icv_d", "icv_q", "vo_d", "vo_q", "io_d", "io_q"), x[13:19]))
    v_ref = inv.V_ref + inv.outer.kq * (inv.Q_ref - x[2])
    dx, (m_d, m_q) = inner_loop_eval(inv.inner, x[3:9], v_ref, meas, 1.0, f.cf, f.lf, inv.dc.v_dc)
    assert np.max(np.abs(dx)) < 1e-9
    # converter voltage from the filter equilibrium v_cv = v_o + (r_f + j l_f) i_cv
    v_cv = complex(meas["vo_d"], meas["vo_q"]) + complex(f.rf, f.lf) * complex(meas["icv_d"], meas["icv_q"])
    assert abs(complex(m_d, m_q) * inv.dc.v_dc - v_cv) < 1e-9


@pytest.mark.parametrize("cls", [LCLFilter, LCFilter])
def test_filter_no_current(cls):
    f = cls()
    v = 0.98 + 0.1j
    dx, i_o = filter_eval(f, (0, 0, v.real, v.imag, 0, 0), v, v, 0.0, OB)
    assert np.all(dx == 0.0)
    assert i_o == 0


def test_filter_dc_resistive_steady_state():
    f = LCLFilter()
    v_cnv, v_grid = 1.0, 0.99
    i = (v_cnv - v_grid) / (f.rf + f.rg)
    v_o = v_cnv - f.rf * i
    dx, _ = filter_eval(f, (i, 0, v_o, 0, i, 0), complex(v_cnv), complex(v_grid), 0.0, OB)
    assert np.max(np.abs(dx)) < 1e-10


def test_vsm_has_nineteen_states():
    inv = operating_point("case2_vsm_step").system.device("VSM")
    assert isinstance(inv, DynamicInverter)
    assert inv.n_states == 19
    assert len(set(inv.state_names)) == 19


def test_vsm_at_initialized_equilibrium():
    op = operating_point("case2_vsm_step")
    inv = op.system.device("VSM")
    x = op.u0[op.model.index.slice("VSM")]
    dx, i_inj = inverter_residual(inv, x, op.powerflow.V[1], OB)
    assert np.max(np.abs(dx)) < 1e-9
    s = op.powerflow.V[1] * np.conj(i_inj)
    assert s.real == pytest.approx(0.5, abs=1e-9)


def test_vsm_dispatch_absorbed_into_references():
    op = operating_point("case2_vsm_step")
    inv = op.system.device("VSM")
    # P_ref is measured at the filter capacitor, so it includes the grid-side resistive loss
    x = op.u0[op.model.index.slice("VSM")]
    loss = inv.filter.rg * (x[17] ** 2 + x[18] ** 2)
    assert inv.P_ref == pytest.approx(0.5 + loss, abs=1e-9)


def test_zero_injection_inverter():
    inv = operating_point("case2_vsm_step").system.device("VSM")
    v = 1.01 * np.exp(0.2j)
    x, new = inv.initialize(v, 0j)
    assert np.all(x[17:19] == 0.0)
    assert x[15] ** 2 + x[16] ** 2 == pytest.approx(abs(v) ** 2)
    dx, i_inj = inverter_residual(new, x, v, OB)
    assert np.max(np.abs(dx)) < 1e-9
    assert abs(i_inj) < 1e-12


def test_modulation_scaling_invariance():
    op = operating_point("case2_vsm_step")
    inv = op.system.device("VSM")
    x = op.u0[op.model.index.slice("VSM")].copy()
    x[13] += 0.01   # off equilibrium so the filter derivatives are non-trivial
    v = op.powerflow.V[1]
    a, _ = inverter_residual(inv, x, v, OB)
    doubled = replace(inv, dc=replace(inv.dc, v_dc=2 * inv.dc.v_dc))
    b, _ = inverter_residual(doubled, x, v, OB)
    np.testing.assert_allclose(a[13:], b[13:], rtol=1e-13, atol=1e-12)


def test_vsm_angle_periodicity():
    op = operating_point("case2_vsm_step")
    inv = op.system.device("VSM")
    x = op.u0[op.model.index.slice("VSM")].copy()
    v = op.powerflow.V[1] * 0.99
    a = inverter_residual(inv, x, v, OB)
    x[0] += 2 * math.pi
    b = inverter_residual(inv, x, v, OB)
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)
    assert abs(a[1] - b[1]) < 1e-12
