"""Inverter components and their composition.

Internal dynamics of a :class:`DynamicInverter` are written in the frame of
the outer-loop angle ``theta_olc``; the PLL keeps its own frame at
``theta_pll``. Both use the d-axis-aligned rotation ``v_dq = v e^{-jθ}``
(equivalent to the generator convention shifted by π/2), so a voltage
phasor aligned with the frame angle has ``v_q = 0``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import ClassVar

import numpy as np

from .generators import InfeasibleOperatingPoint
from .units import rebase_dataclass, s, y, z


def rotate(theta: float, a: float, b: float) -> tuple[float, float]:
    """Multiply ``a + jb`` by ``e^{jθ}``."""
    c = math.cos(theta)
    sn = math.sin(theta)
    return c * a - sn * b, sn * a + c * b


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LCLFilter:
    lf: float = z(0.08)
    rf: float = z(0.003)
    cf: float = y(0.074)
    lg: float = z(0.2)
    rg: float = z(0.01)

    type_name: ClassVar[str] = "LCL"
    state_names: ClassVar[tuple[str, ...]] = ("icv_d", "icv_q", "vo_d", "vo_q", "io_d", "io_q")
    differential: ClassVar[tuple[bool, ...]] = (True,) * 6

    def __post_init__(self):
        for name in ("lf", "cf", "lg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LCLFilter.{name} must be > 0")

    def eval(self, x, vcnv_d, vcnv_q, vg_d, vg_q, omega, Omega_b):
        icv_d, icv_q, vo_d, vo_q, io_d, io_q = x[0], x[1], x[2], x[3], x[4], x[5]
        kl = Omega_b / self.lf
        kc = Omega_b / self.cf
        kg = Omega_b / self.lg
        return (
            kl * (vcnv_d - vo_d - self.rf * icv_d + omega * self.lf * icv_q),
            kl * (vcnv_q - vo_q - self.rf * icv_q - omega * self.lf * icv_d),
            kc * (icv_d - io_d + omega * self.cf * vo_q),
            kc * (icv_q - io_q - omega * self.cf * vo_d),
            kg * (vo_d - vg_d - self.rg * io_d + omega * self.lg * io_q),
            kg * (vo_q - vg_q - self.rg * io_q - omega * self.lg * io_d),
        )


@dataclass(frozen=True)
class LCFilter:
    """Converter-side inductor and capacitor; the grid-side branch is algebraic."""

    lf: float = z(0.08)
    rf: float = z(0.003)
    cf: float = y(0.074)
    lg: float = z(0.2)
    rg: float = z(0.01)

    type_name: ClassVar[str] = "LC"
    state_names: ClassVar[tuple[str, ...]] = ("icv_d", "icv_q", "vo_d", "vo_q", "io_d", "io_q")
    differential: ClassVar[tuple[bool, ...]] = (True, True, True, True, False, False)

    def __post_init__(self):
        for name in ("lf", "cf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LCFilter.{name} must be > 0")
        if self.lg == 0 and self.rg == 0:
            raise ValueError("LCFilter needs a non-zero grid-side impedance")

    def eval(self, x, vcnv_d, vcnv_q, vg_d, vg_q, omega, Omega_b):
        icv_d, icv_q, vo_d, vo_q, io_d, io_q = x[0], x[1], x[2], x[3], x[4], x[5]
        kl = Omega_b / self.lf
        kc = Omega_b / self.cf
        return (
            kl * (vcnv_d - vo_d - self.rf * icv_d + omega * self.lf * icv_q),
            kl * (vcnv_q - vo_q - self.rf * icv_q - omega * self.lf * icv_d),
            kc * (icv_d - io_d + omega * self.cf * vo_q),
            kc * (icv_q - io_q - omega * self.cf * vo_d),
            # algebraic: 0 = v_o - v_g - (r_g + jω l_g) i_o
            vo_d - vg_d - self.rg * io_d + omega * self.lg * io_q,
            vo_q - vg_q - self.rg * io_q - omega * self.lg * io_d,
        )


# ---------------------------------------------------------------------------
# Converter, DC source
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AverageConverter:
    m_max: float = 10.0

    type_name: ClassVar[str] = "Average"
    state_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        if not self.m_max > 0:
            raise ValueError("AverageConverter.m_max must be > 0")

    def modulation(self, vref_d, vref_q, v_dc):
        """Return ``(m_d, m_q, clamped)``."""
        m_d = vref_d / v_dc
        m_q = vref_q / v_dc
        mag = math.hypot(m_d, m_q)
        if mag > self.m_max:
            k = self.m_max / mag
            return m_d * k, m_q * k, True
        return m_d, m_q, False

    def output(self, m_d, m_q, v_dc):
        return m_d * v_dc, m_q * v_dc


@dataclass(frozen=True)
class FixedDCSource:
    v_dc: float = 1.0

    type_name: ClassVar[str] = "FixedDC"
    state_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        if not self.v_dc > 0:
            raise ValueError("FixedDCSource.v_dc must be > 0")


# ---------------------------------------------------------------------------
# Controls
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InnerLoop:
    """Virtual impedance followed by cascaded voltage and current PI loops."""

    kpv: float = y(0.59)
    kiv: float = y(736.0)
    kffv: float = 0.0
    rv: float = z(0.0)
    lv: float = z(0.2)
    kpc: float = z(1.27)
    kic: float = z(14.3)
    kffi: float = 0.0
    wad: float = 50.0
    kad: float = 0.2

    type_name: ClassVar[str] = "CascadedPI"
    state_names: ClassVar[tuple[str, ...]] = ("xi_d", "xi_q", "gamma_d", "gamma_q", "phi_d", "phi_q")

    def __post_init__(self):
        for name in ("kpv", "kiv", "kffv", "rv", "lv", "kpc", "kic", "kffi", "wad", "kad"):
            if getattr(self, name) < 0:
                raise ValueError(f"InnerLoop.{name} must be >= 0")

    def eval(self, x, v_ref, vo_d, vo_q, icv_d, icv_q, io_d, io_q, omega, cf, lf):
        """Return ``(dx, (vcv_ref_d, vcv_ref_q))`` in the outer-loop frame."""
        xi_d, xi_q, g_d, g_q, phi_d, phi_q = x[0], x[1], x[2], x[3], x[4], x[5]
        vr_d = v_ref - self.rv * io_d + omega * self.lv * io_q
        vr_q = -self.rv * io_q - omega * self.lv * io_d
        ev_d = vr_d - vo_d
        ev_q = vr_q - vo_q
        icr_d = self.kpv * ev_d + self.kiv * xi_d - cf * omega * vo_q + self.kffi * io_d
        icr_q = self.kpv * ev_q + self.kiv * xi_q + cf * omega * vo_d + self.kffi * io_q
        ei_d = icr_d - icv_d
        ei_q = icr_q - icv_q
        vcr_d = (self.kpc * ei_d + self.kic * g_d - omega * lf * icv_q + self.kffv * vo_d
                 - self.kad * (vo_d - phi_d))
        vcr_q = (self.kpc * ei_q + self.kic * g_q + omega * lf * icv_d + self.kffv * vo_q
                 - self.kad * (vo_q - phi_q))
        dx = (ev_d, ev_q, ei_d, ei_q, self.wad * (vo_d - phi_d), self.wad * (vo_q - phi_q))
        return dx, (vcr_d, vcr_q)


GRID_FORMING = "grid_forming"
GRID_FEEDING = "grid_feeding"


@dataclass(frozen=True)
class OuterLoop:
    """Virtual-inertia active power control with reactive voltage droop.

    In ``grid_feeding`` mode the inertia is dropped and ``omega_olc`` becomes
    an algebraic variable fixed by the remaining power balance.
    """

    Ta: float = s(2.0)
    kd: float = s(400.0)
    kw: float = s(20.0)
    kq: float = z(0.2)
    wf: float = 1000.0
    mode: str = GRID_FORMING

    type_name: ClassVar[str] = "VirtualInertia"
    state_names: ClassVar[tuple[str, ...]] = ("theta_olc", "omega_olc", "q_m")

    def __post_init__(self):
        if self.mode not in (GRID_FORMING, GRID_FEEDING):
            raise ValueError(f"OuterLoop.mode must be {GRID_FORMING!r} or {GRID_FEEDING!r}")
        if self.mode == GRID_FORMING and not self.Ta > 0:
            raise ValueError("OuterLoop.Ta must be > 0 in grid-forming mode")
        if self.mode == GRID_FEEDING and not self.kd + self.kw > 0:
            raise ValueError("grid-feeding mode needs kd + kw > 0")
        if not self.wf > 0:
            raise ValueError("OuterLoop.wf must be > 0")

    @property
    def differential(self) -> tuple[bool, ...]:
        return (True, self.mode == GRID_FORMING, True)

    def eval(self, x, p_meas, q_meas, omega_pll, omega_ref, V_ref, P_ref, Q_ref, Omega_b):
        """Return ``(dx, v_ref_inner)``; the ω row is a residual in grid-feeding mode."""
        omega, q_m = x[1], x[2]
        balance = P_ref + self.kw * (omega_ref - omega) - p_meas - self.kd * (omega - omega_pll)
        dw = balance / self.Ta if self.mode == GRID_FORMING else balance
        dx = (Omega_b * (omega - 1.0), dw, self.wf * (q_meas - q_m))
        return dx, V_ref + self.kq * (Q_ref - q_m)


@dataclass(frozen=True)
class PLL:
    """SRF-PLL with a low-pass filter on the measured voltage."""

    w_lp: float = 500.0
    kp_pll: float = 0.084
    ki_pll: float = 4.69

    type_name: ClassVar[str] = "SRF"
    state_names: ClassVar[tuple[str, ...]] = ("vpll_d", "vpll_q", "eps_pll", "theta_pll")

    def __post_init__(self):
        if not self.w_lp > 0:
            raise ValueError("PLL.w_lp must be > 0")

    def eval(self, x, v_d, v_q, Omega_b):
        """``v_d, v_q``: terminal voltage already expressed in the PLL frame.

        Returns ``(dx, omega_pll, locked)``; ``locked`` is False when the
        filtered voltage vanishes and the angle error is undefined.
        """
        vp_d, vp_q, eps = x[0], x[1], x[2]
        locked = math.hypot(vp_d, vp_q) > 1e-9
        err = math.atan2(vp_q, vp_d) if locked else 0.0
        omega_pll = 1.0 + self.kp_pll * err + self.ki_pll * eps
        dx = (self.w_lp * (v_d - vp_d), self.w_lp * (v_q - vp_q), err, Omega_b * (omega_pll - 1.0))
        return dx, omega_pll, locked


FILTERS = {c.type_name: c for c in (LCLFilter, LCFilter)}
CONVERTERS = {AverageConverter.type_name: AverageConverter}
INNER_LOOPS = {InnerLoop.type_name: InnerLoop}
OUTER_LOOPS = {OuterLoop.type_name: OuterLoop, "VSM": OuterLoop}
FREQUENCY_ESTIMATORS = {PLL.type_name: PLL, "PLL": PLL}
DC_SOURCES = {FixedDCSource.type_name: FixedDCSource}


# ---------------------------------------------------------------------------
# Single-component evaluation helpers
# ---------------------------------------------------------------------------


def pll_eval(pll: PLL, x_p, v_o: complex, Omega_b: float):
    """Evaluate the PLL for a terminal voltage given in the network frame."""
    v_d, v_q = rotate(-x_p[3], v_o.real, v_o.imag)
    dx, omega_pll, _ = pll.eval(x_p, v_d, v_q, Omega_b)
    return np.array(dx), omega_pll


def outer_loop_eval(ol: OuterLoop, x_o, p_meas, q_meas, omega_pll, refs: dict, Omega_b: float):
    dx, v_ref = ol.eval(x_o, p_meas, q_meas, omega_pll, refs.get("omega_ref", 1.0), refs["V_ref"],
                        refs["P_ref"], refs.get("Q_ref", 0.0), Omega_b)
    return np.array(dx), x_o[0], v_ref


def inner_loop_eval(il: InnerLoop, x_i, v_ref_inner, meas: dict, omega_olc, cf, lf, v_dc=1.0):
    dx, (vcr_d, vcr_q) = il.eval(x_i, v_ref_inner, meas["vo_d"], meas["vo_q"], meas["icv_d"], meas["icv_q"],
                                 meas["io_d"], meas["io_q"], omega_olc, cf, lf)
    return np.array(dx), (vcr_d / v_dc, vcr_q / v_dc)


def filter_eval(f, x_f, v_cnv: complex, v_grid: complex, omega_sys: float, Omega_b: float):
    """Filter derivatives in a frame where both voltages are given; returns ``(dx, i_o)``."""
    dx = f.eval(x_f, v_cnv.real, v_cnv.imag, v_grid.real, v_grid.imag, omega_sys, Omega_b)
    return np.array(dx), complex(x_f[4], x_f[5])


# ---------------------------------------------------------------------------
# Device
# ---------------------------------------------------------------------------


class InverterPorts:
    __slots__ = ("v_cnv_d", "v_cnv_q", "m_d", "m_q", "v_dc", "omega_olc", "omega_pll", "theta_olc",
                 "theta_pll", "p_meas", "q_meas", "v_ref_inner", "m_clamped", "pll_locked")

    def __init__(self):
        for name in self.__slots__:
            setattr(self, name, 0.0)


@dataclass(frozen=True)
class DynamicInverter:
    name: str
    bus: int
    converter: AverageConverter
    outer: OuterLoop
    inner: InnerLoop
    dc: FixedDCSource
    pll: PLL
    filter: object
    omega_ref: float = 1.0
    V_ref: float = 1.0
    P_ref: float = s(0.0)
    Q_ref: float = s(0.0)
    base_MVA: float = 100.0

    slots: ClassVar[tuple[str, ...]] = ("converter", "outer", "inner", "dc", "pll", "filter")
    references: ClassVar[tuple[str, ...]] = ("omega_ref", "V_ref", "P_ref", "Q_ref")

    def __post_init__(self):
        if not self.base_MVA > 0:
            raise ValueError("base_MVA must be > 0")
        offsets = {}
        k = 0
        for slot in self.slots:
            offsets[slot] = k
            k += len(getattr(self, slot).state_names)
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_n_states", k)

    @property
    def state_names(self) -> tuple[str, ...]:
        names = []
        for slot in self.slots:
            names.extend(getattr(self, slot).state_names)
        return tuple(names)

    @property
    def differential_mask(self) -> tuple[bool, ...]:
        return (*self.outer.differential, *(True,) * 6, *(True,) * 4, *self.filter.differential)

    @property
    def n_states(self) -> int:
        return self._n_states

    def rebased(self, system_MVA: float) -> "DynamicInverter":
        if self.base_MVA == system_MVA:
            return self
        comps = {slot: rebase_dataclass(getattr(self, slot), self.base_MVA, system_MVA) for slot in self.slots}
        dev = rebase_dataclass(replace(self, **comps), self.base_MVA, system_MVA)
        return replace(dev, base_MVA=system_MVA)

    def evaluate(self, x, v_r: float, v_i: float, Omega_b: float, out, ports: InverterPorts | None = None):
        if ports is None:
            ports = InverterPorts()
        # layout: outer(3) inner(6) pll(4) filter(6)
        theta, omega = x[0], x[1]
        xi = x[3:9]
        xp = x[9:13]
        xf = x[13:19]
        vo_d, vo_q, icv_d, icv_q, io_d, io_q = xf[2], xf[3], xf[0], xf[1], xf[4], xf[5]
        ports.theta_olc = theta
        ports.omega_olc = omega
        ports.theta_pll = xp[3]

        # PLL on the capacitor voltage, moved from the olc frame to the pll frame
        vp_d, vp_q = rotate(theta - xp[3], vo_d, vo_q)
        dxp, omega_pll, locked = self.pll.eval(xp, vp_d, vp_q, Omega_b)
        ports.omega_pll = omega_pll
        ports.pll_locked = locked

        p_meas = vo_d * io_d + vo_q * io_q
        q_meas = vo_q * io_d - vo_d * io_q
        ports.p_meas = p_meas
        ports.q_meas = q_meas
        dxo, v_ref = self.outer.eval(x, p_meas, q_meas, omega_pll, self.omega_ref, self.V_ref,
                                     self.P_ref, self.Q_ref, Omega_b)
        ports.v_ref_inner = v_ref

        f = self.filter
        dxi, (vcr_d, vcr_q) = self.inner.eval(xi, v_ref, vo_d, vo_q, icv_d, icv_q, io_d, io_q, omega, f.cf, f.lf)
        v_dc = self.dc.v_dc
        m_d, m_q, clamped = self.converter.modulation(vcr_d, vcr_q, v_dc)
        ports.m_d = m_d
        ports.m_q = m_q
        ports.m_clamped = clamped
        ports.v_dc = v_dc
        vc_d, vc_q = self.converter.output(m_d, m_q, v_dc)
        ports.v_cnv_d = vc_d
        ports.v_cnv_q = vc_q

        vg_d, vg_q = rotate(-theta, v_r, v_i)
        dxf = f.eval(xf, vc_d, vc_q, vg_d, vg_q, omega, Omega_b)
        k = 0
        for block in (dxo, dxi, dxp, dxf):
            for value in block:
                out[k] = value
                k += 1
        return rotate(theta, io_d, io_q)

    def initialize(self, v: complex, s_inj: complex):
        """Back-solve the 19 states at bus voltage ``v`` injecting ``s_inj``.

        ``P_ref`` and ``V_ref`` are overwritten so the outer loop is in
        equilibrium at the operating point.
        """
        f = self.filter
        il = self.inner
        i_o = (s_inj / v).conjugate()
        v_o = v + complex(f.rg, f.lg) * i_o
        i_cv = i_o + 1j * f.cf * v_o
        v_cnv = v_o + complex(f.rf, f.lf) * i_cv
        zv = v_o + complex(il.rv, il.lv) * i_o
        if abs(zv) == 0.0:
            raise InfeasibleOperatingPoint(f"{self.name}: zero voltage reference at the operating point")
        theta = cmath.phase(zv)
        rot = cmath.exp(-1j * theta)
        vo = v_o * rot
        io = i_o * rot
        icv = i_cv * rot
        vc = v_cnv * rot
        p_meas = vo.real * io.real + vo.imag * io.imag
        q_meas = vo.imag * io.real - vo.real * io.imag
        v_ref_inner = abs(zv)
        V_ref = v_ref_inner - self.outer.kq * (self.Q_ref - q_meas)
        P_ref = p_meas - self.outer.kw * (self.omega_ref - 1.0)
        if il.kiv <= 0 or il.kic <= 0:
            raise InfeasibleOperatingPoint(f"{self.name}: integral gains must be > 0 to back-solve the inner loop")
        xi_d = (icv.real + f.cf * vo.imag - il.kffi * io.real) / il.kiv
        xi_q = (icv.imag - f.cf * vo.real - il.kffi * io.imag) / il.kiv
        g_d = (vc.real + f.lf * icv.imag - il.kffv * vo.real) / il.kic
        g_q = (vc.imag - f.lf * icv.real - il.kffv * vo.imag) / il.kic
        m = vc / self.dc.v_dc
        if abs(m) > self.converter.m_max:
            raise InfeasibleOperatingPoint(f"{self.name}: modulation index {abs(m):.3f} exceeds limit")
        theta_pll = cmath.phase(v_o)
        x0 = [
            theta, 1.0, q_meas,
            xi_d, xi_q, g_d, g_q, vo.real, vo.imag,
            abs(v_o), 0.0, 0.0, theta_pll,
            icv.real, icv.imag, vo.real, vo.imag, io.real, io.imag,
        ]
        return np.array(x0, dtype=float), replace(self, P_ref=P_ref, V_ref=V_ref)


def inverter_residual(inv: DynamicInverter, x_local, v_bus: complex, Omega_b: float = 2 * math.pi * 60.0):
    out = np.empty(inv.n_states)
    ir, ii = inv.evaluate(list(map(float, x_local)), v_bus.real, v_bus.imag, Omega_b, out)
    return out, complex(ir, ii)
