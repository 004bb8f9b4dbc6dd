"""Synchronous generator components and their composition.

A :class:`DynamicGenerator` holds one component per slot (machine, shaft,
AVR, prime mover, PSS). Components are immutable parameter records with an
``eval`` method; states are passed in as sequences of floats and
derivatives are returned as tuples, so the same objects can be shared by
concurrent simulations.

Rotor frame convention (used everywhere in this module)::

    [v_d]   [ sin δ  -cos δ] [v_R]
    [v_q] = [ cos δ   sin δ] [v_I]

i.e. ``v_q - j v_d = v e^{-jδ}``; the q axis sits at angle δ from the
network real axis. The matrix is orthogonal, so currents map back with
its transpose.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace
from typing import ClassVar, Sequence

import numpy as np

from .units import rebase_dataclass, s, z


class InfeasibleOperatingPoint(ValueError):
    """Raised when a device cannot be back-solved to the requested operating point."""


def ri_to_dq(delta: float, v_r: float, v_i: float) -> tuple[float, float]:
    sd = math.sin(delta)
    cd = math.cos(delta)
    return sd * v_r - cd * v_i, cd * v_r + sd * v_i


def dq_to_ri(delta: float, v_d: float, v_q: float) -> tuple[float, float]:
    sd = math.sin(delta)
    cd = math.cos(delta)
    return sd * v_d + cd * v_q, -cd * v_d + sd * v_q


def _require_positive(obj, *names):
    for name in names:
        value = getattr(obj, name)
        if not value > 0:
            raise ValueError(f"{type(obj).__name__}.{name} must be > 0, got {value!r}")


# ---------------------------------------------------------------------------
# Machines
# ---------------------------------------------------------------------------


def _solve_stator(R: float, Xd: float, Xq: float, ed: float, eq: float, v_d: float, v_q: float):
    # v_d = ed - R i_d + Xq i_q ;  v_q = eq - R i_q - Xd i_d
    det = R * R + Xd * Xq
    if det == 0.0:
        raise ZeroDivisionError("singular stator equations (R^2 + Xd*Xq = 0)")
    a = ed - v_d
    b = eq - v_q
    i_d = (R * a + Xq * b) / det
    i_q = (-Xd * a + R * b) / det
    return i_d, i_q


@dataclass(frozen=True)
class Classical:
    """Voltage behind transient reactance with constant ``eq_p`` (no states)."""

    R: float = z()
    Xd_p: float = z()
    eq_p: float = 1.0

    type_name: ClassVar[str] = "Classical"
    state_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        _require_positive(self, "Xd_p")
        if self.R < 0:
            raise ValueError("Classical.R must be >= 0")

    def eval(self, x, v_d, v_q, V_f):
        i_d, i_q = _solve_stator(self.R, self.Xd_p, self.Xd_p, 0.0, self.eq_p, v_d, v_q)
        return (), i_d, i_q, self.eq_p * i_q

    def backsolve(self, v: complex, i: complex):
        e = v + complex(self.R, self.Xd_p) * i
        delta = cmath.phase(e)
        # the field voltage is not used by this model; report the EMF magnitude
        return delta, (), abs(e), replace(self, eq_p=abs(e))


@dataclass(frozen=True)
class OneDOneQ:
    """Fourth-order transient model with one d- and one q-axis rotor circuit."""

    R: float = z()
    Xd: float = z()
    Xq: float = z()
    Xd_p: float = z()
    Xq_p: float = z()
    Td0_p: float = 1.0
    Tq0_p: float = 1.0

    type_name: ClassVar[str] = "OneDOneQ"
    state_names: ClassVar[tuple[str, ...]] = ("eq_p", "ed_p")

    def __post_init__(self):
        _require_positive(self, "Xd_p", "Xq_p", "Td0_p", "Tq0_p")
        if self.Xd < self.Xd_p or self.Xq < self.Xq_p:
            raise ValueError("OneDOneQ requires Xd >= Xd_p and Xq >= Xq_p")

    def eval(self, x, v_d, v_q, V_f):
        eq_p, ed_p = x[0], x[1]
        i_d, i_q = _solve_stator(self.R, self.Xd_p, self.Xq_p, ed_p, eq_p, v_d, v_q)
        deq = (-eq_p - (self.Xd - self.Xd_p) * i_d + V_f) / self.Td0_p
        ded = (-ed_p + (self.Xq - self.Xq_p) * i_q) / self.Tq0_p
        tau_e = ed_p * i_d + eq_p * i_q + (self.Xq_p - self.Xd_p) * i_d * i_q
        return (deq, ded), i_d, i_q, tau_e

    def backsolve(self, v: complex, i: complex):
        delta, i_d, i_q, v_d, v_q = _q_axis_locate(self.R, self.Xq, v, i)
        ed_p = (self.Xq - self.Xq_p) * i_q
        eq_p = v_q + self.R * i_q + self.Xd_p * i_d
        V_f = eq_p + (self.Xd - self.Xd_p) * i_d
        return delta, (eq_p, ed_p), V_f, self


def _q_axis_locate(R, Xq, v, i):
    e = v + complex(R, Xq) * i
    delta = cmath.phase(e)
    v_d, v_q = ri_to_dq(delta, v.real, v.imag)
    i_d, i_q = ri_to_dq(delta, i.real, i.imag)
    return delta, i_d, i_q, v_d, v_q


@dataclass(frozen=True)
class MarconatoVI:
    """Sixth-order model with transient and subtransient EMFs.

    ``gamma_d``/``gamma_q`` default to the usual coupling coefficients
    ``Td0_pp*Xd_pp/(Td0_p*Xd_p) * (Xd - Xd_p)``; pass explicit values to
    override them.
    """

    R: float = z()
    Xd: float = z()
    Xq: float = z()
    Xd_p: float = z()
    Xq_p: float = z()
    Xd_pp: float = z()
    Xq_pp: float = z()
    Td0_p: float = 1.0
    Tq0_p: float = 1.0
    Td0_pp: float = 0.05
    Tq0_pp: float = 0.05
    T_AA: float = 0.0
    gamma_d: float | None = z(None)
    gamma_q: float | None = z(None)

    type_name: ClassVar[str] = "MarconatoVI"
    state_names: ClassVar[tuple[str, ...]] = ("eq_p", "ed_p", "eq_pp", "ed_pp")

    def __post_init__(self):
        _require_positive(self, "Xd_pp", "Xq_pp", "Td0_p", "Tq0_p", "Td0_pp", "Tq0_pp")
        if not (self.Xd >= self.Xd_p > self.Xd_pp and self.Xq >= self.Xq_p > self.Xq_pp):
            raise ValueError(f"{self.type_name} requires Xd >= Xd_p > Xd_pp > 0 (same for q axis)")
        if self.T_AA < 0:
            raise ValueError("T_AA must be >= 0")

    @property
    def gd(self) -> float:
        if self.gamma_d is not None:
            return self.gamma_d
        return self.Td0_pp * self.Xd_pp / (self.Td0_p * self.Xd_p) * (self.Xd - self.Xd_p)

    @property
    def gq(self) -> float:
        if self.gamma_q is not None:
            return self.gamma_q
        return self.Tq0_pp * self.Xq_pp / (self.Tq0_p * self.Xq_p) * (self.Xq - self.Xq_p)

    def eval(self, x, v_d, v_q, V_f):
        eq_p, ed_p, eq_pp, ed_pp = x[0], x[1], x[2], x[3]
        gd = self.gd
        gq = self.gq
        a = self.T_AA / self.Td0_p
        i_d, i_q = _solve_stator(self.R, self.Xd_pp, self.Xq_pp, ed_pp, eq_pp, v_d, v_q)
        deq = (-eq_p - (self.Xd - self.Xd_p - gd) * i_d + (1.0 - a) * V_f) / self.Td0_p
        ded = (-ed_p + (self.Xq - self.Xq_p - gq) * i_q) / self.Tq0_p
        deqq = (-eq_pp + eq_p - (self.Xd_p - self.Xd_pp + gd) * i_d + a * V_f) / self.Td0_pp
        dedd = (-ed_pp + ed_p + (self.Xq_p - self.Xq_pp + gq) * i_q) / self.Tq0_pp
        tau_e = ed_pp * i_d + eq_pp * i_q + (self.Xq_pp - self.Xd_pp) * i_d * i_q
        return (deq, ded, deqq, dedd), i_d, i_q, tau_e

    def backsolve(self, v: complex, i: complex):
        delta, i_d, i_q, v_d, v_q = _q_axis_locate(self.R, self.Xq, v, i)
        gd = self.gd
        gq = self.gq
        ed_p = (self.Xq - self.Xq_p - gq) * i_q
        ed_pp = v_d + self.R * i_d - self.Xq_pp * i_q
        eq_pp = v_q + self.R * i_q + self.Xd_pp * i_d
        V_f = eq_pp + (self.Xd - self.Xd_pp) * i_d
        eq_p = eq_pp + (self.Xd_p - self.Xd_pp + gd) * i_d - self.T_AA / self.Td0_p * V_f
        return delta, (eq_p, ed_p, eq_pp, ed_pp), V_f, self


@dataclass(frozen=True)
class AndersonFouadVI(MarconatoVI):
    """Marconato structure with ``T_AA = 0`` and no coupling coefficients."""

    type_name: ClassVar[str] = "AndersonFouadVI"

    def __post_init__(self):
        if self.T_AA != 0.0 or (self.gamma_d not in (None, 0.0)) or (self.gamma_q not in (None, 0.0)):
            raise ValueError("AndersonFouadVI does not accept T_AA or gamma parameters")
        object.__setattr__(self, "gamma_d", 0.0)
        object.__setattr__(self, "gamma_q", 0.0)
        super().__post_init__()


# ---------------------------------------------------------------------------
# Shafts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingleMass:
    H: float = s()
    D: float = s(0.0)

    type_name: ClassVar[str] = "SingleMass"
    state_names: ClassVar[tuple[str, ...]] = ("delta", "omega")

    def __post_init__(self):
        _require_positive(self, "H")

    def eval(self, x, tau_m, tau_e, Omega_b):
        omega = x[1]
        return (
            Omega_b * (omega - 1.0),
            (tau_m - tau_e - self.D * (omega - 1.0)) / (2.0 * self.H),
        )

    def backsolve(self, delta, tau_e):
        return (delta, 1.0), tau_e


@dataclass(frozen=True)
class FiveMass:
    """Rotor, high/intermediate/low pressure turbines and exciter on springs.

    Masses are chained HP - IP - LP - rotor - exciter. The rotor mass carries
    the electrical torque and the machine's rotor angle; the turbine masses
    share the mechanical torque by the fractions ``F_hp``, ``F_ip``, ``F_lp``.
    """

    H: float = s()
    H_hp: float = s()
    H_ip: float = s()
    H_lp: float = s()
    H_ex: float = s()
    D: float = s(0.0)
    D_hp: float = s(0.0)
    D_ip: float = s(0.0)
    D_lp: float = s(0.0)
    D_ex: float = s(0.0)
    D_hp_ip: float = s(0.0)
    D_ip_lp: float = s(0.0)
    D_lp_r: float = s(0.0)
    D_r_ex: float = s(0.0)
    K_hp_ip: float = s(50.0)
    K_ip_lp: float = s(50.0)
    K_lp_r: float = s(50.0)
    K_r_ex: float = s(50.0)
    F_hp: float = 0.3
    F_ip: float = 0.3
    F_lp: float = 0.4

    type_name: ClassVar[str] = "FiveMass"
    state_names: ClassVar[tuple[str, ...]] = (
        "delta", "omega",
        "delta_hp", "omega_hp",
        "delta_ip", "omega_ip",
        "delta_lp", "omega_lp",
        "delta_ex", "omega_ex",
    )

    def __post_init__(self):
        _require_positive(self, "H", "H_hp", "H_ip", "H_lp", "H_ex", "K_hp_ip", "K_ip_lp", "K_lp_r", "K_r_ex")
        if abs(self.F_hp + self.F_ip + self.F_lp - 1.0) > 1e-9:
            raise ValueError("FiveMass torque fractions must sum to 1")

    def eval(self, x, tau_m, tau_e, Omega_b):
        d, w, d_hp, w_hp, d_ip, w_ip, d_lp, w_lp, d_ex, w_ex = x[:10]
        t_hp = (self.F_hp * tau_m - self.D_hp * (w_hp - 1.0) - self.D_hp_ip * (w_hp - w_ip)
                + self.K_hp_ip * (d_ip - d_hp))
        t_ip = (self.F_ip * tau_m - self.D_ip * (w_ip - 1.0) - self.D_hp_ip * (w_ip - w_hp)
                - self.D_ip_lp * (w_ip - w_lp) + self.K_hp_ip * (d_hp - d_ip) + self.K_ip_lp * (d_lp - d_ip))
        t_lp = (self.F_lp * tau_m - self.D_lp * (w_lp - 1.0) - self.D_ip_lp * (w_lp - w_ip)
                - self.D_lp_r * (w_lp - w) + self.K_ip_lp * (d_ip - d_lp) + self.K_lp_r * (d - d_lp))
        t_r = (-tau_e - self.D * (w - 1.0) - self.D_lp_r * (w - w_lp) - self.D_r_ex * (w - w_ex)
               + self.K_lp_r * (d_lp - d) + self.K_r_ex * (d_ex - d))
        t_ex = -self.D_ex * (w_ex - 1.0) - self.D_r_ex * (w_ex - w) + self.K_r_ex * (d - d_ex)
        return (
            Omega_b * (w - 1.0), t_r / (2.0 * self.H),
            Omega_b * (w_hp - 1.0), t_hp / (2.0 * self.H_hp),
            Omega_b * (w_ip - 1.0), t_ip / (2.0 * self.H_ip),
            Omega_b * (w_lp - 1.0), t_lp / (2.0 * self.H_lp),
            Omega_b * (w_ex - 1.0), t_ex / (2.0 * self.H_ex),
        )

    def backsolve(self, delta, tau_e):
        tau_m = tau_e
        d_lp = delta + tau_m / self.K_lp_r
        d_ip = d_lp + (self.F_hp + self.F_ip) * tau_m / self.K_ip_lp
        d_hp = d_ip + self.F_hp * tau_m / self.K_hp_ip
        return (delta, 1.0, d_hp, 1.0, d_ip, 1.0, d_lp, 1.0, delta, 1.0), tau_m


# ---------------------------------------------------------------------------
# Excitation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AVRFixed:
    Vf: float = 1.0

    type_name: ClassVar[str] = "Fixed"
    state_names: ClassVar[tuple[str, ...]] = ()

    def field_voltage(self, x):
        return self.Vf

    def eval(self, x, V_mag, V_ref, v_pss):
        return (), self.Vf

    def backsolve(self, V_mag, V_f, v_pss, V_ref):
        return (), V_ref, replace(self, Vf=V_f)


def _windup(value, derivative, lo, hi):
    if value >= hi and derivative > 0.0:
        return 0.0
    if value <= lo and derivative < 0.0:
        return 0.0
    return derivative


@dataclass(frozen=True)
class AVRTypeI:
    """Simplified IEEE DC exciter (measurement, regulator, rate feedback, exciter)."""

    Ka: float = 20.0
    Ke: float = 0.01
    Kf: float = 0.063
    Ta: float = 0.2
    Te: float = 0.314
    Tf: float = 0.35
    Tr: float = 0.001
    Vr_min: float = -5.0
    Vr_max: float = 5.0
    Ae: float = 0.0039
    Be: float = 1.555

    type_name: ClassVar[str] = "TypeI"
    state_names: ClassVar[tuple[str, ...]] = ("vm", "vr1", "vr2", "vf")

    def __post_init__(self):
        _require_positive(self, "Ka", "Ta", "Te", "Tf", "Tr")
        if not self.Vr_min < self.Vr_max:
            raise ValueError("AVRTypeI requires Vr_min < Vr_max")

    def saturation(self, vf):
        return self.Ae * math.exp(self.Be * abs(vf))

    def field_voltage(self, x):
        return x[3]

    def eval(self, x, V_mag, V_ref, v_pss):
        vm, vr1, vr2, vf = x[0], x[1], x[2], x[3]
        vr = min(max(vr1, self.Vr_min), self.Vr_max)
        dvm = (V_mag - vm) / self.Tr
        dvr1 = (self.Ka * (V_ref + v_pss - vm - vr2 - self.Kf / self.Tf * vf) - vr1) / self.Ta
        dvr1 = _windup(vr1, dvr1, self.Vr_min, self.Vr_max)
        dvr2 = -(self.Kf / self.Tf * vf + vr2) / self.Tf
        dvf = (vr - (self.Ke + self.saturation(vf)) * vf) / self.Te
        return (dvm, dvr1, dvr2, dvf), vf

    def backsolve(self, V_mag, V_f, v_pss, V_ref):
        vr1 = (self.Ke + self.saturation(V_f)) * V_f
        if not self.Vr_min <= vr1 <= self.Vr_max:
            raise InfeasibleOperatingPoint(
                f"AVR TypeI regulator output {vr1:.4f} outside [{self.Vr_min}, {self.Vr_max}]")
        vr2 = -self.Kf / self.Tf * V_f
        V_ref = V_mag + vr1 / self.Ka - v_pss
        return (V_mag, vr1, vr2, V_f), V_ref, self


@dataclass(frozen=True)
class AVRTypeII:
    """Measurement lag followed by a clamped first-order regulator; V_f = v_r."""

    Ka: float = 20.0
    Ta: float = 0.2
    Tr: float = 0.001
    Vr_min: float = -5.0
    Vr_max: float = 5.0

    type_name: ClassVar[str] = "TypeII"
    state_names: ClassVar[tuple[str, ...]] = ("vm", "vr")

    def __post_init__(self):
        _require_positive(self, "Ka", "Ta", "Tr")
        if not self.Vr_min < self.Vr_max:
            raise ValueError("AVRTypeII requires Vr_min < Vr_max")

    def field_voltage(self, x):
        return min(max(x[1], self.Vr_min), self.Vr_max)

    def eval(self, x, V_mag, V_ref, v_pss):
        vm, vr = x[0], x[1]
        dvm = (V_mag - vm) / self.Tr
        dvr = _windup(vr, (self.Ka * (V_ref + v_pss - vm) - vr) / self.Ta, self.Vr_min, self.Vr_max)
        return (dvm, dvr), self.field_voltage(x)

    def backsolve(self, V_mag, V_f, v_pss, V_ref):
        if not self.Vr_min <= V_f <= self.Vr_max:
            raise InfeasibleOperatingPoint(
                f"AVR TypeII field voltage {V_f:.4f} outside [{self.Vr_min}, {self.Vr_max}]")
        return (V_mag, V_f), V_mag + V_f / self.Ka - v_pss, self


# ---------------------------------------------------------------------------
# PSS
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PSSFixed:
    V_pss: float = 0.0

    type_name: ClassVar[str] = "Fixed"
    state_names: ClassVar[tuple[str, ...]] = ()

    def output(self, omega, tau_e, P_ref):
        return self.V_pss


@dataclass(frozen=True)
class PSSSimplified:
    """Speed and electrical power droop added to the AVR reference."""

    K_omega: float = 0.0
    K_p: float = z(0.0)
    clamp: float = 0.1

    type_name: ClassVar[str] = "SimplifiedDroop"
    state_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        if not self.clamp >= 0:
            raise ValueError("PSS clamp must be >= 0")

    def output(self, omega, tau_e, P_ref):
        v = self.K_omega * (omega - 1.0) + self.K_p * (P_ref - tau_e * omega)
        return min(max(v, -self.clamp), self.clamp)


# ---------------------------------------------------------------------------
# Prime movers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TGFixed:
    efficiency: float = 1.0

    type_name: ClassVar[str] = "Fixed"
    state_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        _require_positive(self, "efficiency")

    def eval(self, x, omega, omega_ref, P_ref):
        return (), self.efficiency * P_ref

    def backsolve(self, tau_m, omega_ref):
        return (), tau_m / self.efficiency


@dataclass(frozen=True)
class TGTypeI:
    """Servo and reheat turbine chain with a clamped droop input."""

    R_d: float = z(0.02)
    Ts: float = 0.1
    Tc: float = 0.45
    T3: float = 0.0
    T4: float = 0.0
    T5: float = 50.0
    P_min: float = s(0.0)
    P_max: float = s(1.2)

    type_name: ClassVar[str] = "TypeI"
    state_names: ClassVar[tuple[str, ...]] = ("xg1", "xg2", "xg3")

    def __post_init__(self):
        _require_positive(self, "R_d", "Ts", "Tc", "T5")
        if not self.P_min < self.P_max:
            raise ValueError("TGTypeI requires P_min < P_max")

    def eval(self, x, omega, omega_ref, P_ref):
        xg1, xg2, xg3 = x[0], x[1], x[2]
        p_in = min(max(P_ref + (omega_ref - omega) / self.R_d, self.P_min), self.P_max)
        a = self.T3 / self.Tc
        b = self.T4 / self.T5
        dx1 = (p_in - xg1) / self.Ts
        dx2 = ((1.0 - a) * xg1 - xg2) / self.Tc
        dx3 = ((1.0 - b) * (xg2 + a * xg1) - xg3) / self.T5
        return (dx1, dx2, dx3), xg3 + b * (xg2 + a * xg1)

    def backsolve(self, tau_m, omega_ref):
        if not self.P_min <= tau_m <= self.P_max:
            raise InfeasibleOperatingPoint(
                f"TGTypeI power {tau_m:.4f} outside [{self.P_min}, {self.P_max}]")
        a = self.T3 / self.Tc
        b = self.T4 / self.T5
        xg2 = (1.0 - a) * tau_m
        xg3 = (1.0 - b) * tau_m
        return (tau_m, xg2, xg3), tau_m - (omega_ref - 1.0) / self.R_d


@dataclass(frozen=True)
class TGTypeII:
    """Lead-lag speed droop added to the power reference."""

    R_d: float = z(0.02)
    T1: float = 0.1
    T2: float = 1.0

    type_name: ClassVar[str] = "TypeII"
    state_names: ClassVar[tuple[str, ...]] = ("xg",)

    def __post_init__(self):
        _require_positive(self, "R_d", "T2")

    def eval(self, x, omega, omega_ref, P_ref):
        dw = omega_ref - omega
        r = self.T1 / self.T2
        dxg = ((1.0 - r) * dw / self.R_d - x[0]) / self.T2
        return (dxg,), P_ref + r * dw / self.R_d + x[0]

    def backsolve(self, tau_m, omega_ref):
        dw = omega_ref - 1.0
        xg = (1.0 - self.T1 / self.T2) * dw / self.R_d
        return (xg,), tau_m - dw / self.R_d


MACHINES = {c.type_name: c for c in (Classical, OneDOneQ, MarconatoVI, AndersonFouadVI)}
MACHINES["BaseMachine"] = Classical
SHAFTS = {c.type_name: c for c in (SingleMass, FiveMass)}
AVRS = {c.type_name: c for c in (AVRFixed, AVRTypeI, AVRTypeII)}
PSSS = {c.type_name: c for c in (PSSFixed, PSSSimplified)}
PRIME_MOVERS = {c.type_name: c for c in (TGFixed, TGTypeI, TGTypeII)}


# ---------------------------------------------------------------------------
# Single-component evaluation helpers
# ---------------------------------------------------------------------------


def machine_eval(machine, x_m: Sequence[float], v_dq: tuple[float, float], V_f: float):
    """Return ``(dx_m, (i_d, i_q), tau_e)`` for a machine in its rotor frame."""
    dx, i_d, i_q, tau_e = machine.eval(x_m, v_dq[0], v_dq[1], V_f)
    return np.array(dx, dtype=float), (i_d, i_q), tau_e


def shaft_eval(shaft, x_s, tau_m, tau_e, Omega_b):
    return np.array(shaft.eval(x_s, tau_m, tau_e, Omega_b), dtype=float)


def avr_eval(avr, x_a, V_bus_mag, V_ref, v_pss):
    dx, V_f = avr.eval(x_a, V_bus_mag, V_ref, v_pss)
    return np.array(dx, dtype=float), V_f


def pss_output(pss, omega, tau_e, P_ref):
    return pss.output(omega, tau_e, P_ref)


def tg_eval(tg, x_t, omega, omega_ref, P_ref):
    dx, tau_m = tg.eval(x_t, omega, omega_ref, P_ref)
    return np.array(dx, dtype=float), tau_m


# ---------------------------------------------------------------------------
# Device
# ---------------------------------------------------------------------------


class GeneratorPorts:
    """Scratch block shared by the components of one generator."""

    __slots__ = ("v_d", "v_q", "i_d", "i_q", "tau_m", "tau_e", "omega", "V_f", "delta", "v_pss")

    def __init__(self):
        for name in self.__slots__:
            setattr(self, name, 0.0)


@dataclass(frozen=True)
class DynamicGenerator:
    name: str
    bus: int
    machine: object
    shaft: object
    avr: object = field(default_factory=AVRFixed)
    tg: object = field(default_factory=TGFixed)
    pss: object = field(default_factory=PSSFixed)
    omega_ref: float = 1.0
    V_ref: float = 1.0
    P_ref: float = s(0.0)
    Q_ref: float = s(0.0)
    base_MVA: float = 100.0

    slots: ClassVar[tuple[str, ...]] = ("machine", "shaft", "avr", "tg", "pss")
    references: ClassVar[tuple[str, ...]] = ("omega_ref", "V_ref", "P_ref", "Q_ref")

    def __post_init__(self):
        _require_positive(self, "base_MVA")
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
        return (True,) * self._n_states

    @property
    def n_states(self) -> int:
        return self._n_states

    def rebased(self, system_MVA: float) -> "DynamicGenerator":
        if self.base_MVA == system_MVA:
            return self
        comps = {slot: rebase_dataclass(getattr(self, slot), self.base_MVA, system_MVA) for slot in self.slots}
        dev = rebase_dataclass(replace(self, **comps), self.base_MVA, system_MVA)
        return replace(dev, base_MVA=system_MVA)

    def evaluate(self, x, v_r: float, v_i: float, Omega_b: float, out, ports: GeneratorPorts | None = None):
        """Write local derivatives into ``out`` and return the injected current (i_R, i_I)."""
        if ports is None:
            ports = GeneratorPorts()
        o = self._offsets
        xm = x[o["machine"]:o["shaft"]]
        xs = x[o["shaft"]:o["avr"]]
        xa = x[o["avr"]:o["tg"]]
        xt = x[o["tg"]:o["pss"]]
        delta = xs[0]
        omega = xs[1]
        ports.delta = delta
        ports.omega = omega
        v_d, v_q = ri_to_dq(delta, v_r, v_i)
        ports.v_d = v_d
        ports.v_q = v_q
        V_f = self.avr.field_voltage(xa)
        ports.V_f = V_f
        dxm, i_d, i_q, tau_e = self.machine.eval(xm, v_d, v_q, V_f)
        ports.i_d = i_d
        ports.i_q = i_q
        ports.tau_e = tau_e
        dxt, tau_m = self.tg.eval(xt, omega, self.omega_ref, self.P_ref)
        ports.tau_m = tau_m
        v_pss = self.pss.output(omega, tau_e, self.P_ref)
        ports.v_pss = v_pss
        dxa, _ = self.avr.eval(xa, math.hypot(v_r, v_i), self.V_ref, v_pss)
        dxs = self.shaft.eval(xs, tau_m, tau_e, Omega_b)
        k = 0
        for block in (dxm, dxs, dxa, dxt):
            for value in block:
                out[k] = value
                k += 1
        return dq_to_ri(delta, i_d, i_q)

    def initialize(self, v: complex, s_inj: complex):
        """Back-solve states so the device is in equilibrium at ``(v, s_inj)``.

        Returns ``(x0, device)`` where ``device`` carries the adjusted
        references (P_ref, V_ref) and component set-points (eq_p, Vf).
        """
        i = (s_inj / v).conjugate()
        delta, xm, V_f, machine = self.machine.backsolve(v, i)
        i_d, i_q = ri_to_dq(delta, i.real, i.imag)
        _, _, _, tau_e = machine.eval(xm, *ri_to_dq(delta, v.real, v.imag), V_f)
        xs, tau_m = self.shaft.backsolve(delta, tau_e)
        xt, P_ref = self.tg.backsolve(tau_m, self.omega_ref)
        v_pss = self.pss.output(1.0, tau_e, P_ref)
        xa, V_ref, avr = self.avr.backsolve(abs(v), V_f, v_pss, self.V_ref)
        dev = replace(self, machine=machine, avr=avr, P_ref=P_ref, V_ref=V_ref)
        x0 = [*xm, *xs, *xa, *xt]
        return np.array(x0, dtype=float), dev


def generator_residual(gen: DynamicGenerator, x_local, v_bus: complex, Omega_b: float = 2 * math.pi * 60.0):
    """Return ``(dx_local, i_inj)`` for a generator at bus voltage ``v_bus``."""
    out = np.empty(gen.n_states)
    ir, ii = gen.evaluate(list(map(float, x_local)), v_bus.real, v_bus.imag, Omega_b, out)
    return out, complex(ir, ii)
