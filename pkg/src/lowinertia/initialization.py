"""Power flow, device back-solve and equilibrium refinement.

Reference absorption policy applied when back-solving devices:

* generators with an AVR adjust ``V_ref``; with a fixed AVR they adjust the
  field voltage ``Vf`` (classical machines adjust ``eq_p`` instead);
* prime movers adjust ``P_ref`` so the mechanical torque balances;
* inverters adjust ``P_ref`` and ``V_ref``;
* voltage sources adjust their internal EMF so the slack bus sits at its
  scheduled voltage.
"""

from __future__ import annotations

import cmath
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .assembly import SystemModel, bus_key
from .jacobian import forward_jacobian
from .network import build_ybus
from .system import DYNAMIC, PQ, PV, SLACK, System, VoltageSource

logger = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    pass


class EquilibriumError(RuntimeError):
    pass


@dataclass
class PowerFlowResult:
    V: np.ndarray          # complex bus voltages
    S: np.ndarray          # complex net injection per bus (devices + sources - loads)
    iterations: int
    mismatch: float

    @property
    def V_mag(self):
        return np.abs(self.V)

    @property
    def V_angle(self):
        return np.angle(self.V)

    @property
    def P_inj(self):
        return self.S.real

    @property
    def Q_inj(self):
        return self.S.imag


def _scheduled(system: System):
    pos = system.bus_position()
    n = len(system.buses)
    S_load = np.zeros(n, dtype=complex)
    S_dev = np.zeros(n, dtype=complex)
    has_device = np.zeros(n, dtype=bool)
    for load in system.loads:
        S_load[pos[load.bus]] += complex(load.P, load.Q)
    for dev in system.dynamic_devices:
        k = pos[dev.bus]
        S_dev[k] += complex(dev.P_ref, dev.Q_ref)
        has_device[k] = True
    return S_load, S_dev, has_device


def solve_powerflow(system: System, tol: float = 1e-10, max_iter: int = 20) -> PowerFlowResult:
    """Newton-Raphson on the polar mismatch equations.

    PV buses without a voltage-controlling device or source are solved as PQ.
    Dynamic branches enter through their Π-model stamps.
    """
    n = len(system.buses)
    Y = build_ybus(system.branches, system.buses, include_dynamic=True)
    S_load, S_dev, has_device = _scheduled(system)
    S_spec = S_dev - S_load
    types = []
    for k, b in enumerate(system.buses):
        t = b.bus_type
        if t == PV and not has_device[k]:
            t = PQ
        types.append(t)
    slack = [k for k, t in enumerate(types) if t == SLACK]
    pv = [k for k, t in enumerate(types) if t == PV]
    pq = [k for k, t in enumerate(types) if t == PQ]
    pvpq = pv + pq
    Vm = np.array([b.voltage_magnitude if types[k] != PQ else 1.0 for k, b in enumerate(system.buses)])
    Va = np.zeros(n)
    for k in slack:
        Va[k] = system.buses[k].voltage_angle
    V = Vm * np.exp(1j * Va)

    def mismatch(V):
        S = V * np.conj(Y @ V)
        dS = S - S_spec
        return np.concatenate([dS.real[pvpq], dS.imag[pq]]), S

    F, S = mismatch(V)
    norm = float(np.max(np.abs(F))) if F.size else 0.0
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowError(f"power flow did not converge in {max_iter} iterations (mismatch {norm:.3e})")
        it += 1
        Ibus = Y @ V
        diagV = np.diag(V)
        diagI = np.diag(Ibus)
        diagVn = np.diag(V / np.abs(V))
        dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
        dS_dVm = diagV @ np.conj(Y @ diagVn) + np.conj(diagI) @ diagVn
        J = np.block([
            [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
            [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular power-flow Jacobian: {exc}") from None
        Va[pvpq] += dx[:len(pvpq)]
        Vm[pq] += dx[len(pvpq):]
        V = Vm * np.exp(1j * Va)
        F, S = mismatch(V)
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        if not np.isfinite(norm):
            raise PowerFlowError("power flow diverged")
    return PowerFlowResult(V=V, S=S, iterations=it, mismatch=norm)


# ---------------------------------------------------------------------------
# Equilibrium
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumInfo:
    iterations: int
    residual_norm: float


def _external(w, perm):
    out = np.empty_like(w)
    out[perm] = w
    return out


def find_equilibrium(model: SystemModel, u_guess: np.ndarray, tol: float = 1e-9, max_iter: int = 50,
                     t: float = 0.0) -> tuple[np.ndarray, EquilibriumInfo]:
    """Newton on the stacked residual with ``du = 0`` (step halving up to 8 times)."""
    perm = model.index.canonical_order()
    u = np.asarray(u_guess, dtype=float)[perm]
    ext = np.zeros_like(u)

    def fun(w):
        ext[perm] = w
        return model.rhs(t, ext)[perm]

    F = np.array(fun(u), copy=True)
    norm = float(np.max(np.abs(F)))
    for it in range(1, max_iter + 1):
        if not np.isfinite(norm):
            raise EquilibriumError("non-finite residual during equilibrium search")
        if norm < tol:
            return _external(u, perm), EquilibriumInfo(it, norm)
        J = forward_jacobian(fun, u, F)
        try:
            lu = scipy.linalg.lu_factor(J, check_finite=True)
            if np.min(np.abs(np.diag(lu[0]))) == 0.0:
                raise np.linalg.LinAlgError("zero pivot")
            step = scipy.linalg.lu_solve(lu, -F)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EquilibriumError(f"singular Jacobian in equilibrium search: {exc}") from None
        alpha = 1.0
        for _ in range(9):
            trial = u + alpha * step
            F_trial = np.array(fun(trial), copy=True)
            n_trial = float(np.max(np.abs(F_trial)))
            if np.isfinite(n_trial) and n_trial < norm:
                break
            alpha *= 0.5
        u, F, norm = trial, F_trial, n_trial
    if norm < tol:
        return _external(u, perm), EquilibriumInfo(max_iter, norm)
    raise EquilibriumError(f"equilibrium search did not converge in {max_iter} iterations (residual {norm:.3e})")


# ---------------------------------------------------------------------------
# Full initialization
# ---------------------------------------------------------------------------


@dataclass
class OperatingPoint:
    system: System
    model: SystemModel
    u0: np.ndarray
    powerflow: PowerFlowResult
    load_voltages: dict
    report: dict = field(default_factory=dict)
    residual_norm: float = 0.0


def initialize_device(device, v_bus: complex, s_inj: complex):
    """Back-solve one dynamic device; returns ``(x0_local, updated_device)``."""
    return device.initialize(complex(v_bus), complex(s_inj))


def _changed(a, b) -> bool:
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(float(a) - float(b)) > 1e-12 * max(1.0, abs(float(a)))
    return a != b


def _device_report(old, new) -> dict:
    out = {}
    for ref in old.references:
        a, b = getattr(old, ref), getattr(new, ref)
        if _changed(a, b):
            out[ref] = {"given": float(a), "initialized": float(b)}
    for slot in old.slots:
        ca, cb = getattr(old, slot), getattr(new, slot)
        if ca != cb:
            for f in ca.__dataclass_fields__:
                a, b = getattr(ca, f), getattr(cb, f)
                if _changed(a, b):
                    out[f"{slot}.{f}"] = {"given": float(a), "initialized": float(b)}
    return out


def initialize(system: System, polish: bool = True, tol: float = 1e-9) -> OperatingPoint:
    """Power flow, back-solve every device and assemble a consistent state vector."""
    pf = solve_powerflow(system)
    pos = system.bus_position()
    S_load, S_dev, _ = _scheduled(system)
    S_total = pf.S + S_load   # power delivered by devices and sources at each bus

    by_bus: dict[int, list] = {}
    for dev in system.dynamic_devices:
        by_bus.setdefault(pos[dev.bus], []).append(dev)
    sources_by_bus: dict[int, list] = {}
    for src in system.sources:
        sources_by_bus.setdefault(pos[src.bus], []).append(src)

    device_power: dict[str, complex] = {}
    source_power: dict[str, complex] = {}
    for k in range(len(system.buses)):
        devs = by_bus.get(k, [])
        srcs = sources_by_bus.get(k, [])
        remaining = S_total[k]
        if srcs:
            for dev in devs:
                device_power[dev.name] = complex(dev.P_ref, dev.Q_ref)
                remaining -= device_power[dev.name]
            for src in srcs:
                source_power[src.name] = remaining / len(srcs)
        elif devs:
            bus_type = system.buses[k].bus_type
            p_sched = sum(d.P_ref for d in devs)
            for dev in devs:
                if bus_type == SLACK:
                    p = remaining.real / len(devs)
                else:
                    p = dev.P_ref if p_sched == 0 else remaining.real * dev.P_ref / p_sched
                q = remaining.imag / len(devs)
                device_power[dev.name] = complex(p, q)

    load_voltages = {load.name: float(abs(pf.V[pos[load.bus]])) for load in system.loads}

    report: dict = {}
    statics = []
    for inj in system.static_injections:
        if isinstance(inj, VoltageSource):
            v = pf.V[pos[inj.bus]]
            i = (source_power[inj.name] / v).conjugate()
            e = v + inj.impedance * i
            new = replace(inj, V_mag=float(abs(e)), V_angle=cmath.phase(e))
            report[inj.name] = {"V_mag": {"given": float(inj.V_mag), "initialized": float(new.V_mag)},
                                "V_angle": {"given": float(inj.V_angle), "initialized": float(new.V_angle)}}
            statics.append(new)
        else:
            statics.append(inj)

    x_local = {}
    devices = []
    for dev in system.dynamic_devices:
        v = pf.V[pos[dev.bus]]
        x0, new = initialize_device(dev, v, device_power.get(dev.name, 0j))
        x_local[dev.name] = x0
        devices.append(new)
        report[dev.name] = _device_report(dev, new)

    init_system = system.replace(static_injections=tuple(statics), dynamic_devices=tuple(devices))
    model = SystemModel(init_system, load_voltages=load_voltages)
    u0 = np.zeros(len(model.index))
    for bus in init_system.buses:
        k = pos[bus.number]
        u0[model.index[(bus_key(bus.number), "vr")]] = pf.V[k].real
        u0[model.index[(bus_key(bus.number), "vi")]] = pf.V[k].imag
    for dev in devices:
        u0[model.index.slice(dev.name)] = x_local[dev.name]
    for br in init_system.branches:
        if br.kind == DYNAMIC:
            il = (pf.V[pos[br.from_bus]] - pf.V[pos[br.to_bus]]) / br.impedance
            k = model.index[(br.name, "il_r")]
            u0[k] = il.real
            u0[k + 1] = il.imag

    norm = float(np.max(np.abs(model.rhs(0.0, u0)))) if len(u0) else 0.0
    if polish and norm >= tol * 1e-2:
        try:
            u0, info = find_equilibrium(model, u0, tol=tol * 1e-2)
            norm = info.residual_norm
        except EquilibriumError:
            # polishing past the requested tolerance is best effort
            u0, info = find_equilibrium(model, u0, tol=tol)
            norm = info.residual_norm
    logger.debug("initialized %s: residual %.3e", system.name, norm)
    return OperatingPoint(init_system, model, u0, pf, load_voltages, report, norm)
