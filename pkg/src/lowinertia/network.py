"""Admittance matrix, nodal current balance and dynamic-branch equations."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .system import STATIC, BranchData


def branch_stamp(br: BranchData) -> tuple[complex, complex, complex]:
    """Return ``(Y_ff, Y_tt, Y_ft)`` for the Π model of ``br``."""
    z = complex(br.R, br.X)
    if z == 0:
        raise ValueError(f"branch {br.name} has zero impedance")
    y = 1.0 / z
    return y + 1j * br.B_from, y + 1j * br.B_to, -y


def build_ybus(branches: Iterable[BranchData], buses, extra_shunts: Mapping[int, complex] | None = None,
               include_dynamic: bool = False) -> np.ndarray:
    """Nodal admittance matrix at nominal frequency.

    ``buses`` is the ordered bus collection (``Bus`` objects or bus numbers).
    Dynamic branches are skipped unless ``include_dynamic`` is set, since
    their currents enter the balance as states.
    """
    numbers = [getattr(b, "number", b) for b in buses]
    pos = {n: k for k, n in enumerate(numbers)}
    Y = np.zeros((len(numbers), len(numbers)), dtype=complex)
    for br in branches:
        if br.kind != STATIC and not include_dynamic:
            continue
        try:
            f, t = pos[br.from_bus], pos[br.to_bus]
        except KeyError as exc:
            raise ValueError(f"branch {br.name} references unknown bus {exc.args[0]}") from None
        yff, ytt, yft = branch_stamp(br)
        Y[f, f] += yff
        Y[t, t] += ytt
        Y[f, t] += yft
        Y[t, f] += yft
    for bus, y in (extra_shunts or {}).items():
        Y[pos[bus], pos[bus]] += y
    return Y


def remove_branches(Y: np.ndarray, branches: Iterable[BranchData], buses) -> np.ndarray:
    """Return ``Y`` with the stamps of ``branches`` subtracted."""
    numbers = [getattr(b, "number", b) for b in buses]
    pos = {n: k for k, n in enumerate(numbers)}
    Y = np.array(Y, dtype=complex, copy=True)
    for br in branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        yff, ytt, yft = branch_stamp(br)
        Y[f, f] -= yff
        Y[t, t] -= ytt
        Y[f, t] -= yft
        Y[t, f] -= yft
    return Y


def network_residual(v: np.ndarray, i_inj: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Interleaved (real, imag) mismatch ``i_inj - Y v``."""
    mismatch = np.asarray(i_inj, dtype=complex) - np.asarray(Y) @ np.asarray(v, dtype=complex)
    out = np.empty(2 * mismatch.size)
    out[0::2] = mismatch.real
    out[1::2] = mismatch.imag
    return out


def series_current_derivative(i_l: complex, v_from: complex, v_to: complex, R: float, X: float,
                              Omega_b: float) -> complex:
    """``di_l/dt`` from ``(X/Ω_b) di_l/dt = (v_from - v_to) - (R + jX) i_l``."""
    return Omega_b / X * ((v_from - v_to) - complex(R, X) * i_l)


def capacitor_voltage_derivative(v: complex, i_c: complex, C: float, Omega_b: float) -> complex:
    """``dv/dt`` from ``(C/Ω_b) dv/dt = i_c - jCv``."""
    if not C > 0:
        raise ValueError("dynamic branch terminal needs a positive shunt capacitance")
    return Omega_b / C * (i_c - 1j * C * v)


def dynamic_branch_residual(i_l: complex, v_from: complex, v_to: complex, branch: BranchData,
                            i_c_from: complex, i_c_to: complex, Omega_b: float) -> np.ndarray:
    """Six real derivatives ``(i_l, v_from, v_to)`` of one dynamic Π line.

    ``i_c_from``/``i_c_to`` are the net currents flowing into the terminal
    capacitors (device injections minus static-network and series currents).
    """
    dil = series_current_derivative(i_l, v_from, v_to, branch.R, branch.X, Omega_b)
    dvf = capacitor_voltage_derivative(v_from, i_c_from, branch.B_from, Omega_b)
    dvt = capacitor_voltage_derivative(v_to, i_c_to, branch.B_to, Omega_b)
    return np.array([dil.real, dil.imag, dvf.real, dvf.imag, dvt.real, dvt.imag])
