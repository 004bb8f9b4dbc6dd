"""Linearization at an equilibrium and eigenanalysis of the reduced Jacobian."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .assembly import SystemModel
from .jacobian import central_jacobian

COND_LIMIT = 1e10


class SingularAlgebraicJacobian(np.linalg.LinAlgError):
    pass


@dataclass
class JacobianBlocks:
    g_y: np.ndarray
    g_x: np.ndarray
    f_y: np.ndarray
    f_x: np.ndarray


@dataclass
class SmallSignalResult:
    u_eq: np.ndarray
    blocks: JacobianBlocks
    J_red: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    damping: np.ndarray
    frequency: np.ndarray      # Hz
    state_labels: tuple        # labels of the differential states (rows of J_red)
    pairs: list                # (k, k_conjugate) index pairs; k_conjugate is None for real modes

    @property
    def stable(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))

    def dominant_states(self, k: int, count: int = 3) -> list[str]:
        mag = np.abs(self.eigenvectors[:, k])
        order = np.argsort(-mag, kind="stable")[:count]
        return [f"{self.state_labels[i][0]}.{self.state_labels[i][1]}" for i in order]

    def oscillatory_modes(self, min_freq: float = 1e-6) -> np.ndarray:
        """Indices of eigenvalues with positive imaginary part, least damped first."""
        idx = np.flatnonzero(self.eigenvalues.imag > 2 * math.pi * min_freq)
        return idx[np.argsort(self.damping[idx], kind="stable")]

    def to_csv(self, path=None) -> str:
        return write_eigenvalue_csv(self, path)


def full_jacobian(model: SystemModel, u_eq: np.ndarray, t: float = 0.0) -> JacobianBlocks:
    """Central-difference Jacobian of ``rhs`` split by the algebraic/differential partition."""
    J = central_jacobian(lambda w: model.rhs(t, w), np.asarray(u_eq, dtype=float))
    xp = model.index.x_positions
    yp = model.index.y_positions
    return JacobianBlocks(
        g_y=J[np.ix_(yp, yp)],
        g_x=J[np.ix_(yp, xp)],
        f_y=J[np.ix_(xp, yp)],
        f_x=J[np.ix_(xp, xp)],
    )


def reduce_jacobian(blocks: JacobianBlocks) -> np.ndarray:
    """``J_red = f_x - f_y g_y^{-1} g_x``."""
    g_y = np.atleast_2d(blocks.g_y)
    if g_y.size == 0:
        return np.array(blocks.f_x, dtype=float, copy=True)
    cond = np.linalg.cond(g_y)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularAlgebraicJacobian(
            f"g_y is singular (condition number {cond:.3e}); the reduced Jacobian requires an index-1 "
            "system, i.e. g_y invertible at the equilibrium")
    return blocks.f_x - blocks.f_y @ np.linalg.solve(g_y, blocks.g_x)


def eigenanalysis(J_red: np.ndarray):
    """Eigenvalues, right eigenvectors, damping ratios, frequencies (Hz) and conjugate pairs."""
    J_red = np.asarray(J_red, dtype=float)
    if not np.all(np.isfinite(J_red)):
        raise ValueError("reduced Jacobian has non-finite entries")
    lam, vec = np.linalg.eig(J_red)
    order = np.lexsort((lam.imag, lam.real))[::-1]   # descending real part, then imaginary
    lam, vec = lam[order], vec[:, order]
    mag = np.abs(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        zeta = np.where(mag > 0, -lam.real / np.where(mag > 0, mag, 1.0), 1.0)
    freq = lam.imag / (2 * math.pi)
    pairs = _match_conjugates(lam)
    return lam, vec, zeta, freq, pairs


def _match_conjugates(lam, tol=1e-8):
    used = set()
    pairs = []
    for k, z in enumerate(lam):
        if k in used:
            continue
        used.add(k)
        if abs(z.imag) <= tol * max(1.0, abs(z)):
            pairs.append((k, None))
            continue
        best, best_d = None, np.inf
        for j in range(len(lam)):
            if j not in used:
                d = abs(lam[j] - z.conjugate())
                if d < best_d:
                    best, best_d = j, d
        if best is not None and best_d <= 1e-6 * max(1.0, abs(z)):
            used.add(best)
        else:
            best = None
        pairs.append((k, best))
    return pairs


def small_signal_analysis(model: SystemModel, u_eq: np.ndarray, t: float = 0.0) -> SmallSignalResult:
    blocks = full_jacobian(model, u_eq, t)
    J_red = reduce_jacobian(blocks)
    lam, vec, zeta, freq, pairs = eigenanalysis(J_red)
    labels = tuple(model.index.labels[i] for i in model.index.x_positions)
    return SmallSignalResult(np.array(u_eq, copy=True), blocks, J_red, lam, vec, zeta, freq, labels, pairs)


def write_eigenvalue_csv(res: SmallSignalResult, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "real", "imag", "damping", "frequency_hz", "dominant_states"])
    for k, lam in enumerate(res.eigenvalues):
        w.writerow([k, repr(float(lam.real)), repr(float(lam.imag)), repr(float(res.damping[k])),
                    repr(float(res.frequency[k])), " ".join(res.dominant_states(k))])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def participation_factors(res: SmallSignalResult) -> np.ndarray:
    """``|v_ki w_ik|`` with ``W = V^{-1}``; rows are states, columns modes."""
    W = np.linalg.inv(res.eigenvectors)
    return np.abs(res.eigenvectors * W.T)


def modal_amplitudes(res: SmallSignalResult, dx0: np.ndarray, state: tuple[str, str]) -> np.ndarray:
    """Amplitude each mode contributes to ``state`` in the free response from deviation ``dx0``."""
    k = res.state_labels.index(state)
    c = np.linalg.solve(res.eigenvectors, np.asarray(dx0, dtype=float))
    return np.abs(c * res.eigenvectors[k, :])


def dominant_mode(res: SmallSignalResult, dx0: np.ndarray, state: tuple[str, str]) -> int:
    """Oscillatory mode (positive frequency) with the largest amplitude in ``state``."""
    amp = modal_amplitudes(res, dx0, state)
    osc = np.flatnonzero(res.eigenvalues.imag > 0)
    if osc.size == 0:
        raise ValueError("no oscillatory modes")
    return int(osc[np.argmax(amp[osc])])


def spectral_peak(t: np.ndarray, x: np.ndarray, t_start: float | None = None, dt: float = 1e-3,
                  f_min: float = 0.1, pad: int = 16) -> float:
    """Frequency (Hz) of the largest local maximum of the FFT magnitude of a transient.

    The series is resampled uniformly from ``t_start``, its final value is
    subtracted and the FFT is zero-padded ``pad`` times.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    t0 = t[0] if t_start is None else t_start
    grid = np.arange(t0, t[-1], dt)
    y = np.interp(grid, t, x)
    y = y - y[-1]
    n = len(y) * pad
    mag = np.abs(np.fft.rfft(y, n))
    freq = np.fft.rfftfreq(n, dt)
    peaks, _ = find_peaks(mag)
    peaks = peaks[freq[peaks] >= f_min]
    if peaks.size == 0:
        raise ValueError("transient spectrum has no interior peak")
    return float(freq[peaks[np.argmax(mag[peaks])]])
