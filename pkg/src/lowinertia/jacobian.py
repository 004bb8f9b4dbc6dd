"""Dense finite-difference Jacobians of the system right-hand side."""

from __future__ import annotations

import numpy as np

EPS = np.finfo(float).eps


def forward_jacobian(fun, u: np.ndarray, f0: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """One-sided differences; ``fun(u)`` may return an internal buffer."""
    u = np.array(u, dtype=float, copy=True)
    if f0 is None:
        f0 = np.array(fun(u), copy=True)
    n = u.size
    if out is None:
        out = np.empty((f0.size, n))
    for j in range(n):
        h = np.sqrt(EPS) * max(1.0, abs(u[j]))
        saved = u[j]
        u[j] = saved + h
        h = u[j] - saved
        out[:, j] = (fun(u) - f0) / h
        u[j] = saved
    return out


def central_jacobian(fun, u: np.ndarray, rel_step: float = 1e-7, abs_step: float = 1e-7,
                     out: np.ndarray | None = None) -> np.ndarray:
    """Central differences with per-variable step ``max(abs_step, rel_step*|u_j|)``."""
    u = np.array(u, dtype=float, copy=True)
    f0 = np.array(fun(u), copy=True)
    n = u.size
    if out is None:
        out = np.empty((f0.size, n))
    for j in range(n):
        saved = u[j]
        h = max(abs_step, rel_step * abs(saved))
        u[j] = saved + h
        fp = np.array(fun(u), copy=True)
        u[j] = saved - h
        fm = fun(u)
        out[:, j] = (fp - fm) / (2.0 * h)
        u[j] = saved
    return out
