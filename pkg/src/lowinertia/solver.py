"""Implicit time integration of the system DAE with scheduled perturbations.

The main method is a variable-order (1-5), variable-step BDF in
Nordsieck-style difference form, extended to the semi-explicit mass matrix
``M = diag(differential)``. Each step solves

    M (d + psi) = c * F(y_pred + d)

by a simplified Newton iteration with matrix ``M - c J``. The local error
estimate only looks at differential components; algebraic components are
kept on the constraint manifold by the corrector itself.

A fixed-step trapezoidal method (``method="trapezoid"``) shares the same
Newton machinery and is meant as an independent cross-check.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg

from .assembly import SystemModel
from .jacobian import forward_jacobian
from .network import build_ybus, remove_branches
from .perturbations import BranchTrip, NetworkChange, ReferenceStep, YbusChange
from .system import STATIC

logger = logging.getLogger(__name__)

MAX_ORDER = 5
NEWTON_MAXITER = 4
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
JAC_REFRESH_STEPS = 20
EPS = np.finfo(float).eps
NOISE = 1e3 * EPS

_kappa = np.array([0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0])
_gamma = np.hstack((0.0, np.cumsum(1.0 / np.arange(1, MAX_ORDER + 1))))
_alpha = (1.0 - _kappa) * _gamma
_error_const = _kappa * _gamma + 1.0 / np.arange(1, MAX_ORDER + 2)


class IntegrationError(RuntimeError):
    """Step size fell below the floor or the corrector could not converge."""


class EventError(IntegrationError):
    """Algebraic re-solve after a perturbation failed."""


@dataclass
class SolverOptions:
    rtol: float = 1e-6
    atol: float = 1e-8
    dtmax: float = 0.02
    method: str = "bdf"
    h0: float | None = None
    max_order: int = 5
    trapezoid_step: float | None = None   # defaults to dtmax / 4
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.method not in ("bdf", "trapezoid"):
            raise ValueError(f"unknown method {self.method!r} (expected 'bdf' or 'trapezoid')")
        if not 1 <= self.max_order <= MAX_ORDER:
            raise ValueError(f"max_order must be in 1..{MAX_ORDER}")
        if not (self.rtol > 0 and self.atol > 0 and self.dtmax > 0):
            raise ValueError("rtol, atol and dtmax must be positive")


@dataclass
class EventRecord:
    time: float
    perturbation: object
    u_before: np.ndarray
    u_after: np.ndarray


@dataclass
class Trajectory:
    t: np.ndarray
    U: np.ndarray
    index: object
    stats: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    model: SystemModel | None = None   # evaluation context after the last event

    def series(self, device: str, state: str) -> np.ndarray:
        return self.U[:, self.index[(device, state)]]

    def final(self) -> np.ndarray:
        return self.U[-1]

    def to_csv(self, path=None) -> str:
        return write_csv(self, path)


def get_state_series(traj: Trajectory, key) -> tuple[np.ndarray, np.ndarray]:
    """``(times, values)`` for ``key = (device, state)``."""
    device, state = key
    k = traj.index[(device, state)]
    return traj.t.copy(), traj.U[:, k].copy()


def write_csv(traj: Trajectory, path=None) -> str:
    """Header ``time,<device>.<state>,...``; floats written with ``repr`` so output is reproducible."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *traj.index.column_names()])
    for t, row in zip(traj.t.tolist(), traj.U.tolist()):
        w.writerow([repr(t), *map(repr, row)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------


class SimulationContext:
    """Mutable state of one simulation: model copy plus in-service branch set."""

    def __init__(self, model: SystemModel):
        self.model = model.copy()
        self.branches = [br for br in self.model.system.branches if br.kind == STATIC]

    @property
    def buses(self):
        return self.model.system.buses


def apply_perturbation(ctx: SimulationContext, p) -> None:
    """Apply ``p`` to the context (network swap or reference change)."""
    model = ctx.model
    if isinstance(p, YbusChange):
        model.set_ybus(p.ybus)
    elif isinstance(p, NetworkChange):
        if p.branches is not None:
            ctx.branches = [br for br in p.branches if br.kind == STATIC]
            Y = build_ybus(ctx.branches, ctx.buses)
        else:
            Y = np.array(model.ybus, copy=True)
        pos = model.system.bus_position()
        for bus, y in p.shunts:
            Y[pos[bus], pos[bus]] += y
        model.set_ybus(Y)
    elif isinstance(p, BranchTrip):
        by_name = {br.name: br for br in ctx.branches}
        tripped = []
        for name in p.branches:
            if name not in by_name:
                kind = "dynamic" if any(b.name == name for b in model.system.branches) else "unknown"
                raise EventError(f"cannot trip {kind} branch {name!r} (only in-service static branches)")
            tripped.append(by_name.pop(name))
        ctx.branches = list(by_name.values())
        model.set_ybus(remove_branches(model.ybus, tripped, ctx.buses))
    elif isinstance(p, ReferenceStep):
        model.set_reference(p.device, p.reference, p.value)
    else:
        raise TypeError(f"unsupported perturbation {type(p).__name__}")


def solve_algebraic(model: SystemModel, u: np.ndarray, t: float, tol: float = 1e-10, max_iter: int = 30) -> np.ndarray:
    """Newton on the algebraic rows with differential states frozen."""
    u = np.array(u, dtype=float, copy=True)
    order = model.index.canonical_order()
    ypos = order[~model.index.differential[order]]
    if ypos.size == 0:
        return u
    w = u.copy()

    def g(y):
        w[ypos] = y
        return model.rhs(t, w)[ypos]

    y = u[ypos].copy()
    r = np.array(g(y), copy=True)
    for _ in range(max_iter):
        norm = float(np.max(np.abs(r)))
        if not np.isfinite(norm):
            break
        if norm < tol:
            u[ypos] = y
            return u
        J = forward_jacobian(g, y, r)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise EventError("singular algebraic Jacobian after perturbation") from None
        alpha = 1.0
        for _ in range(9):
            trial = y + alpha * step
            rt = np.array(g(trial), copy=True)
            if np.isfinite(rt).all() and np.max(np.abs(rt)) < norm:
                break
            alpha *= 0.5
        y, r = trial, rt
    raise EventError(f"algebraic re-solve failed (residual {float(np.max(np.abs(r))):.3e})")


# ---------------------------------------------------------------------------
# Integrators
# ---------------------------------------------------------------------------


def _rms(x):
    return float(np.linalg.norm(x) / math.sqrt(x.size)) if x.size else 0.0


def _compute_R(order, factor):
    I = np.arange(1, order + 1)[:, None]
    J = np.arange(1, order + 1)
    M = np.zeros((order + 1, order + 1))
    M[1:, 1:] = (I - 1 - factor * J) / I
    M[0] = 1
    return np.cumprod(M, axis=0)


def _change_D(D, order, factor):
    R = _compute_R(order, factor)
    U = _compute_R(order, 1)
    RU = R.dot(U)
    D[:order + 1] = RU.T.dot(D[:order + 1])


class _Newton:
    """Shared Jacobian/LU bookkeeping for the implicit methods."""

    def __init__(self, ctx: SimulationContext, stats: dict):
        self.model = ctx.model
        # all integrator arithmetic happens in the canonical state order
        self.perm = self.model.index.canonical_order()
        self.diff = self.model.index.differential[self.perm]
        self.mask = self.diff.astype(float)
        self._ext = np.zeros(len(self.perm))
        self._fint = np.zeros(len(self.perm))
        self.stats = stats
        self.J = None
        self.J_age = 0
        self.J_current = False
        self.lu = None
        self.lu_c = None
        self.n = len(self.mask)
        self._jac_buf = np.empty((self.n, self.n))

    def to_internal(self, u):
        return np.asarray(u, dtype=float)[self.perm]

    def to_external(self, w):
        out = np.empty_like(w)
        out[..., self.perm] = w
        return out

    def f(self, t, w):
        self.stats["rhs_evaluations"] += 1
        self._ext[self.perm] = w
        return np.take(self.model.rhs(t, self._ext), self.perm, out=self._fint)

    def refresh_jacobian(self, t, u):
        f0 = np.array(self.f(t, u), copy=True)
        self.J = forward_jacobian(lambda w: self.f(t, w), u, f0, out=self._jac_buf)
        self.stats["jacobian_evaluations"] += 1
        self.J_age = 0
        self.J_current = True
        self.lu = None

    def factor(self, c):
        if self.lu is None or self.lu_c != c:
            A = np.diag(self.mask) - c * self.J
            self.lu = scipy.linalg.lu_factor(A, check_finite=False)
            self.lu_c = c
            self.stats["lu_decompositions"] += 1
        return self.lu

    def solve(self, b):
        return scipy.linalg.lu_solve(self.lu, b, check_finite=False)


def _bdf_segment(nw: _Newton, t0, t1, u0, opts: SolverOptions, h0, times, rows, stats):
    """Integrate from t0 to exactly t1; returns the last step size used."""
    n = nw.n
    mask = nw.mask
    diff = nw.diff
    rtol, atol = opts.rtol, opts.atol
    newton_tol = max(10 * EPS / rtol, min(0.03, rtol ** 0.5))
    hmin = 1e-14 * max(1.0, abs(t1))
    t = t0
    h = min(h0, opts.dtmax, t1 - t0)
    D = np.zeros((MAX_ORDER + 3, n))
    D[0] = u0
    D[1] = h * mask * nw.f(t, u0)
    order = 1
    n_equal = 0
    if nw.J is None:
        nw.refresh_jacobian(t, u0)
    while t < t1:
        if stats["steps"] >= opts.max_steps:
            raise IntegrationError(f"maximum number of steps ({opts.max_steps}) reached at t={t}")
        # step size limits: dtmax and landing exactly on t1
        h_lim = min(opts.dtmax, t1 - t)
        if t1 - (t + h) < 1e-3 * h:
            h_lim = t1 - t
        if h != h_lim and (h > h_lim or t + h > t1 - 1e-3 * h):
            factor = h_lim / h
            _change_D(D, order, factor)
            h = h_lim
            n_equal = 0
            nw.lu = None
        if nw.J_age >= JAC_REFRESH_STEPS:
            nw.refresh_jacobian(t, D[0])
        t_new = t1 if t1 - (t + h) <= 1e-12 * max(1.0, abs(t1)) else t + h

        y_pred = np.sum(D[:order + 1], axis=0)
        scale = atol + rtol * np.abs(y_pred)
        psi = D[1:order + 1].T.dot(_gamma[1:order + 1]) / _alpha[order]
        c = h / _alpha[order]

        while True:
            nw.factor(c)
            converged, n_iter, y_new, d = _bdf_newton(nw, t_new, y_pred, c, psi, scale, newton_tol, stats)
            if converged or nw.J_current:
                break
            nw.refresh_jacobian(t_new, y_pred)
        if not converged:
            stats["rejected_steps"] += 1
            if h * 0.5 < hmin:
                raise IntegrationError(f"Newton failure with step size below floor at t={t:.6g}")
            _change_D(D, order, 0.5)
            h *= 0.5
            n_equal = 0
            nw.lu = None
            continue

        safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + n_iter)
        scale = atol + rtol * np.abs(y_new)
        err = (_error_const[order] * d / scale)[diff]
        error_norm = _rms(err)
        if error_norm > 1:
            stats["rejected_steps"] += 1
            factor = max(MIN_FACTOR, safety * error_norm ** (-1.0 / (order + 1)))
            if h * factor < hmin:
                raise IntegrationError(f"error test failing with step size below floor at t={t:.6g}")
            _change_D(D, order, factor)
            h *= factor
            n_equal = 0
            nw.lu = None
            continue

        # accepted
        stats["steps"] += 1
        nw.J_current = False
        nw.J_age += 1
        t = t_new
        times.append(t)
        rows.append(y_new.copy())
        n_equal += 1
        D[order + 2] = d - D[order + 1]
        D[order + 1] = d
        for i in reversed(range(order + 1)):
            D[i] += D[i + 1]
        if n_equal < order + 1:
            continue
        if order > 1:
            error_m_norm = _rms((_error_const[order - 1] * D[order] / scale)[diff])
        else:
            error_m_norm = np.inf
        if order < opts.max_order:
            error_p_norm = _rms((_error_const[order + 1] * D[order + 2] / scale)[diff])
        else:
            error_p_norm = np.inf
        norms = np.array([error_m_norm, error_norm, error_p_norm])
        with np.errstate(divide="ignore"):
            factors = norms ** (-1.0 / np.arange(order, order + 3))
        delta_order = int(np.argmax(factors)) - 1
        order += delta_order
        factor = min(MAX_FACTOR, safety * float(np.max(factors)))
        factor = min(factor, opts.dtmax / h)
        _change_D(D, order, factor)
        h *= factor
        n_equal = 0
        nw.lu = None
    return h


def _bdf_newton(nw: _Newton, t_new, y_pred, c, psi, scale, tol, stats):
    mask = nw.mask
    d = np.zeros_like(y_pred)
    y = y_pred.copy()
    dy_norm_old = None
    converged = False
    k = 0
    for k in range(NEWTON_MAXITER):
        stats["newton_iterations"] += 1
        f = nw.f(t_new, y)
        if not np.all(np.isfinite(f)):
            break
        dy = nw.solve(c * f - mask * (psi + d))
        dy_norm = _rms(dy / scale)
        rate = None if dy_norm_old is None else dy_norm / dy_norm_old
        if dy_norm < 1e-6 * tol or np.all(np.abs(dy) <= NOISE * (1.0 + np.abs(y))):
            # correction at round-off level; the rate estimate is meaningless here
            y += dy
            d += dy
            converged = True
            break
        if rate is not None and (rate >= 1 or rate ** (NEWTON_MAXITER - k) / (1 - rate) * dy_norm > tol):
            break
        y += dy
        d += dy
        if dy_norm == 0 or (rate is not None and rate / (1 - rate) * dy_norm < tol):
            converged = True
            break
        dy_norm_old = dy_norm
    return converged, k + 1, y, d


def _trapezoid_segment(nw: _Newton, t0, t1, u0, opts: SolverOptions, times, rows, stats):
    """Fixed-step trapezoidal rule on differential rows, ``g = 0`` on algebraic rows."""
    h_nom = opts.trapezoid_step or opts.dtmax / 4.0
    n_steps = max(1, int(math.ceil((t1 - t0) / h_nom - 1e-9)))
    h = (t1 - t0) / n_steps
    mask = nw.mask
    u = np.array(u0, copy=True)
    f_old = mask * nw.f(t0, u)
    c = 0.5 * h
    if nw.J is None:
        nw.refresh_jacobian(t0, u)
    scale_tol = opts.atol + opts.rtol
    for k in range(1, n_steps + 1):
        t = t1 if k == n_steps else t0 + k * h
        if nw.J_age >= JAC_REFRESH_STEPS:
            nw.refresh_jacobian(t, u)
        ok = False
        for attempt in range(2):
            nw.factor(c)
            y = u + h * f_old
            y[~nw.diff] = u[~nw.diff]
            for _ in range(20):
                stats["newton_iterations"] += 1
                f = nw.f(t, y)
                res = c * f - mask * (y - u) + c * f_old
                dy = nw.solve(res)
                y += dy
                if not np.all(np.isfinite(y)):
                    break
                if np.max(np.abs(dy) / (opts.atol + opts.rtol * np.abs(y))) < 1e-3 * scale_tol / opts.rtol:
                    ok = True
                    break
            if ok:
                break
            nw.refresh_jacobian(t, u)
        if not ok:
            raise IntegrationError(f"trapezoidal Newton failed at t={t:.6g}")
        stats["steps"] += 1
        nw.J_age += 1
        f_old = mask * nw.f(t, y)
        u = y
        times.append(t)
        rows.append(u.copy())
    return h


def _event_key(p):
    return p.time


def simulate(model: SystemModel, u0, tspan=None, perturbations: Iterable | None = None,
             options: SolverOptions | None = None, **kwargs) -> Trajectory:
    """Integrate the system from a consistent initial condition ``u0``.

    ``tspan``, ``perturbations`` and solver options default to the
    ``simulation`` section of the model's system. Keyword arguments override
    individual :class:`SolverOptions` fields. ``model`` is not mutated.
    """
    cfg = model.system.simulation
    if tspan is None:
        tspan = cfg.tspan if cfg is not None else (0.0, 10.0)
    if perturbations is None:
        perturbations = cfg.perturbations if cfg is not None else ()
    if options is None:
        base = {}
        if cfg is not None:
            base = dict(rtol=cfg.rtol, atol=cfg.atol, dtmax=cfg.dtmax, method=cfg.method, max_order=cfg.max_order)
        base.update(kwargs)
        options = SolverOptions(**base)
    elif kwargs:
        options = SolverOptions(**{**options.__dict__, **kwargs})
    t0, t1 = float(tspan[0]), float(tspan[1])
    if not t1 > t0:
        raise ValueError(f"tspan must be increasing, got {tspan}")
    events = sorted(perturbations, key=_event_key)
    for p in events:
        if not t0 <= p.time <= t1:
            raise ValueError(f"perturbation at t={p.time} outside tspan {tspan}")

    ctx = SimulationContext(model)
    stats = dict(steps=0, rejected_steps=0, newton_iterations=0, rhs_evaluations=0,
                 jacobian_evaluations=0, lu_decompositions=0, events=0)
    nw = _Newton(ctx, stats)
    u = np.array(u0, dtype=float, copy=True)
    if u.shape != (nw.n,):
        raise ValueError(f"u0 has shape {u.shape}, expected ({nw.n},)")
    times = [t0]
    rows = [nw.to_internal(u)]
    records = []
    h = options.h0 or min(1e-3, options.dtmax)
    t = t0
    k = 0
    while True:
        # apply all events scheduled at the current time
        while k < len(events) and events[k].time <= t:
            p = events[k]
            before = nw.to_external(rows[-1])
            apply_perturbation(ctx, p)
            after = solve_algebraic(ctx.model, before, t)
            rows[-1] = nw.to_internal(after)
            records.append(EventRecord(t, p, before, after.copy()))
            stats["events"] += 1
            nw.J = None
            h = options.h0 or min(1e-4, options.dtmax)
            k += 1
        if t >= t1:
            break
        t_next = min(events[k].time, t1) if k < len(events) else t1
        u = rows[-1]
        if t_next > t:
            if options.method == "bdf":
                h = _bdf_segment(nw, t, t_next, u, options, h, times, rows, stats)
            else:
                _trapezoid_segment(nw, t, t_next, u, options, times, rows, stats)
        t = t_next
    traj = Trajectory(np.array(times), nw.to_external(np.array(rows)), ctx.model.index, stats, records, ctx.model)
    return traj
