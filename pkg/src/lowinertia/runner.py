"""Case resolution and end-to-end runs that write result artifacts."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .initialization import EquilibriumError, PowerFlowError, initialize
from .generators import InfeasibleOperatingPoint
from .small_signal import small_signal_analysis, write_eigenvalue_csv
from .solver import IntegrationError, simulate, write_csv
from .system import CaseError, ValidationError, load_case

logger = logging.getLogger(__name__)

OUT_ENV = "LOWINERTIA_OUT"

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_INIT = 4
EXIT_INTEGRATION = 5
EXIT_OTHER = 1


class RunFailure(RuntimeError):
    def __init__(self, category: str, code: int, message: str):
        super().__init__(message)
        self.category = category
        self.code = code


def bundled_cases() -> list[str]:
    root = resources.files("lowinertia") / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_case(name_or_path) -> Path:
    """A path to an existing file, or the name of a bundled case."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    candidate = resources.files("lowinertia") / "cases" / f"{name_or_path}.yaml"
    if candidate.is_file():
        return Path(str(candidate))
    raise CaseError(f"no case file {str(name_or_path)!r} and no bundled case by that name "
                    f"(bundled: {', '.join(bundled_cases())})")


def default_output_dir(case_name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "results")) / case_name


@dataclass
class RunResult:
    case: str
    out_dir: Path
    exit_code: int = EXIT_OK
    category: str = "ok"
    message: str = ""
    artifacts: list = field(default_factory=list)
    elapsed: float = 0.0


PLOT_TEMPLATE = '''"""Plot selected series from trajectory.csv (requires matplotlib)."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
SERIES = {series!r}

with open(HERE / "trajectory.csv", newline="") as fh:
    reader = csv.reader(fh)
    header = next(reader)
    rows = [[float(v) for v in row] for row in reader]

names = sys.argv[1:] or SERIES
t = [r[0] for r in rows]
fig, axes = plt.subplots(len(names), 1, sharex=True, squeeze=False, figsize=(8, 2.5 * len(names)))
for ax, name in zip(axes[:, 0], names):
    k = header.index(name)
    ax.plot(t, [r[k] for r in rows])
    ax.set_ylabel(name)
    ax.grid(True)
axes[-1, 0].set_xlabel("time [s]")
fig.tight_layout()
fig.savefig(HERE / "trajectory.png", dpi=120)
print("wrote", HERE / "trajectory.png")
'''


def _default_series(index) -> list[str]:
    names = []
    for key, state in index.labels:
        if state in ("delta", "omega", "omega_olc"):
            names.append(f"{key}.{state}")
    return names or [f"{k}.{s}" for k, s in index.labels[:2]]


def _report(case_name, op, elapsed_init) -> dict:
    pf = op.powerflow
    return {
        "case": case_name,
        "residual_inf_norm": op.residual_norm,
        "n_states": len(op.u0),
        "n_differential": op.model.index.n_x,
        "n_algebraic": op.model.index.n_y,
        "powerflow": {
            "iterations": pf.iterations,
            "mismatch": pf.mismatch,
            "buses": [{"bus": b.number, "V": float(abs(v)), "angle_rad": float(np.angle(v)),
                       "P": float(s.real), "Q": float(s.imag)}
                      for b, v, s in zip(op.system.buses, pf.V, pf.S)],
        },
        "adjusted": op.report,
        "initialization_seconds": elapsed_init,
    }


def run_case(case, out_dir=None, tspan=None, dtmax=None, rtol=None, atol=None, method=None,
             small_signal=False) -> RunResult:
    """Load, initialize, optionally linearize and simulate ``case``; write artifacts.

    Raises :class:`RunFailure` tagged with the failing stage.
    """
    t_start = time.perf_counter()
    try:
        path = resolve_case(case)
        system = load_case(path)
    except (CaseError, ValidationError) as exc:
        raise RunFailure("parse", EXIT_PARSE, str(exc)) from None
    name = system.name or path.stem
    out = Path(out_dir) if out_dir is not None else default_output_dir(name)

    try:
        t0 = time.perf_counter()
        op = initialize(system)
        elapsed_init = time.perf_counter() - t0
    except (PowerFlowError, EquilibriumError, InfeasibleOperatingPoint, ValueError, ZeroDivisionError) as exc:
        raise RunFailure("initialization", EXIT_INIT, str(exc)) from None

    ss = None
    if small_signal:
        try:
            ss = small_signal_analysis(op.model, op.u0)
        except np.linalg.LinAlgError as exc:
            raise RunFailure("initialization", EXIT_INIT, f"small-signal analysis failed: {exc}") from None

    overrides = {k: v for k, v in dict(dtmax=dtmax, rtol=rtol, atol=atol, method=method).items() if v is not None}
    try:
        traj = simulate(op.model, op.u0, tspan=tspan, **overrides)
    except (IntegrationError, np.linalg.LinAlgError) as exc:
        raise RunFailure("integration", EXIT_INTEGRATION, str(exc)) from None

    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    write_csv(traj, out / "trajectory.csv")
    artifacts.append(out / "trajectory.csv")
    report = _report(name, op, elapsed_init)
    report["solver"] = {k: int(v) for k, v in traj.stats.items()}
    report["events"] = [{"time": e.time, "type": type(e.perturbation).__name__} for e in traj.events]
    if ss is not None:
        report["small_signal"] = {"n_eigenvalues": len(ss.eigenvalues), "stable": ss.stable}
        write_eigenvalue_csv(ss, out / "eigenvalues.csv")
        artifacts.append(out / "eigenvalues.csv")
    (out / "init_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    artifacts.append(out / "init_report.json")
    (out / "plot_trajectory.py").write_text(PLOT_TEMPLATE.format(series=_default_series(traj.index)))
    artifacts.append(out / "plot_trajectory.py")
    return RunResult(name, out, artifacts=artifacts, elapsed=time.perf_counter() - t_start)


def run_case_safe(case, **kwargs) -> RunResult:
    """Like :func:`run_case` but returns failures as a :class:`RunResult`."""
    try:
        return run_case(case, **kwargs)
    except RunFailure as exc:
        return RunResult(str(case), Path(kwargs.get("out_dir") or "."), exc.code, exc.category, str(exc))
    except Exception as exc:  # noqa: BLE001 - reported to the caller as a generic failure
        logger.exception("unexpected failure in %s", case)
        return RunResult(str(case), Path(kwargs.get("out_dir") or "."), EXIT_OTHER, "error", repr(exc))
