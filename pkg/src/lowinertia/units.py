"""Per-unit base conversion.

Component dataclasses tag each base-dependent field with ``metadata={"pu": kind}``
where ``kind`` is one of

* ``"z"``  impedance-like (ohms, droop R, voltage-per-current gains)
* ``"y"``  admittance-like (susceptance, current-per-voltage gains)
* ``"s"``  power-like (MW, MVAr, inertia H, damping, torque per radian)

Untagged fields (voltages, time constants, dimensionless gains) are base
independent.
"""

from __future__ import annotations

import dataclasses
import math

_KINDS = {"impedance": "z", "z": "z", "admittance": "y", "y": "y", "power": "s", "s": "s", "current": "s"}


def per_unit_rebase(value: float, device_MVA: float, system_MVA: float, kind: str = "impedance") -> float:
    """Convert ``value`` from the device MVA base to the system MVA base.

    Impedances scale by ``system_MVA / device_MVA``; powers, currents and
    admittances by the reciprocal.
    """
    if not (device_MVA > 0 and system_MVA > 0) or not (math.isfinite(device_MVA) and math.isfinite(system_MVA)):
        raise ValueError(f"MVA bases must be positive and finite, got {device_MVA!r} and {system_MVA!r}")
    try:
        k = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown per-unit quantity kind {kind!r}") from None
    ratio = system_MVA / device_MVA
    if k == "z":
        return value * ratio
    return value / ratio


def rebase_dataclass(obj, device_MVA: float, system_MVA: float):
    """Return a copy of ``obj`` with every ``pu``-tagged field rebased."""
    if device_MVA == system_MVA:
        return obj
    changes = {}
    for f in dataclasses.fields(obj):
        kind = f.metadata.get("pu")
        if kind is None:
            continue
        value = getattr(obj, f.name)
        if value is None:
            continue
        changes[f.name] = per_unit_rebase(value, device_MVA, system_MVA, kind)
    return dataclasses.replace(obj, **changes)


def z(default=dataclasses.MISSING):
    return dataclasses.field(default=default, metadata={"pu": "z"})


def y(default=dataclasses.MISSING):
    return dataclasses.field(default=default, metadata={"pu": "y"})


def s(default=dataclasses.MISSING):
    return dataclasses.field(default=default, metadata={"pu": "s"})
