"""Electrical system data model and case-file ingestion.

Case files are YAML (JSON is accepted as a subset) with the sections
``buses``, ``branches``, ``static_injections``, ``generators``,
``inverters`` and ``simulation``. Component slots pick their model with a
``type`` key; every other key is a model parameter. Device parameters are
given on the device ``base_MVA`` and stored on the system base after
loading.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import generators as gl
from . import inverters as il
from .perturbations import BranchTrip, NetworkChange, ReferenceStep, SimulationConfig, YbusChange
from .units import per_unit_rebase

SLACK, PV, PQ = "slack", "PV", "PQ"
STATIC, DYNAMIC = "static", "dynamic"


class CaseError(ValueError):
    """Malformed case document."""


class ValidationError(ValueError):
    """Case document parses but describes an inconsistent system."""


@dataclass(frozen=True)
class Bus:
    number: int
    bus_type: str = PQ
    voltage_magnitude: float = 1.0
    voltage_angle: float = 0.0
    base_kV: float = 230.0
    name: str = ""

    def __post_init__(self):
        if self.bus_type not in (SLACK, PV, PQ):
            raise ValidationError(f"bus {self.number}: unknown bus type {self.bus_type!r}")
        if not self.voltage_magnitude > 0:
            raise ValidationError(f"bus {self.number}: voltage magnitude must be > 0")


@dataclass(frozen=True)
class BranchData:
    name: str
    from_bus: int
    to_bus: int
    R: float = 0.0
    X: float = 0.1
    B_from: float = 0.0
    B_to: float = 0.0
    kind: str = STATIC

    def __post_init__(self):
        if self.kind not in (STATIC, DYNAMIC):
            raise ValidationError(f"branch {self.name}: kind must be 'static' or 'dynamic'")
        if self.X == 0:
            raise ValidationError(f"branch {self.name}: X must be non-zero")
        if self.B_from < 0 or self.B_to < 0:
            raise ValidationError(f"branch {self.name}: shunt susceptances must be >= 0")
        if self.kind == DYNAMIC and not (self.B_from > 0 and self.B_to > 0):
            raise ValidationError(f"dynamic branch {self.name} needs B_from > 0 and B_to > 0")
        if self.from_bus == self.to_bus:
            raise ValidationError(f"branch {self.name} connects bus {self.from_bus} to itself")

    @property
    def impedance(self) -> complex:
        return complex(self.R, self.X)


@dataclass(frozen=True)
class Load:
    """Constant-impedance load specified by its power at the initial voltage."""

    name: str
    bus: int
    P: float = 0.0
    Q: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.P) and math.isfinite(self.Q)):
            raise ValidationError(f"load {self.name}: P and Q must be finite")


@dataclass(frozen=True)
class VoltageSource:
    """Thevenin source; ``V_mag``/``V_angle`` is the internal EMF."""

    name: str
    bus: int
    R_th: float = 0.0
    X_th: float = 1e-5
    V_mag: float = 1.0
    V_angle: float = 0.0

    def __post_init__(self):
        if abs(complex(self.R_th, self.X_th)) == 0:
            raise ValidationError(f"source {self.name}: Thevenin impedance must be non-zero")

    @property
    def emf(self) -> complex:
        return self.V_mag * complex(math.cos(self.V_angle), math.sin(self.V_angle))

    @property
    def impedance(self) -> complex:
        return complex(self.R_th, self.X_th)


@dataclass(frozen=True)
class System:
    base_MVA: float = 100.0
    base_frequency: float = 60.0
    buses: tuple[Bus, ...] = ()
    branches: tuple[BranchData, ...] = ()
    static_injections: tuple = ()
    dynamic_devices: tuple = ()
    simulation: SimulationConfig | None = None
    name: str = ""

    def __post_init__(self):
        for attr in ("buses", "branches", "static_injections", "dynamic_devices"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        validate(self)

    @property
    def Omega_b(self) -> float:
        return 2.0 * math.pi * self.base_frequency

    @property
    def loads(self) -> tuple[Load, ...]:
        return tuple(x for x in self.static_injections if isinstance(x, Load))

    @property
    def sources(self) -> tuple[VoltageSource, ...]:
        return tuple(x for x in self.static_injections if isinstance(x, VoltageSource))

    @property
    def generators(self) -> tuple:
        return tuple(d for d in self.dynamic_devices if isinstance(d, gl.DynamicGenerator))

    @property
    def inverters(self) -> tuple:
        return tuple(d for d in self.dynamic_devices if isinstance(d, il.DynamicInverter))

    def bus_position(self) -> dict[int, int]:
        return {b.number: k for k, b in enumerate(self.buses)}

    def device(self, name: str):
        for d in self.dynamic_devices:
            if d.name == name:
                return d
        raise KeyError(f"no dynamic device named {name!r}")

    def branch(self, name: str) -> BranchData:
        for br in self.branches:
            if br.name == name:
                return br
        raise KeyError(f"no branch named {name!r}")

    def replace(self, **changes) -> "System":
        return dataclasses.replace(self, **changes)


def validate(system: System) -> None:
    if not system.base_MVA > 0:
        raise ValidationError("base_MVA must be > 0")
    if not system.base_frequency > 0:
        raise ValidationError("base_frequency must be > 0")
    numbers = [b.number for b in system.buses]
    if len(set(numbers)) != len(numbers):
        raise ValidationError("duplicate bus numbers")
    known = set(numbers)
    slack = [b for b in system.buses if b.bus_type == SLACK]
    if system.buses and len(slack) != 1:
        raise ValidationError(f"exactly one slack bus required, found {len(slack)}")
    names: set[str] = set()
    for group, items in (("branch", system.branches), ("static injection", system.static_injections),
                         ("dynamic device", system.dynamic_devices)):
        for item in items:
            if item.name in names:
                raise ValidationError(f"duplicate {group} name {item.name!r}")
            names.add(item.name)
    for br in system.branches:
        for bus in (br.from_bus, br.to_bus):
            if bus not in known:
                raise ValidationError(f"branch {br.name} references unknown bus {bus}")
    for item in (*system.static_injections, *system.dynamic_devices):
        if item.bus not in known:
            raise ValidationError(f"{item.name} references unknown bus {item.bus}")
    for src in system.sources:
        if src.bus != slack[0].number:
            raise ValidationError(f"voltage source {src.name} must sit at the slack bus {slack[0].number}")
    if system.simulation is not None:
        devices = {d.name: d for d in system.dynamic_devices}
        branch_names = {b.name for b in system.branches}
        for p in system.simulation.perturbations:
            if isinstance(p, ReferenceStep):
                if p.device not in devices:
                    raise ValidationError(f"perturbation references unknown device {p.device!r}")
                if p.reference not in devices[p.device].references:
                    raise ValidationError(f"{p.device} has no reference {p.reference!r}")
            elif isinstance(p, BranchTrip):
                for name in p.branches:
                    if name not in branch_names:
                        raise ValidationError(f"perturbation references unknown branch {name!r}")
            elif isinstance(p, NetworkChange):
                for bus, _ in p.shunts:
                    if bus not in known:
                        raise ValidationError(f"perturbation references unknown bus {bus}")
                for br in p.branches or ():
                    if br.from_bus not in known or br.to_bus not in known:
                        raise ValidationError(f"perturbation branch {br.name} references unknown bus")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_BUS_TYPES = {"slack": SLACK, "ref": SLACK, "pv": PV, "pq": PQ}


def _angle(entry: dict, key: str, default: float = 0.0) -> float:
    if key in entry:
        value = entry[key]
        if isinstance(value, str):
            text = value.strip().lower()
            if text.endswith("deg"):
                return math.radians(float(text[:-3]))
            if text.endswith("rad"):
                return float(text[:-3])
            return float(text)
        return float(value)
    if key + "_deg" in entry:
        return math.radians(float(entry[key + "_deg"]))
    return default


def _component(entry, registry: dict, slot: str, owner: str):
    if entry is None:
        entry = {"type": "Fixed"}
    if not isinstance(entry, dict) or "type" not in entry:
        raise CaseError(f"{owner}: slot {slot!r} needs a mapping with a 'type' key")
    params = dict(entry)
    kind = params.pop("type")
    try:
        cls = registry[kind]
    except KeyError:
        raise CaseError(f"{owner}: unknown {slot} type {kind!r} (known: {sorted(registry)})") from None
    try:
        return cls(**params)
    except TypeError as exc:
        raise CaseError(f"{owner}: bad parameters for {slot} {kind!r}: {exc}") from None


def _branch(entry: dict, k: int) -> BranchData:
    try:
        return BranchData(
            name=str(entry.get("name", f"branch{k + 1}")),
            from_bus=int(entry["from"] if "from" in entry else entry["from_bus"]),
            to_bus=int(entry["to"] if "to" in entry else entry["to_bus"]),
            R=float(entry.get("R", 0.0)),
            X=float(entry["X"]),
            B_from=float(entry.get("B_from", entry.get("B", 0.0) / 2.0)),
            B_to=float(entry.get("B_to", entry.get("B", 0.0) / 2.0)),
            kind=str(entry.get("kind", STATIC)),
        )
    except KeyError as exc:
        raise CaseError(f"branch entry {k + 1} missing field {exc}") from None


def _perturbation(entry: dict):
    kind = str(entry.get("type", "")).lower()
    t = float(entry["time"])
    if kind in ("ybus_change", "network_change", "three_phase_fault"):
        branches = entry.get("branches")
        if branches is not None:
            branches = tuple(_branch(b, k) for k, b in enumerate(branches))
        shunts = tuple((int(s["bus"]), complex(float(s.get("G", 0.0)), float(s.get("B", 0.0))))
                       for s in entry.get("shunts", ()))
        return NetworkChange(t, branches, shunts)
    if kind == "branch_trip":
        names = entry.get("branches", entry.get("branch"))
        return BranchTrip(t, tuple(names) if isinstance(names, list) else (names,))
    if kind == "reference_step":
        return ReferenceStep(t, str(entry["device"]), str(entry["reference"]), float(entry["value"]))
    raise CaseError(f"unknown perturbation type {entry.get('type')!r}")


def _generator(entry: dict, system_MVA: float):
    name = str(entry["name"])
    dev = gl.DynamicGenerator(
        name=name,
        bus=int(entry["bus"]),
        machine=_component(entry.get("machine"), gl.MACHINES, "machine", name),
        shaft=_component(entry.get("shaft"), gl.SHAFTS, "shaft", name),
        avr=_component(entry.get("avr"), gl.AVRS, "avr", name),
        tg=_component(entry.get("tg", entry.get("prime_mover")), gl.PRIME_MOVERS, "tg", name),
        pss=_component(entry.get("pss"), gl.PSSS, "pss", name),
        omega_ref=float(entry.get("omega_ref", 1.0)),
        V_ref=float(entry.get("V_ref", 1.0)),
        P_ref=float(entry.get("P_ref", 0.0)),
        Q_ref=float(entry.get("Q_ref", 0.0)),
        base_MVA=float(entry.get("base_MVA", system_MVA)),
    )
    return dev.rebased(system_MVA)


_INVERTER_DEFAULTS = {
    "converter": {"type": "Average"},
    "dc_source": {"type": "FixedDC"},
    "inner_loop": {"type": "CascadedPI"},
    "outer_loop": {"type": "VirtualInertia"},
    "pll": {"type": "SRF"},
    "filter": {"type": "LCL"},
}


def _inverter(entry: dict, system_MVA: float):
    name = str(entry["name"])

    def slot(key, registry):
        return _component(entry.get(key, _INVERTER_DEFAULTS[key]), registry, key, name)

    dev = il.DynamicInverter(
        name=name,
        bus=int(entry["bus"]),
        converter=slot("converter", il.CONVERTERS),
        outer=slot("outer_loop", il.OUTER_LOOPS),
        inner=slot("inner_loop", il.INNER_LOOPS),
        dc=slot("dc_source", il.DC_SOURCES),
        pll=slot("pll", il.FREQUENCY_ESTIMATORS),
        filter=slot("filter", il.FILTERS),
        omega_ref=float(entry.get("omega_ref", 1.0)),
        V_ref=float(entry.get("V_ref", 1.0)),
        P_ref=float(entry.get("P_ref", 0.0)),
        Q_ref=float(entry.get("Q_ref", 0.0)),
        base_MVA=float(entry.get("base_MVA", system_MVA)),
    )
    return dev.rebased(system_MVA)


def system_from_dict(doc: dict) -> System:
    if not isinstance(doc, dict):
        raise CaseError("case document must be a mapping")
    try:
        base_MVA = float(doc.get("base_MVA", 100.0))
        buses = []
        for entry in doc.get("buses", ()):
            buses.append(Bus(
                number=int(entry["number"]),
                bus_type=_BUS_TYPES.get(str(entry.get("type", "PQ")).lower(), str(entry.get("type"))),
                voltage_magnitude=float(entry.get("V", entry.get("voltage_magnitude", 1.0))),
                voltage_angle=_angle(entry, "angle"),
                base_kV=float(entry.get("base_kV", 230.0)),
                name=str(entry.get("name", "")),
            ))
        branches = [_branch(e, k) for k, e in enumerate(doc.get("branches", ()))]
        statics = []
        for k, entry in enumerate(doc.get("static_injections", ())):
            kind = str(entry.get("type", "")).lower()
            if kind == "load":
                statics.append(Load(str(entry.get("name", f"load{k + 1}")), int(entry["bus"]),
                                    float(entry.get("P", 0.0)), float(entry.get("Q", 0.0))))
            elif kind in ("source", "voltage_source"):
                statics.append(VoltageSource(
                    str(entry.get("name", f"source{k + 1}")), int(entry["bus"]),
                    R_th=float(entry.get("R_th", 0.0)), X_th=float(entry.get("X_th", 1e-5)),
                    V_mag=float(entry.get("V_mag", 1.0)), V_angle=_angle(entry, "V_angle")))
            else:
                raise CaseError(f"unknown static injection type {entry.get('type')!r}")
        devices = [_generator(e, base_MVA) for e in doc.get("generators", ()) or ()]
        devices += [_inverter(e, base_MVA) for e in doc.get("inverters", ()) or ()]
        sim = doc.get("simulation")
        config = None
        if sim is not None:
            config = SimulationConfig(
                tspan=tuple(float(t) for t in sim.get("tspan", (0.0, 10.0))),
                dtmax=float(sim.get("dtmax", 0.02)),
                rtol=float(sim.get("rtol", 1e-6)),
                atol=float(sim.get("atol", 1e-8)),
                method=str(sim.get("method", "bdf")),
                max_order=int(sim.get("max_order", 5)),
                perturbations=tuple(_perturbation(p) for p in sim.get("perturbations", ()) or ()),
            )
        return System(
            base_MVA=base_MVA,
            base_frequency=float(doc.get("base_frequency", 60.0)),
            buses=tuple(buses),
            branches=tuple(branches),
            static_injections=tuple(statics),
            dynamic_devices=tuple(devices),
            simulation=config,
            name=str(doc.get("name", "")),
        )
    except ValidationError:
        raise
    except (KeyError, TypeError) as exc:
        raise CaseError(f"malformed case document: {exc!r}") from None
    except ValueError as exc:
        if isinstance(exc, CaseError):
            raise
        raise ValidationError(str(exc)) from None


def load_case(path) -> System:
    """Parse and validate a case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"cannot read case file {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CaseError(f"{path}: {exc}") from None
    return system_from_dict(doc)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _component_dict(comp) -> dict:
    out = {"type": comp.type_name}
    for f in dataclasses.fields(comp):
        out[f.name] = getattr(comp, f.name)
    return out


def _branch_dict(br: BranchData) -> dict:
    return {"name": br.name, "from": br.from_bus, "to": br.to_bus, "R": br.R, "X": br.X,
            "B_from": br.B_from, "B_to": br.B_to, "kind": br.kind}


def _perturbation_dict(p) -> dict:
    if isinstance(p, NetworkChange):
        out = {"type": "network_change", "time": p.time}
        if p.branches is not None:
            out["branches"] = [_branch_dict(b) for b in p.branches]
        if p.shunts:
            out["shunts"] = [{"bus": b, "G": y.real, "B": y.imag} for b, y in p.shunts]
        return out
    if isinstance(p, BranchTrip):
        return {"type": "branch_trip", "time": p.time, "branches": list(p.branches)}
    if isinstance(p, ReferenceStep):
        return {"type": "reference_step", "time": p.time, "device": p.device,
                "reference": p.reference, "value": p.value}
    if isinstance(p, YbusChange):
        raise CaseError("matrix-valued YbusChange cannot be written to a case file; use network_change")
    raise TypeError(f"unknown perturbation {p!r}")


def system_to_dict(system: System) -> dict:
    doc: dict = {
        "name": system.name,
        "base_MVA": system.base_MVA,
        "base_frequency": system.base_frequency,
        "buses": [{"number": b.number, "type": b.bus_type, "V": b.voltage_magnitude, "angle": b.voltage_angle,
                   "base_kV": b.base_kV, "name": b.name} for b in system.buses],
        "branches": [_branch_dict(b) for b in system.branches],
        "static_injections": [],
        "generators": [],
        "inverters": [],
    }
    for x in system.static_injections:
        if isinstance(x, Load):
            doc["static_injections"].append({"type": "load", "name": x.name, "bus": x.bus, "P": x.P, "Q": x.Q})
        else:
            doc["static_injections"].append({"type": "source", "name": x.name, "bus": x.bus, "R_th": x.R_th,
                                             "X_th": x.X_th, "V_mag": x.V_mag, "V_angle": x.V_angle})
    for d in system.dynamic_devices:
        entry = {"name": d.name, "bus": d.bus, "base_MVA": d.base_MVA}
        for ref in d.references:
            entry[ref] = getattr(d, ref)
        if isinstance(d, gl.DynamicGenerator):
            for slot in d.slots:
                entry[slot] = _component_dict(getattr(d, slot))
            doc["generators"].append(entry)
        else:
            entry.update({
                "converter": _component_dict(d.converter),
                "outer_loop": _component_dict(d.outer),
                "inner_loop": _component_dict(d.inner),
                "dc_source": _component_dict(d.dc),
                "pll": _component_dict(d.pll),
                "filter": _component_dict(d.filter),
            })
            doc["inverters"].append(entry)
    if system.simulation is not None:
        sim = system.simulation
        doc["simulation"] = {
            "tspan": list(sim.tspan), "dtmax": sim.dtmax, "rtol": sim.rtol, "atol": sim.atol,
            "method": sim.method, "max_order": sim.max_order,
            "perturbations": [_perturbation_dict(p) for p in sim.perturbations],
        }
    return doc


def dump_case(system: System, path=None) -> str:
    """Serialize ``system`` (parameters on the system base) to YAML."""
    text = yaml.safe_dump(system_to_dict(system), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


__all__ = [
    "Bus", "BranchData", "Load", "VoltageSource", "System", "CaseError", "ValidationError",
    "load_case", "dump_case", "system_from_dict", "system_to_dict", "per_unit_rebase", "validate",
    "SLACK", "PV", "PQ", "STATIC", "DYNAMIC",
]
