"""Global state indexing and the full-system residual.

Global layout: two entries per bus (``vr``, ``vi``) in bus order, then the
local states of every dynamic device in declaration order, then the series
current (``il_r``, ``il_i``) of every dynamic branch. Bus voltages are
algebraic unless the bus terminates a dynamic branch.

The residual has the semi-explicit index-1 form::

    algebraic rows:    g(y, x)
    differential rows: f(y, x) - du
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .generators import DynamicGenerator, GeneratorPorts
from .inverters import InverterPorts
from .network import build_ybus
from .system import DYNAMIC, System


def bus_key(number: int) -> str:
    return f"bus{number}"


STATE_ALIASES = {"δ": "delta", "ω": "omega", "θ_olc": "theta_olc", "ω_olc": "omega_olc"}


class StateIndex:
    """Two-level map ``device -> state -> global position`` plus the partition mask."""

    def __init__(self, system: System):
        self.map: dict[str, dict[str, int]] = {}
        labels: list[tuple[str, str]] = []
        diff: list[bool] = []
        promoted = set()
        for br in system.branches:
            if br.kind == DYNAMIC:
                promoted.update((br.from_bus, br.to_bus))
        for bus in system.buses:
            key = bus_key(bus.number)
            self._add(key, ("vr", "vi"), (bus.number in promoted,) * 2, labels, diff)
        for dev in system.dynamic_devices:
            if dev.name in self.map:
                raise ValueError(f"duplicate device name {dev.name!r}")
            self._add(dev.name, dev.state_names, dev.differential_mask, labels, diff)
        for br in system.branches:
            if br.kind == DYNAMIC:
                if br.name in self.map:
                    raise ValueError(f"duplicate name {br.name!r}")
                self._add(br.name, ("il_r", "il_i"), (True, True), labels, diff)
        self.labels = tuple(labels)
        self.differential = np.array(diff, dtype=bool)
        self.n_x = int(self.differential.sum())
        self.n_y = len(diff) - self.n_x

    def _add(self, key, names, mask, labels, diff):
        local = {}
        for name, is_diff in zip(names, mask):
            local[name] = len(labels)
            labels.append((key, name))
            diff.append(bool(is_diff))
        self.map[key] = local

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, key: tuple[str, str]) -> int:
        device, state = key
        state = STATE_ALIASES.get(state, state)
        try:
            local = self.map[device]
        except KeyError:
            raise KeyError(f"unknown device {device!r}; available: {', '.join(self.map)}") from None
        try:
            return local[state]
        except KeyError:
            raise KeyError(f"unknown state {key[1]!r} for {device!r}; available: {', '.join(local)}") from None

    def slice(self, device: str) -> slice:
        local = self.map[device]
        positions = list(local.values())
        return slice(positions[0], positions[-1] + 1) if positions else slice(0, 0)

    @property
    def x_positions(self) -> np.ndarray:
        return np.flatnonzero(self.differential)

    @property
    def y_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.differential)

    def canonical_order(self) -> np.ndarray:
        """Permutation sorting positions by ``(key, state)``.

        Solvers work in this order so their floating-point operations do not
        depend on the order in which devices were declared.
        """
        return np.array(sorted(range(len(self.labels)), key=self.labels.__getitem__), dtype=np.intp)

    def column_names(self) -> list[str]:
        return [f"{d}.{s}" for d, s in self.labels]


def build_state_index(system: System) -> StateIndex:
    return StateIndex(system)


class SystemModel:
    """Evaluation context: immutable system plus mutable network matrix and references.

    All scratch buffers are allocated here; :meth:`residual` writes into the
    caller's ``out`` array. Use :meth:`copy` to get an independent context.
    """

    def __init__(self, system: System, load_voltages: dict[str, float] | None = None,
                 index: StateIndex | None = None):
        self.system = system
        self.index = index or StateIndex(system)
        self.Omega_b = system.Omega_b
        self.n_bus = len(system.buses)
        pos = system.bus_position()
        self._pos = pos
        load_voltages = load_voltages or {}
        vmag = {b.number: b.voltage_magnitude for b in system.buses}
        self.load_admittance = np.zeros(self.n_bus, dtype=complex)
        for load in system.loads:
            v0 = load_voltages.get(load.name, vmag[load.bus])
            self.load_admittance[pos[load.bus]] += complex(load.P, -load.Q) / (v0 * v0)
        self.sources = [(pos[s.bus], s.emf, 1.0 / s.impedance) for s in system.sources]
        self.devices = list(system.dynamic_devices)
        self._device_slots = []
        n = len(self.index)
        self._f = np.zeros(n)
        for dev in self.devices:
            sl = self.index.slice(dev.name)
            ports = GeneratorPorts() if isinstance(dev, DynamicGenerator) else InverterPorts()
            self._device_slots.append((sl.start, sl.stop, pos[dev.bus], self._f[sl], ports))
        self.dynamic_branches = []
        cap = np.zeros(self.n_bus)
        for br in system.branches:
            if br.kind == DYNAMIC:
                k = self.index[(br.name, "il_r")]
                f, t = pos[br.from_bus], pos[br.to_bus]
                self.dynamic_branches.append((k, f, t, br.R, br.X))
                cap[f] += br.B_from
                cap[t] += br.B_to
        self.capacitance = cap
        self.promoted = [k for k in range(self.n_bus) if cap[k] > 0]
        self._mask = self.index.differential.astype(float)
        self._v = np.zeros(self.n_bus, dtype=complex)
        self._Yv = np.zeros(self.n_bus, dtype=complex)
        self._inj = np.zeros(self.n_bus, dtype=complex)
        self._mis = np.zeros(self.n_bus, dtype=complex)
        self.set_ybus(build_ybus(system.branches, system.buses))

    # -- mutable context ---------------------------------------------------

    def set_ybus(self, Y: np.ndarray) -> None:
        """Install a static-network admittance matrix (loads are added internally)."""
        Y = np.array(Y, dtype=complex)
        if Y.shape != (self.n_bus, self.n_bus):
            raise ValueError(f"Ybus shape {Y.shape} does not match {self.n_bus} buses")
        self.ybus = Y
        self._Y_eff = Y + np.diag(self.load_admittance)

    def set_reference(self, device: str, reference: str, value: float) -> None:
        for k, dev in enumerate(self.devices):
            if dev.name == device:
                if reference not in dev.references:
                    raise KeyError(f"{device} has no reference {reference!r}")
                self.devices[k] = replace(dev, **{reference: float(value)})
                return
        raise KeyError(f"unknown device {device!r}")

    def device(self, name: str):
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise KeyError(name)

    def copy(self) -> "SystemModel":
        other = SystemModel.__new__(SystemModel)
        other.__dict__.update(self.__dict__)
        other.devices = list(self.devices)
        other._f = np.zeros_like(self._f)
        other._device_slots = [(a, b, p, other._f[a:b], type(ports)()) for a, b, p, _, ports in self._device_slots]
        other._v = np.zeros_like(self._v)
        other._Yv = np.zeros_like(self._Yv)
        other._inj = np.zeros_like(self._inj)
        other._mis = np.zeros_like(self._mis)
        return other

    # -- evaluation --------------------------------------------------------

    def rhs(self, t: float, u: np.ndarray) -> np.ndarray:
        """Evaluate ``[g; f]`` (rows in index order) into the internal buffer and return it."""
        n = self.n_bus
        v = self._v
        v.real[:] = u[0:2 * n:2]
        v.imag[:] = u[1:2 * n:2]
        np.dot(self._Y_eff, v, out=self._Yv)
        inj = self._inj
        inj.fill(0.0)
        for k, emf, ysrc in self.sources:
            inj[k] += (emf - v[k]) * ysrc
        ul = u.tolist()
        Ob = self.Omega_b
        f = self._f
        for dev, (a, b, k, view, ports) in zip(self.devices, self._device_slots):
            vk = v[k]
            ir, ii = dev.evaluate(ul[a:b], vk.real, vk.imag, Ob, view, ports)
            inj[k] += complex(ir, ii)
        for k, fp, tp, R, X in self.dynamic_branches:
            il = complex(ul[k], ul[k + 1])
            inj[fp] -= il
            inj[tp] += il
            d = Ob / X * ((v[fp] - v[tp]) - complex(R, X) * il)
            f[k] = d.real
            f[k + 1] = d.imag
        mis = self._mis
        np.subtract(inj, self._Yv, out=mis)
        f[0:2 * n:2] = mis.real
        f[1:2 * n:2] = mis.imag
        for k in self.promoted:
            C = self.capacitance[k]
            d = Ob / C * (mis[k] - 1j * C * v[k])
            f[2 * k] = d.real
            f[2 * k + 1] = d.imag
        return f

    def residual(self, t: float, u: np.ndarray, du: np.ndarray, out: np.ndarray) -> np.ndarray:
        """Write ``[g; f - du]`` into ``out``."""
        f = self.rhs(t, u)
        np.multiply(du, self._mask, out=out)
        np.subtract(f, out, out=out)
        return out

    def injections(self, u: np.ndarray) -> np.ndarray:
        """Complex current injected at each bus by sources and devices (loads excluded)."""
        self.rhs(0.0, u)
        inj = self._inj.copy()
        for k, fp, tp, R, X in self.dynamic_branches:
            il = complex(u[k], u[k + 1])
            inj[fp] += il
            inj[tp] -= il
        return inj

    def bus_voltages(self, u: np.ndarray) -> np.ndarray:
        n = self.n_bus
        return u[0:2 * n:2] + 1j * u[1:2 * n:2]


def system_residual(du, u, model: SystemModel, t: float = 0.0, out: np.ndarray | None = None) -> np.ndarray:
    if out is None:
        out = np.empty(len(model.index))
    return model.residual(t, u, du, out)


def device_ports(model: SystemModel, name: str):
    for dev, slot in zip(model.devices, model._device_slots):
        if dev.name == name:
            return slot[4]
    raise KeyError(name)

