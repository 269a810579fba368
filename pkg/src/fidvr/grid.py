"""Static feeder model: admittance assembly, power flow and Jacobian.

All quantities are per unit on the network's ``base_mva``. Loads follow the
consumption convention: a positive constant-power entry or a positive-real
shunt admittance draws power from the bus.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg


class GridError(ValueError):
    """Invalid network data."""


class PowerFlowDivergedError(RuntimeError):
    """Fixed-point power flow did not converge."""

    def __init__(self, message, iterations, last_step):
        super().__init__(message)
        self.iterations = iterations
        self.last_step = last_step


class SingularJacobianError(np.linalg.LinAlgError):
    """Operating point sits at (or beyond) the nose of the PV curve."""


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float = 4.8
    is_source: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    impedance: complex
    shunt_b: float = 0.0

    def __post_init__(self):
        if abs(self.impedance) <= 0.0:
            raise GridError(f"branch {self.from_bus}-{self.to_bus} has zero impedance")


@dataclass(frozen=True)
class TheveninSource:
    emf: complex = 1.0 + 0.0j
    impedance: complex = 0.01 + 0.05j

    def __post_init__(self):
        if not 0.9 <= abs(self.emf) <= 1.1:
            raise GridError(f"source emf magnitude {abs(self.emf):.4f} outside [0.9, 1.1]")
        if abs(self.impedance) <= 0.0:
            raise GridError("source impedance must be non-zero")


@dataclass(frozen=True)
class FeederNetwork:
    """Radial feeder fed by a Thevenin equivalent at its single source bus."""

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    source: TheveninSource = field(default_factory=TheveninSource)
    base_mva: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise GridError("bus ids are not unique")
        sources = [b.id for b in self.buses if b.is_source]
        if len(sources) != 1:
            raise GridError(f"expected exactly one source bus, found {len(sources)}")
        if self.base_mva <= 0:
            raise GridError("base_mva must be positive")
        object.__setattr__(self, "_index_map", {b: k for k, b in enumerate(ids)})
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise GridError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if len(self.branches) != len(self.buses) - 1:
            raise GridError(
                f"radial network needs {len(self.buses) - 1} branches, got {len(self.branches)}"
            )
        # connectivity from the source; with n-1 branches this also rules out loops
        adj = {i: [] for i in ids}
        for br in self.branches:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
        seen = {sources[0]}
        stack = [sources[0]]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(ids):
            raise GridError("network is not connected")

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def source_bus(self) -> int:
        return next(b.id for b in self.buses if b.is_source)

    def index(self, bus_id: int) -> int:
        try:
            return self._index_map[bus_id]
        except KeyError:
            raise GridError(f"unknown bus {bus_id}") from None

    def parent_map(self) -> dict[int, tuple[int, Branch]]:
        """Map each non-source bus to (upstream bus, connecting branch)."""
        adj: dict[int, list[tuple[int, Branch]]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            adj[br.from_bus].append((br.to_bus, br))
            adj[br.to_bus].append((br.from_bus, br))
        parents = {}
        stack = [self.source_bus]
        seen = {self.source_bus}
        while stack:
            bus = stack.pop()
            for nb, br in adj[bus]:
                if nb not in seen:
                    parents[nb] = (bus, br)
                    seen.add(nb)
                    stack.append(nb)
        return parents

    def subtree(self, first_bus: int) -> list[int]:
        """Buses downstream of (and including) ``first_bus``."""
        parents = self.parent_map()
        children: dict[int, list[int]] = {}
        for child, (par, _) in parents.items():
            children.setdefault(par, []).append(child)
        out, stack = [], [first_bus]
        while stack:
            bus = stack.pop()
            out.append(bus)
            stack.extend(children.get(bus, []))
        return out

    def path_impedance(self, a: int, b: int) -> complex:
        """Series impedance along the unique path between two buses."""
        parents = self.parent_map()

        def to_root(bus):
            chain = [bus]
            while bus in parents:
                bus = parents[bus][0]
                chain.append(bus)
            return chain

        pa, pb = to_root(a), to_root(b)
        common = next(x for x in pa if x in set(pb))
        z = 0j
        for chain in (pa, pb):
            for bus in chain[: chain.index(common)]:
                z += parents[bus][1].impedance
        return z

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "base_mva": self.base_mva,
            "buses": [{"id": b.id, "base_kv": b.base_kv, "is_source": b.is_source} for b in self.buses],
            "branches": [
                {
                    "from": br.from_bus,
                    "to": br.to_bus,
                    "r_pu": br.impedance.real,
                    "x_pu": br.impedance.imag,
                    "b_pu": br.shunt_b,
                }
                for br in self.branches
            ],
            "source": {
                "emf_pu": abs(self.source.emf),
                "r_pu": self.source.impedance.real,
                "x_pu": self.source.impedance.imag,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeederNetwork":
        from fidvr import schemas

        schemas.validate(data, "network")
        src = data["source"]
        return cls(
            buses=[Bus(int(b["id"]), float(b.get("base_kv", 4.8)), bool(b.get("is_source", False)))
                   for b in data["buses"]],
            branches=[
                Branch(int(br["from"]), int(br["to"]), complex(br["r_pu"], br["x_pu"]), float(br.get("b_pu", 0.0)))
                for br in data["branches"]
            ],
            source=TheveninSource(complex(src["emf_pu"], 0.0), complex(src["r_pu"], src["x_pu"])),
            base_mva=float(data["base_mva"]),
        )

    @classmethod
    def load(cls, path) -> "FeederNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def build_admittance_matrix(net: FeederNetwork) -> np.ndarray:
    """Bus admittance matrix of the branches (pi model, half charging per end).

    The Thevenin source is not included; see :func:`source_admittance`.
    """
    n = net.n
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if abs(br.impedance) <= 0.0:
            raise GridError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        i, j = net.index(br.from_bus), net.index(br.to_bus)
        y = 1.0 / br.impedance
        ysh = 0.5j * br.shunt_b
        Y[i, i] += y + ysh
        Y[j, j] += y + ysh
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def source_admittance(net: FeederNetwork) -> tuple[int, complex, complex]:
    """(source bus index, Thevenin admittance, Norton current injection)."""
    y = 1.0 / net.source.impedance
    return net.index(net.source_bus), y, net.source.emf * y


def stall_admittance(r_stall: float, x_stall: float) -> complex:
    """Admittance ``G - jB`` of a locked-rotor motor with impedance ``r + jx``."""
    if r_stall <= 0 or x_stall < 0:
        raise ValueError("stall resistance must be positive and reactance non-negative")
    d = r_stall * r_stall + x_stall * x_stall
    return complex(r_stall / d, -x_stall / d)


def _effective_pq(s_load, v, v_break, i_load=None):
    """Voltage-dependent demand of the non-admittance load parts.

    Constant-power demand is converted to constant impedance below
    ``v_break``; constant-current demand ``i_load`` is specified as its power
    at 1 p.u. and scales with ``|V|``.
    """
    vm = np.abs(v)
    scale = np.where(vm < v_break, (vm / v_break) ** 2, 1.0)
    s = s_load * scale
    if i_load is not None:
        s = s + i_load * vm
    return s


def solve_power_flow(
    net: FeederNetwork,
    s_load=None,
    y_load=None,
    *,
    i_load=None,
    v0=None,
    y_bus=None,
    tol: float = 1e-10,
    max_iter: int = 100,
    v_break: float = 0.5,
) -> np.ndarray:
    """Solve the feeder by fixed-point current injection.

    Admittance loads are absorbed into the bus matrix; constant-power demand
    enters as the current ``conj(S / V)`` and is refreshed until the largest
    voltage update is below ``tol``. Below ``v_break`` constant-power demand
    falls off with ``|V|^2`` so that fault-on states stay solvable.

    Parameters
    ----------
    s_load, y_load : array_like of complex, optional
        Per-bus constant-power demand and shunt admittance (consumption
        convention), ordered as ``net.buses``.
    i_load : array_like of complex, optional
        Constant-current demand, given as its complex power at 1 p.u.
    v0 : array_like, optional
        Initial voltage guess; defaults to the source emf everywhere.
    y_bus : ndarray, optional
        Precomputed :func:`build_admittance_matrix` result.

    Raises
    ------
    PowerFlowDivergedError
        If ``max_iter`` updates do not reach ``tol``.
    """
    n = net.n
    s_load = np.zeros(n, complex) if s_load is None else np.asarray(s_load, dtype=complex)
    y_load = np.zeros(n, complex) if y_load is None else np.asarray(y_load, dtype=complex)
    Y = build_admittance_matrix(net) if y_bus is None else y_bus
    k, ys, i_src = source_admittance(net)
    Yt = Y + np.diag(y_load)
    Yt[k, k] += ys
    rhs0 = np.zeros(n, complex)
    rhs0[k] = i_src
    lu = scipy.linalg.lu_factor(Yt, check_finite=False)
    v = np.full(n, net.source.emf, dtype=complex) if v0 is None else np.array(v0, dtype=complex)
    return fixed_point(lu, rhs0, s_load, i_load, v, tol=tol, max_iter=max_iter, v_break=v_break)


def fixed_point(lu, rhs0, s_load, i_load, v, *, tol=1e-10, max_iter=100, v_break=0.5):
    """Iterate ``V = Yt^-1 (I_src - conj(S(V) / V))`` on a factored matrix."""
    if not np.any(s_load) and (i_load is None or not np.any(i_load)):
        return scipy.linalg.lu_solve(lu, rhs0, check_finite=False)
    step = np.inf
    for _ in range(max_iter):
        vsafe = np.where(np.abs(v) < 1e-6, 1e-6, v)
        rhs = rhs0 - np.conj(_effective_pq(s_load, vsafe, v_break, i_load) / vsafe)
        v_new = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        step = np.max(np.abs(v_new - v))
        v = v_new
        if not np.isfinite(step):
            break
        if step <= tol:
            return v
    raise PowerFlowDivergedError(
        f"power flow did not converge in {max_iter} iterations (last step {step:.3e})", max_iter, step
    )


def bus_mismatch(net, v, s_load=None, y_load=None, v_break: float = 0.5, y_bus=None, i_load=None) -> np.ndarray:
    """KCL current residual at every bus for a candidate solution."""
    n = net.n
    v = np.asarray(v, dtype=complex)
    s_load = np.zeros(n, complex) if s_load is None else np.asarray(s_load, dtype=complex)
    y_load = np.zeros(n, complex) if y_load is None else np.asarray(y_load, dtype=complex)
    Y = build_admittance_matrix(net) if y_bus is None else y_bus
    k, ys, i_src = source_admittance(net)
    i_net = Y @ v + y_load * v + np.conj(_effective_pq(s_load, v, v_break, i_load) / v)
    i_net[k] += ys * v[k] - i_src
    return i_net


def power_injections(net, v, y_load=None, y_bus=None) -> np.ndarray:
    """Complex power leaving each bus into branches, shunt loads and the source."""
    n = net.n
    y_load = np.zeros(n, complex) if y_load is None else np.asarray(y_load, dtype=complex)
    Y = build_admittance_matrix(net) if y_bus is None else y_bus
    k, ys, i_src = source_admittance(net)
    Yt = Y + np.diag(y_load)
    Yt[k, k] += ys
    i = Yt @ v
    i[k] -= i_src
    return v * np.conj(i)


def compute_jacobian(net: FeederNetwork, v, y_load=None, y_bus=None) -> np.ndarray:
    """Polar power-flow Jacobian ``d(P, Q) / d(angle, |V|)`` over all buses.

    The Thevenin emf is the angle reference, so every network bus carries
    both unknowns and the matrix is ``2n x 2n``. Admittance loads are part of
    the calculated injection; constant-power demand is not voltage dependent
    above ``v_break`` and drops out.
    """
    n = net.n
    v = np.asarray(v, dtype=complex)
    y_load = np.zeros(n, complex) if y_load is None else np.asarray(y_load, dtype=complex)
    Y = build_admittance_matrix(net) if y_bus is None else y_bus
    k, ys, i_src = source_admittance(net)
    Yt = Y + np.diag(y_load)
    Yt[k, k] += ys
    i = Yt @ v
    i[k] -= i_src
    vnorm = v / np.abs(v)
    dS_dVm = np.diag(v) @ np.conj(Yt @ np.diag(vnorm)) + np.diag(np.conj(i) * vnorm)
    dS_dVa = 1j * np.diag(v) @ np.conj(np.diag(i) - Yt @ np.diag(v))
    J = np.block([[dS_dVa.real, dS_dVm.real], [dS_dVa.imag, dS_dVm.imag]])
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularJacobianError(f"power-flow Jacobian is singular (cond={cond:.2e})")
    return J


def mismatch_function(net, y_load=None, s_load=None, y_bus=None):
    """Return ``f(angle, |V|) -> [P; Q]`` residual used for finite-difference checks."""
    n = net.n
    s_load = np.zeros(n, complex) if s_load is None else np.asarray(s_load, dtype=complex)

    def f(x):
        v = x[n:] * np.exp(1j * x[:n])
        s = power_injections(net, v, y_load, y_bus) + s_load
        return np.concatenate([s.real, s.imag])

    return f
