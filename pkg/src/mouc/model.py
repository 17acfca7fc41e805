"""Matrix-form biobjective MIQP for hydro-thermal unit commitment.

Column layout is ``x = (g; y; z)``: generation for every unit (thermal
first, then hydro), followed by the startup and on/off binaries of the
thermal units, each block unit-major (``g[0,0..T-1], g[1,0..T-1], ...``).
All constraints are stored as ``A x <= b`` rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from mouc.instance import Instance

ROW_FAMILIES = ("startup", "uptime", "downtime", "gen_lower", "gen_upper", "demand")


@dataclass(frozen=True)
class VariableLayout:
    n_thermal: int
    n_hydro: int
    periods: int
    hydro_binaries: bool
    lower: np.ndarray
    upper: np.ndarray
    binary_mask: np.ndarray

    @property
    def n_units(self) -> int:
        return self.n_thermal + self.n_hydro

    @property
    def n_committed(self) -> int:
        """Units that own y/z columns."""
        return self.n_units if self.hydro_binaries else self.n_thermal

    @property
    def n(self) -> int:
        return self.periods * (self.n_units + 2 * self.n_committed)

    def g_index(self, unit: int, t: int) -> int:
        return unit * self.periods + t

    def y_index(self, unit: int, t: int) -> int:
        self._check_committed(unit)
        return self.n_units * self.periods + unit * self.periods + t

    def z_index(self, unit: int, t: int) -> int:
        self._check_committed(unit)
        return (self.n_units + self.n_committed) * self.periods + unit * self.periods + t

    def _check_committed(self, unit):
        if not 0 <= unit < self.n_committed:
            raise IndexError(f"unit {unit} has no binary columns")

    def g_columns(self, thermal_only: bool = False) -> np.ndarray:
        count = self.n_thermal if thermal_only else self.n_units
        return np.arange(count * self.periods)

    def hydro_g_columns(self) -> np.ndarray:
        return np.arange(self.n_thermal * self.periods, self.n_units * self.periods)

    def column_names(self) -> list[str]:
        names = [f"g_{i}_{t}" for i in range(self.n_units) for t in range(self.periods)]
        names += [f"y_{i}_{t}" for i in range(self.n_committed) for t in range(self.periods)]
        names += [f"z_{i}_{t}" for i in range(self.n_committed) for t in range(self.periods)]
        return names


@dataclass(frozen=True)
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    row_tags: tuple

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    def family(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.row_tags) if t == tag], dtype=int)


@dataclass(frozen=True)
class QuadraticObjective:
    """``value(x) = x'Qx + lin'x + constant`` (no 1/2 factor)."""

    Q: sp.csr_matrix
    lin: np.ndarray
    constant: float = 0.0

    @property
    def n(self) -> int:
        return self.lin.shape[0]

    def value(self, x) -> float:
        return evaluate(self, x)

    def scaled(self, factor: float, shift: float = 0.0) -> "QuadraticObjective":
        return QuadraticObjective(self.Q * factor, self.lin * factor,
                                  self.constant * factor + shift)

    def __add__(self, other: "QuadraticObjective") -> "QuadraticObjective":
        return QuadraticObjective((self.Q + other.Q).tocsr(), self.lin + other.lin,
                                  self.constant + other.constant)


def evaluate(obj: QuadraticObjective, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.n,):
        raise ValueError(f"dimension mismatch: objective has n={obj.n}, x has shape {x.shape}")
    return float(x @ (obj.Q @ x) + obj.lin @ x + obj.constant)


@dataclass(frozen=True)
class QuadraticModel:
    instance: Instance
    layout: VariableLayout
    constraints: LinearSystem
    f1: QuadraticObjective   # generation cost, $
    f2: QuadraticObjective   # CO2 emissions, t
    f3: Optional[QuadraticObjective] = None  # renewable penetration (linear)

    @property
    def n(self) -> int:
        return self.layout.n

    def objectives(self) -> tuple[QuadraticObjective, QuadraticObjective]:
        return self.f1, self.f2

    def objective_values(self, x) -> tuple[float, float]:
        return evaluate(self.f1, x), evaluate(self.f2, x)


def make_layout(inst: Instance, hydro_binaries: bool = False) -> VariableLayout:
    I, H, T = inst.n_thermal, inst.n_hydro, inst.periods
    n_committed = I + H if hydro_binaries else I
    n = T * (I + H + 2 * n_committed)
    lower = np.zeros(n)
    upper = np.zeros(n)
    binary = np.zeros(n, dtype=bool)
    for i, u in enumerate(inst.thermal):
        upper[i * T:(i + 1) * T] = u.p_max
    for h, (lo, hi) in enumerate(inst.hydro_bounds()):
        cols = slice((I + h) * T, (I + h + 1) * T)
        lower[cols] = lo
        upper[cols] = hi
    start = (I + H) * T
    binary[start:] = True
    upper[start:] = 1.0
    if hydro_binaries:
        # Hydro y/z exist only to mirror the full 3-per-unit count: y = 0, z = 1.
        for h in range(H):
            unit = I + h
            y0 = start + unit * T
            z0 = start + n_committed * T + unit * T
            upper[y0:y0 + T] = 0.0
            lower[z0:z0 + T] = 1.0
    return VariableLayout(n_thermal=I, n_hydro=H, periods=T, hydro_binaries=hydro_binaries,
                          lower=lower, upper=upper, binary_mask=binary)


class _RowBuilder:
    def __init__(self):
        self.rows, self.cols, self.vals, self.rhs, self.tags = [], [], [], [], []

    def add(self, coeffs: dict, rhs: float, tag: str) -> None:
        r = len(self.rhs)
        for c, v in coeffs.items():
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(c)
                self.vals.append(v)
        self.rhs.append(rhs)
        self.tags.append(tag)

    def build(self, n: int) -> LinearSystem:
        A = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), n))
        return LinearSystem(A=A, b=np.array(self.rhs, dtype=float), row_tags=tuple(self.tags))


def _add_z(coeffs: dict, col: Optional[int], value: float) -> float:
    """Accumulate ``value * z[col]``; a ``None`` column is the fixed z0 = 0."""
    if col is None:
        return 0.0
    coeffs[col] = coeffs.get(col, 0.0) + value
    return 0.0


def build_model(inst: Instance, hydro_binaries: bool = False,
                with_renewable: bool = True) -> QuadraticModel:
    """Assemble constraint rows and the cost/emission objectives for ``inst``."""
    lay = make_layout(inst, hydro_binaries)
    T, n = inst.periods, lay.n
    rb = _RowBuilder()

    for i, u in enumerate(inst.thermal):
        def z(t):
            return None if t < 0 else lay.z_index(i, t)

        for t in range(T):
            c = {}
            _add_z(c, z(t), 1.0)
            _add_z(c, z(t - 1), -1.0)
            c[lay.y_index(i, t)] = -1.0
            rb.add(c, 0.0, "startup")
        # z_t - z_{t-1} <= z_tau on the min-up window.
        for t in range(T):
            for tau in range(t + 1, min(t + u.min_up - 1, T - 1) + 1):
                c = {}
                _add_z(c, z(t), 1.0)
                _add_z(c, z(t - 1), -1.0)
                _add_z(c, z(tau), -1.0)
                rb.add(c, 0.0, "uptime")
        # z_{t-1} - z_t <= 1 - z_tau on the min-down window.
        for t in range(T):
            for tau in range(t + 1, min(t + u.min_down - 1, T - 1) + 1):
                c = {}
                _add_z(c, z(t - 1), 1.0)
                _add_z(c, z(t), -1.0)
                _add_z(c, z(tau), 1.0)
                rb.add(c, 1.0, "downtime")
        for t in range(T):
            rb.add({lay.z_index(i, t): u.p_min, lay.g_index(i, t): -1.0}, 0.0, "gen_lower")
            rb.add({lay.g_index(i, t): 1.0, lay.z_index(i, t): -u.p_max}, 0.0, "gen_upper")

    for t in range(T):
        rb.add({lay.g_index(k, t): -1.0 for k in range(lay.n_units)}, -inst.demand[t], "demand")

    constraints = rb.build(n)

    q_cost = np.zeros(n)
    q_co2 = np.zeros(n)
    lin_cost = np.zeros(n)
    lin_co2 = np.zeros(n)
    for i, u in enumerate(inst.thermal):
        g = slice(lay.g_index(i, 0), lay.g_index(i, T - 1) + 1)
        q_cost[g] = u.cost_quad
        lin_cost[g] = u.cost_lin
        q_co2[g] = u.co2_quad
        lin_co2[g] = u.co2_lin
        for t in range(T):
            lin_cost[lay.z_index(i, t)] = u.cost_const
            lin_cost[lay.y_index(i, t)] = u.startup_cost
    f1 = QuadraticObjective(sp.diags(q_cost, format="csr"), lin_cost, 0.0)
    f2 = QuadraticObjective(sp.diags(q_co2, format="csr"), lin_co2, 0.0)
    f3 = renewable_objective(inst, lay) if with_renewable else None
    return QuadraticModel(instance=inst, layout=lay, constraints=constraints, f1=f1, f2=f2, f3=f3)


def renewable_objective(inst: Instance, layout: VariableLayout) -> QuadraticObjective:
    """Difference-form renewable objective: conventional minus renewable output.

    Minimizing it pushes conventional generation down and hydro up.
    """
    n = layout.n
    lin = np.zeros(n)
    lin[layout.g_columns(thermal_only=True)] = 1.0
    lin[layout.hydro_g_columns()] = -1.0
    return QuadraticObjective(sp.csr_matrix((n, n)), lin, 0.0)


@dataclass(frozen=True)
class Violation:
    kind: str        # a row family, "lower", "upper" or "binary"
    index: int       # row index, or column index for bound/binary checks
    amount: float


@dataclass
class FeasibilityReport:
    violations: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.feasible

    def kinds(self) -> set:
        return {v.kind for v in self.violations}


def check_feasible(m: QuadraticModel, x, tol: float = 1e-6,
                   check_bounds: bool = True) -> FeasibilityReport:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.n,):
        raise ValueError(f"dimension mismatch: model has n={m.n}, x has shape {x.shape}")
    report = FeasibilityReport()
    slack = m.constraints.A @ x - m.constraints.b
    for r in np.flatnonzero(slack > tol):
        report.violations.append(Violation(m.constraints.row_tags[r], int(r), float(slack[r])))
    if check_bounds:
        lay = m.layout
        for j in np.flatnonzero(lay.lower - x > tol):
            report.violations.append(Violation("lower", int(j), float(lay.lower[j] - x[j])))
        for j in np.flatnonzero(x - lay.upper > tol):
            report.violations.append(Violation("upper", int(j), float(x[j] - lay.upper[j])))
    mask = m.layout.binary_mask
    dist = np.abs(x[mask] - np.round(x[mask]))
    for j, d in zip(np.flatnonzero(mask)[dist > tol], dist[dist > tol]):
        report.violations.append(Violation("binary", int(j), float(d)))
    return report


def dump_system_csv(system: LinearSystem, sink) -> None:
    """Write ``(row, col, value)`` triplets followed by ``(row, rhs, tag)`` lines."""
    coo = system.A.tocoo()
    sink.write("row,col,value\n")
    for r, c, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
        sink.write(f"{r},{c},{v!r}\n")
    sink.write("row,rhs,tag\n")
    for r, (rhs, tag) in enumerate(zip(system.b.tolist(), system.row_tags)):
        sink.write(f"{r},{rhs!r},{tag}\n")
