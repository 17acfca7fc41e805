"""Hydro-thermal unit-commitment instances: types, file format, generator."""

from __future__ import annotations

import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import IO, Union

import numpy as np

DEFAULT_HYDRO_SCALING = 0.5
DEMAND_CAP_FRACTION = 0.8


class InstanceError(ValueError):
    """Raised when an instance file is malformed or violates an invariant."""


class InstanceParseError(InstanceError):
    pass


class InstanceValidationError(InstanceError):
    pass


@dataclass(frozen=True)
class ThermalUnit:
    id: int
    cost_quad: float      # $/MW^2 per period
    cost_lin: float       # $/MW per period
    cost_const: float     # $ per on-period
    startup_cost: float   # $ per start
    p_min: float          # MW
    p_max: float          # MW
    min_up: int           # periods
    min_down: int         # periods
    co2_lin: float        # t/MW
    co2_quad: float       # t/MW^2

    def validate(self) -> None:
        def fail(what):
            raise InstanceValidationError(f"thermal unit {self.id}: {what}")

        if not 0 <= self.p_min <= self.p_max:
            fail(f"requires 0 <= p_min <= p_max, got p_min={self.p_min}, p_max={self.p_max}")
        if self.min_up < 1:
            fail(f"min_up must be >= 1, got {self.min_up}")
        if self.min_down < 1:
            fail(f"min_down must be >= 1, got {self.min_down}")
        if self.cost_quad < 0:
            fail(f"cost_quad must be >= 0, got {self.cost_quad}")
        if self.co2_quad < 0:
            fail(f"co2_quad must be >= 0, got {self.co2_quad}")
        if self.startup_cost < 0:
            fail(f"startup_cost must be >= 0, got {self.startup_cost}")


@dataclass(frozen=True)
class HydroUnit:
    id: int
    volume_to_power: float  # MW per volume unit
    min_flood: float
    max_flood: float

    def validate(self) -> None:
        if not 0 <= self.min_flood <= self.max_flood:
            raise InstanceValidationError(
                f"hydro unit {self.id}: requires 0 <= min_flood <= max_flood, "
                f"got min_flood={self.min_flood}, max_flood={self.max_flood}")
        if self.volume_to_power <= 0:
            raise InstanceValidationError(
                f"hydro unit {self.id}: volume_to_power must be > 0, got {self.volume_to_power}")


def hydro_power_bounds(h: HydroUnit, scaling: float) -> tuple[float, float]:
    """Return the (min, max) power output of a hydro unit after scaling."""
    if not 0 < scaling <= 1:
        raise ValueError(f"hydro scaling must lie in (0, 1], got {scaling}")
    lo = scaling * h.volume_to_power * h.min_flood
    hi = scaling * h.volume_to_power * h.max_flood
    return lo, hi


@dataclass(frozen=True)
class Instance:
    thermal: tuple[ThermalUnit, ...]
    hydro: tuple[HydroUnit, ...]
    demand: tuple[float, ...]
    hydro_scaling: float = DEFAULT_HYDRO_SCALING
    name: str = "instance"

    @property
    def periods(self) -> int:
        return len(self.demand)

    @property
    def n_thermal(self) -> int:
        return len(self.thermal)

    @property
    def n_hydro(self) -> int:
        return len(self.hydro)

    def hydro_bounds(self) -> list[tuple[float, float]]:
        return [hydro_power_bounds(h, self.hydro_scaling) for h in self.hydro]

    def max_power(self) -> float:
        """Total installed capacity per period (thermal plus scaled hydro)."""
        return (sum(u.p_max for u in self.thermal)
                + sum(hi for _, hi in self.hydro_bounds()))

    def validate(self) -> None:
        if self.periods < 1:
            raise InstanceValidationError("instance needs at least one period")
        if any(d < 0 for d in self.demand):
            raise InstanceValidationError("demand must be non-negative")
        if not 0 < self.hydro_scaling <= 1:
            raise InstanceValidationError(
                f"hydro_scaling must lie in (0, 1], got {self.hydro_scaling}")
        for u in self.thermal:
            u.validate()
        for h in self.hydro:
            h.validate()
        ids = [u.id for u in self.thermal] + [h.id for h in self.hydro]
        if len(set(ids)) != len(ids):
            raise InstanceValidationError("unit ids must be unique")
        cap = self.max_power()
        worst = max(self.demand)
        if cap < worst:
            raise InstanceValidationError(
                f"infeasible: total max power {cap:g} MW below peak demand {worst:g} MW")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "periods": self.periods,
            "demand": list(self.demand),
            "hydro_scaling": self.hydro_scaling,
            "thermal": [asdict(u) for u in self.thermal],
            "hydro": [asdict(h) for h in self.hydro],
        }


_THERMAL_INT_FIELDS = ("id", "min_up", "min_down")


def _thermal_from_record(rec: dict) -> ThermalUnit:
    kwargs = {}
    for name in ThermalUnit.__dataclass_fields__:
        if name not in rec:
            raise InstanceParseError(f"thermal unit record missing field {name!r}")
        value = rec[name]
        kwargs[name] = int(value) if name in _THERMAL_INT_FIELDS else float(value)
    return ThermalUnit(**kwargs)


def _hydro_from_record(rec: dict) -> HydroUnit:
    kwargs = {}
    for name in HydroUnit.__dataclass_fields__:
        if name not in rec:
            raise InstanceParseError(f"hydro unit record missing field {name!r}")
        kwargs[name] = int(rec[name]) if name == "id" else float(rec[name])
    return HydroUnit(**kwargs)


def instance_from_dict(data: dict) -> Instance:
    try:
        demand = tuple(float(d) for d in data["demand"])
        thermal = tuple(_thermal_from_record(r) for r in data.get("thermal", []))
        hydro = tuple(_hydro_from_record(r) for r in data.get("hydro", []))
        scaling = float(data.get("hydro_scaling", DEFAULT_HYDRO_SCALING))
        name = str(data.get("name", "instance"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InstanceError):
            raise
        raise InstanceParseError(f"malformed instance: {exc}") from exc
    if "periods" in data and int(data["periods"]) != len(demand):
        raise InstanceParseError(
            f"periods={data['periods']} disagrees with demand length {len(demand)}")
    inst = Instance(thermal=thermal, hydro=hydro, demand=demand,
                    hydro_scaling=scaling, name=name)
    inst.validate()
    return inst


Source = Union[str, bytes, os.PathLike, IO]


def load_instance(source: Source) -> Instance:
    """Load and validate an instance.

    ``source`` may be raw bytes, a binary/text stream, or a filesystem path.
    """
    if isinstance(source, bytes):
        raw = source
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"instance file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InstanceParseError("instance file must hold a JSON object")
    return instance_from_dict(data)


def dumps(inst: Instance) -> str:
    return json.dumps(inst.to_dict(), indent=2) + "\n"


def save_instance(inst: Instance, path) -> None:
    from mouc._io import atomic_write_text
    atomic_write_text(path, dumps(inst))


# Base fleet replicated cyclically by the generator.  Columns:
# p_min, p_max, cost_quad, cost_lin, cost_const, startup, min_up, min_down
_BASE_THERMAL = np.array([
    [150, 455, 0.00048, 16.19, 1000, 4500, 8, 8],
    [150, 455, 0.00031, 17.26, 970, 5000, 8, 8],
    [20, 130, 0.00200, 16.60, 700, 550, 5, 5],
    [20, 130, 0.00211, 16.50, 680, 560, 5, 5],
    [25, 162, 0.00398, 19.70, 450, 900, 6, 6],
    [20, 80, 0.00712, 22.26, 370, 170, 3, 3],
    [25, 85, 0.00079, 27.74, 480, 260, 3, 3],
    [10, 55, 0.00413, 25.92, 660, 30, 1, 1],
    [10, 55, 0.00222, 27.27, 665, 30, 1, 1],
    [10, 55, 0.00173, 27.79, 670, 30, 1, 1],
])

# CO2 coefficients for the same ten base units: co2_lin (t/MW), co2_quad (t/MW^2).
_BASE_CO2 = np.array([
    [0.95, 0.00120],
    [0.90, 0.00105],
    [0.55, 0.00650],
    [0.60, 0.00580],
    [0.70, 0.00310],
    [0.40, 0.00900],
    [0.35, 0.00260],
    [0.50, 0.00870],
    [0.45, 0.00950],
    [0.48, 0.00800],
])


def generate_instance(n_thermal: int = 20, n_hydro: int = 10, periods: int = 24,
                      seed: int = 0, hydro_scaling: float = DEFAULT_HYDRO_SCALING,
                      name: str | None = None) -> Instance:
    """Synthesize a deterministic instance from ``seed``.

    Thermal data cycles through a ten-unit base fleet with a small seeded
    perturbation; emissions coefficients cycle through the matching base
    table.  Hydro units carry no cost and no emissions.  Demand never
    exceeds ``DEMAND_CAP_FRACTION`` of total capacity in any period.
    """
    if n_thermal < 0 or n_hydro < 0:
        raise ValueError("unit counts must be non-negative")
    if periods < 1:
        raise ValueError("periods must be >= 1")
    rng = np.random.default_rng(seed)
    thermal = []
    for i in range(n_thermal):
        base = _BASE_THERMAL[i % len(_BASE_THERMAL)]
        co2 = _BASE_CO2[i % len(_BASE_CO2)]
        jitter = rng.uniform(0.95, 1.05, size=6)
        p_min, p_max = float(base[0]), float(base[1])
        thermal.append(ThermalUnit(
            id=i,
            cost_quad=_r(base[2] * jitter[0]),
            cost_lin=_r(base[3] * jitter[1]),
            cost_const=_r(base[4] * jitter[2]),
            startup_cost=_r(base[5] * jitter[3]),
            p_min=p_min,
            p_max=p_max,
            min_up=int(base[6]),
            min_down=int(base[7]),
            co2_lin=_r(co2[0] * jitter[4]),
            co2_quad=_r(co2[1] * jitter[5]),
        ))
    hydro = []
    for h in range(n_hydro):
        v2p = _r(rng.uniform(0.5, 2.0))
        max_flood = _r(rng.uniform(50.0, 150.0))
        min_flood = _r(max_flood * rng.uniform(0.0, 0.2))
        hydro.append(HydroUnit(id=n_thermal + h, volume_to_power=v2p,
                               min_flood=min_flood, max_flood=max_flood))
    draft = Instance(thermal=tuple(thermal), hydro=tuple(hydro), demand=(0.0,) * periods,
                     hydro_scaling=hydro_scaling)
    cap = draft.max_power()
    hours = np.arange(periods)
    shape = 0.55 + 0.2 * np.sin(2 * np.pi * (hours - 6) / 24.0)
    demand = shape + rng.uniform(-0.05, 0.05, size=periods)
    demand = np.clip(demand, 0.3, DEMAND_CAP_FRACTION) * cap
    demand = tuple(float(np.floor(d * 1000) / 1000) for d in demand)
    label = name or f"gen-{n_thermal}t{n_hydro}h{periods}p-s{seed}"
    inst = Instance(thermal=tuple(thermal), hydro=tuple(hydro), demand=demand,
                    hydro_scaling=hydro_scaling, name=label)
    inst.validate()
    return inst


def _r(value: float) -> float:
    # Round to 6 significant digits so files stay readable and stable.
    return float(f"{value:.6g}")
