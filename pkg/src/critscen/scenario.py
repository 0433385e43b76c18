"""Logical scenario spaces and concrete-scenario generators.

All optimizer-facing code works in unit-cube coordinates; physical units only
appear at the simulator boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Identifier of the bit generator behind every seeded draw in this package.
RNG_ALGORITHM = "numpy.random.PCG64"

DEFAULT_GRID_CAP = 10**6


class CapacityError(ValueError):
    """Raised when a full-factorial grid would exceed the configured cap."""


def make_rng(seed: int | tuple[int, ...] | list[int]) -> np.random.Generator:
    """Seeded PCG64 generator; tuples give independent, reproducible substreams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ParameterDef:
    name: str
    unit: str
    lo: float
    hi: float
    grid_points: int = 2

    def __post_init__(self):
        if not self.name.isidentifier():
            raise ValueError(f"parameter name {self.name!r} is not an identifier")
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.grid_points < 2:
            raise ValueError(f"{self.name}: grid_points must be >= 2")


@dataclass(frozen=True)
class ConcreteScenario:
    x_phys: tuple[float, ...]
    x_unit: tuple[float, ...]


@dataclass(frozen=True)
class ScenarioSpace:
    params: tuple[ParameterDef, ...]
    name: str = ""
    _lo: np.ndarray = field(init=False, repr=False, compare=False)
    _span: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(self.params)
        if not params:
            raise ValueError("scenario space needs at least one parameter")
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        object.__setattr__(self, "params", params)
        lo = np.array([p.lo for p in params], dtype=float)
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_span", np.array([p.hi for p in params], dtype=float) - lo)

    @property
    def n(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def lower(self) -> np.ndarray:
        return self._lo.copy()

    @property
    def upper(self) -> np.ndarray:
        return self._lo + self._span

    def from_unit(self, u) -> np.ndarray:
        """Map unit-cube coordinates (..., n) to physical coordinates."""
        return self._lo + np.asarray(u, dtype=float) * self._span

    def to_unit(self, x) -> np.ndarray:
        """Map physical coordinates (..., n) to the unit cube."""
        return (np.asarray(x, dtype=float) - self._lo) / self._span

    def scenario_from_unit(self, u) -> ConcreteScenario:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if u.shape != (self.n,):
            raise ValueError(f"expected {self.n} coordinates, got shape {u.shape}")
        x = np.clip(self.from_unit(u), self._lo, self.upper)
        return ConcreteScenario(tuple(map(float, x)), tuple(map(float, u)))

    def scenario_from_phys(self, x) -> ConcreteScenario:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected {self.n} coordinates, got shape {x.shape}")
        if np.any(x < self._lo) or np.any(x > self.upper):
            raise ValueError(f"point {x.tolist()} outside the scenario space")
        return ConcreteScenario(tuple(map(float, x)), tuple(map(float, self.to_unit(x))))

    def grid_size(self) -> int:
        return int(np.prod([p.grid_points for p in self.params], dtype=object))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": [
                {"name": p.name, "unit": p.unit, "lo": p.lo, "hi": p.hi,
                 "grid_points": p.grid_points}
                for p in self.params
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpace":
        params = tuple(
            ParameterDef(p["name"], p.get("unit", ""), float(p["lo"]), float(p["hi"]),
                         int(p.get("grid_points", 2)))
            for p in d["params"]
        )
        return cls(params, name=d.get("name", ""))


def full_factorial(space: ScenarioSpace, cap: int = DEFAULT_GRID_CAP) -> list[ConcreteScenario]:
    """Cartesian product of inclusive linear grids, row-major in parameter order."""
    size = space.grid_size()
    if size > cap:
        raise CapacityError(f"full-factorial grid has {size} points, cap is {cap}")
    axes = [np.linspace(p.lo, p.hi, p.grid_points) for p in space.params]
    mesh = np.meshgrid(*axes, indexing="ij")
    phys = np.stack([m.ravel() for m in mesh], axis=1)
    unit = np.clip(space.to_unit(phys), 0.0, 1.0)
    return [ConcreteScenario(tuple(map(float, x)), tuple(map(float, u)))
            for x, u in zip(phys, unit)]


def lhs_unit(n_samples: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube in [0, 1)^dim: one point per stratum and dimension."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    offsets = rng.random((n_samples, dim))
    strata = np.stack([rng.permutation(n_samples) for _ in range(dim)], axis=1)
    u = (strata + offsets) / n_samples
    # (s + offset) / n can round up to the next stratum boundary
    return np.minimum(u, np.nextafter((strata + 1) / n_samples, 0.0))


def latin_hypercube(space: ScenarioSpace, n_samples: int, rng_seed) -> list[ConcreteScenario]:
    u = lhs_unit(n_samples, space.n, make_rng(rng_seed))
    return [space.scenario_from_unit(row) for row in u]


def uniform_random(space: ScenarioSpace, n_samples: int, rng_seed) -> list[ConcreteScenario]:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    u = make_rng(rng_seed).random((n_samples, space.n))
    return [space.scenario_from_unit(row) for row in u]


def scenarios_to_unit(scenarios) -> np.ndarray:
    return np.array([s.x_unit for s in scenarios], dtype=float)


def scenarios_to_phys(scenarios) -> np.ndarray:
    return np.array([s.x_phys for s in scenarios], dtype=float)


# Parameter ranges of the highway overtake logical scenario.
_V_EGO = ("v_ego", "m/s", 5.0, 25.0)
_V_LEAD = ("v_lead", "m/s", 0.0, 20.0)
_D_SEP = ("d_0_sep", "m", 50.0, 100.0)
_X_EGO = ("x_0_ego", "m", -0.5, 0.5)
_V_WIND = ("v_wind", "m/s", 0.0, 25.0)
_MU = ("mu_road", "-", 0.2, 0.8)


def highway_3dof() -> ScenarioSpace:
    return ScenarioSpace(
        (ParameterDef(*_V_EGO, 11), ParameterDef(*_V_LEAD, 11), ParameterDef(*_D_SEP, 11)),
        name="highway-3dof",
    )


def highway_6dof() -> ScenarioSpace:
    return ScenarioSpace(
        (
            ParameterDef(*_V_EGO, 5),
            ParameterDef(*_V_LEAD, 5),
            ParameterDef(*_D_SEP, 11),
            ParameterDef(*_X_EGO, 3),
            ParameterDef(*_V_WIND, 6),
            ParameterDef(*_MU, 4),
        ),
        name="highway-6dof",
    )


PRESETS = {"highway-3dof": highway_3dof, "highway-6dof": highway_6dof}


def preset(name: str) -> ScenarioSpace:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
