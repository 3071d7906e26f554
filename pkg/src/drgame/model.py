"""Game problem data and probabilistic checks of the standing assumptions.

Model callables are vectorized over a batch of states. With ``n`` states of
dimension ``d``:

* ``diffusion(t, x)`` maps ``x`` of shape (n, d) to (n, d, d);
* ``drift(t, x, a, b)`` maps (n, d), (n, qa), (n, qb) to (n, d);
* ``running_cost(t, x, a, b)`` returns (n,);
* ``terminal(x)``, ``lower_obstacle(t, x)``, ``upper_obstacle(t, x)`` return (n,).

``t`` is either a float or an array of shape (n,). Controls are rows of the
control grids, which are stored as arrays of shape (K, q).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_COND_BOUND = 1e6


class ModelError(ValueError):
    """Raised for ill-posed model data (non-finite values, empty grids, ...)."""


@dataclass(frozen=True)
class SplitTerms:
    """Drift and running cost written as a minimizer part plus a maximizer part.

    f(t, x, a, b) = drift_a(t, x, a) + drift_b(t, x, b), and likewise for the
    running cost. Models that declare this structure get a Hamiltonian that
    is separated in floating point as well, so the grid-level Isaacs gap is
    exactly zero.
    """

    drift_a: Callable
    drift_b: Callable
    cost_a: Callable
    cost_b: Callable


def _grid(points) -> np.ndarray:
    g = np.asarray(points, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim != 2 or g.shape[0] == 0:
        raise ModelError("control grids must be non-empty")
    return g


@dataclass(frozen=True)
class GameModel:
    dim: int
    horizon: float
    diffusion: Callable
    terminal: Callable
    lower_obstacle: Callable
    upper_obstacle: Callable
    control_grid_a: np.ndarray
    control_grid_b: np.ndarray
    initial_state: np.ndarray
    drift: Callable | None = None
    running_cost: Callable | None = None
    split: SplitTerms | None = None
    growth_constant: float = 1.0
    growth_exponent: float = 2.0
    cond_bound: float = DEFAULT_COND_BOUND
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError("dim must be a positive integer")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        if not self.growth_constant > 0:
            raise ModelError("growth_constant must be positive")
        if not self.growth_exponent > 1:
            raise ModelError("growth_exponent must exceed 1")
        object.__setattr__(self, "control_grid_a", _grid(self.control_grid_a))
        object.__setattr__(self, "control_grid_b", _grid(self.control_grid_b))
        x0 = np.asarray(self.initial_state, dtype=float).reshape(-1)
        if x0.shape != (self.dim,):
            raise ModelError(f"initial_state must have {self.dim} components")
        object.__setattr__(self, "initial_state", x0)

        if self.split is not None:
            s = self.split
            if self.drift is None:
                object.__setattr__(
                    self, "drift",
                    lambda t, x, a, b: s.drift_a(t, x, a) + s.drift_b(t, x, b))
            if self.running_cost is None:
                object.__setattr__(
                    self, "running_cost",
                    lambda t, x, a, b: s.cost_a(t, x, a) + s.cost_b(t, x, b))
        if self.drift is None or self.running_cost is None:
            raise ModelError("drift and running_cost (or split terms) are required")

    @property
    def is_split(self) -> bool:
        return self.split is not None

    def replace(self, **changes) -> "GameModel":
        from dataclasses import replace
        return replace(self, **changes)


def as_states(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim) if x.size != dim else x[None, :]
    return x


def check_finite(name: str, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ModelError(f"{name} returned non-finite values")
    return values


# ---------------------------------------------------------------------------
# assumption probing


@dataclass
class AssumptionCheck:
    name: str
    violation: float
    tolerance: float
    worst_point: dict
    probes: int
    strict: bool = False

    @property
    def ok(self) -> bool:
        if self.strict:
            return self.violation < self.tolerance
        return self.violation <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "violation": float(self.violation),
            "tolerance": float(self.tolerance),
            "ok": bool(self.ok),
            "probes": int(self.probes),
            "worst_point": self.worst_point,
        }


@dataclass
class ValidationReport:
    entries: dict[str, AssumptionCheck]

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries.values())

    @property
    def flagged(self) -> list[str]:
        return [k for k, e in self.entries.items() if not e.ok]

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "entries": {k: e.to_dict() for k, e in self.entries.items()}}


def _worst(name, excess, t, x, a=None, b=None, tol=0.0, strict=False):
    k = int(np.argmax(excess))
    point = {"t": float(np.atleast_1d(t)[k] if np.ndim(t) else t),
             "x": [float(v) for v in x[k]]}
    if a is not None:
        point["a"] = [float(v) for v in a[k]]
        point["b"] = [float(v) for v in b[k]]
    return AssumptionCheck(name, float(excess[k]), tol, point, len(excess), strict)


def validate_model(model: GameModel, probe_count: int, seed: int,
                   radius: float = 10.0, cond_bound: float | None = None,
                   rel_tol: float = 1e-12) -> ValidationReport:
    """Probe the growth, ordering and non-degeneracy assumptions at random points.

    Probes are drawn from ``numpy.random.default_rng(seed)``: times uniform on
    [0, T], states uniform in the ball of the given radius, controls uniform
    over the grids. Each entry holds the largest excess over its bound.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    if model.control_grid_a.shape[0] == 0 or model.control_grid_b.shape[0] == 0:
        raise ModelError("control grids must be non-empty")
    cond_bound = model.cond_bound if cond_bound is None else cond_bound
    rng = np.random.default_rng(seed)
    n, d = probe_count, model.dim
    T = model.horizon
    t = rng.uniform(0.0, T, size=n)
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, size=n) ** (1.0 / d)
    x = direction * r[:, None]
    a = model.control_grid_a[rng.integers(0, model.control_grid_a.shape[0], size=n)]
    b = model.control_grid_b[rng.integers(0, model.control_grid_b.shape[0], size=n)]

    C, p = model.growth_constant, model.growth_exponent
    xn = np.linalg.norm(x, axis=1)
    lin = C * (1.0 + xn)
    poly = C * (1.0 + xn ** p)

    f = check_finite("drift", model.drift(t, x, a, b)).reshape(n, d)
    gam = check_finite("running_cost", model.running_cost(t, x, a, b)).reshape(n)
    gx = check_finite("terminal", model.terminal(x)).reshape(n)
    lo = check_finite("lower_obstacle", model.lower_obstacle(t, x)).reshape(n)
    hi = check_finite("upper_obstacle", model.upper_obstacle(t, x)).reshape(n)
    loT = check_finite("lower_obstacle", model.lower_obstacle(np.full(n, T), x)).reshape(n)
    hiT = check_finite("upper_obstacle", model.upper_obstacle(np.full(n, T), x)).reshape(n)
    sig = check_finite("diffusion", model.diffusion(t, x)).reshape(n, d, d)

    def excess(val, bound):
        return val - bound - rel_tol * np.maximum(bound, 1.0)

    entries = {}
    entries["drift_growth"] = _worst(
        "drift_growth", np.maximum(excess(np.linalg.norm(f, axis=1), lin), 0.0), t, x, a, b)
    entries["running_cost_growth"] = _worst(
        "running_cost_growth", np.maximum(excess(np.abs(gam), poly), 0.0), t, x, a, b)
    entries["terminal_growth"] = _worst(
        "terminal_growth", np.maximum(excess(np.abs(gx), poly), 0.0), t, x)
    entries["lower_obstacle_growth"] = _worst(
        "lower_obstacle_growth", np.maximum(excess(np.abs(lo), poly), 0.0), t, x)
    entries["upper_obstacle_growth"] = _worst(
        "upper_obstacle_growth", np.maximum(excess(np.abs(hi), poly), 0.0), t, x)
    entries["obstacle_order"] = _worst("obstacle_order", lo - hi, t, x, strict=True)
    entries["terminal_sandwich"] = _worst(
        "terminal_sandwich", np.maximum(loT - gx, gx - hiT), np.full(n, T), x)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(sig)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    entries["diffusion_conditioning"] = _worst(
        "diffusion_conditioning", cond, t, x, tol=cond_bound)
    return ValidationReport(entries)
