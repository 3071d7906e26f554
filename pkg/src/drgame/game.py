"""Saddle-point strategies, Monte Carlo payoffs and the saddle-point audit.

Player 1 (minimizer) picks controls from grid A and the stopping time tau;
player 2 (maximizer) picks controls from grid B and sigma. The payoff is
paid by player 1 to player 2:

    J = E[ sum_{i < tau^sigma} Gamma_i dt + h'(tau) 1{tau < sigma}
           + h(sigma) 1{sigma <= tau, sigma < N} + g(X_N) 1{tau = sigma = N} ]

with stopping restricted to grid times. A tie sigma = tau < N pays the lower
obstacle; g is paid whenever tau ^ sigma = N.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .drbsde import ValueProcess
from .forward_sde import TimeGrid, simulate_controlled
from .hamiltonian import HamiltonianBatch, isaacs_batch, require_isaacs
from .model import GameModel, check_finite
from .pde import ValueSurface


class StrategyError(ValueError):
    pass


@dataclass
class StepState:
    """Value, z and selected controls of the value source at one step."""

    y: np.ndarray
    z: np.ndarray
    ham: HamiltonianBatch


class _Source:
    kind = "abstract"

    def state(self, model, i, t, x) -> StepState:  # pragma: no cover - interface
        raise NotImplementedError


class BSDESource(_Source):
    kind = "bsde"

    def __init__(self, vp: ValueProcess):
        self.vp = vp

    def state(self, model, i, t, x):
        vp = self.vp
        if abs(t - vp.grid.nodes[min(i, vp.grid.steps)]) > 1e-12:
            raise StrategyError("payoff grid must match the value process grid")
        if i >= vp.grid.steps:
            y = model.terminal(x).reshape(-1)
            z = np.zeros_like(x)
            return StepState(y, z, isaacs_batch(model, t, x, z))
        fit = vp.fits[i]
        z = fit.z(x)
        ham = isaacs_batch(model, t, x, z)
        if vp.generator.kind == "hamiltonian":
            drv = ham.value_infsup
        else:
            drv = vp.generator(model, t, x, z)
        y = np.clip(fit.continuation(x) + drv * vp.grid.dt,
                    model.lower_obstacle(t, x), model.upper_obstacle(t, x))
        return StepState(y, z, ham)


class PDESource(_Source):
    kind = "pde"

    def __init__(self, surface: ValueSurface):
        self.surface = surface

    def state(self, model, i, t, x):
        s = self.surface
        pos = np.clip(t / s.tgrid.dt, 0, s.tgrid.steps)
        j = min(int(np.floor(pos)), s.tgrid.steps - 1)
        w = pos - j
        y = (1 - w) * s.value(j, x) + w * s.value(j + 1, x)
        z = (1 - w) * s.z(model, j, x) + w * s.z(model, j + 1, x) if w > 0 else s.z(model, j, x)
        return StepState(y, z, isaacs_batch(model, t, x, z))


def as_source(value_source) -> _Source:
    if isinstance(value_source, _Source):
        return value_source
    if isinstance(value_source, ValueProcess):
        return BSDESource(value_source)
    if isinstance(value_source, ValueSurface):
        return PDESource(value_source)
    raise StrategyError(f"unsupported value source {type(value_source).__name__}")


# ---------------------------------------------------------------------------
# controls and stopping rules (all take (i, t, x, state) and are vectorized)


@dataclass(frozen=True)
class SaddleControl:
    player: str   # "min" or "max"
    needs_state = True
    label = "saddle"

    def __call__(self, i, t, x, state):
        return state.ham.ustar_index if self.player == "min" else state.ham.vstar_index


@dataclass(frozen=True)
class ConstantControl:
    index: int
    needs_state = False

    @property
    def label(self):
        return f"const[{self.index}]"

    def __call__(self, i, t, x, state):
        return np.full(x.shape[0], self.index, dtype=np.int64)


@dataclass(frozen=True)
class RandomControl:
    """Uniformly random grid index per path and step, keyed on (seed, step)."""

    grid_size: int
    seed: int
    needs_state = False

    @property
    def label(self):
        return f"random[{self.seed}]"

    def __call__(self, i, t, x, state):
        gen = np.random.Generator(np.random.Philox(key=np.array([self.seed, i], dtype=np.uint64)))
        return gen.integers(0, self.grid_size, size=x.shape[0])


@dataclass(frozen=True)
class BarrierStop:
    """Fires when the value source comes within ``epsilon`` of its barrier."""

    side: str         # "upper" (minimizer) or "lower" (maximizer)
    epsilon: float
    needs_state = True

    @property
    def label(self):
        return f"band[{self.epsilon:g}]"

    def __call__(self, model, i, t, x, state):
        if self.side == "upper":
            return state.y >= model.upper_obstacle(t, x) - self.epsilon
        return state.y <= model.lower_obstacle(t, x) + self.epsilon


@dataclass(frozen=True)
class FixedTimeStop:
    step: int
    needs_state = False

    @property
    def label(self):
        return f"at-step[{self.step}]"

    def __call__(self, model, i, t, x, state):
        return np.full(x.shape[0], i >= self.step)


@dataclass(frozen=True)
class NeverStop:
    needs_state = False
    label = "never"

    def __call__(self, model, i, t, x, state):
        return np.zeros(x.shape[0], dtype=bool)


@dataclass
class Strategy:
    model: GameModel
    source: _Source
    epsilon_stop: float

    def __post_init__(self):
        if not self.epsilon_stop > 0:
            raise StrategyError("epsilon_stop must be positive")

    @property
    def control_min(self):
        return SaddleControl("min")

    @property
    def control_max(self):
        return SaddleControl("max")

    @property
    def stop_min(self):
        return BarrierStop("upper", self.epsilon_stop)

    @property
    def stop_max(self):
        return BarrierStop("lower", self.epsilon_stop)

    def state(self, i, t, x) -> StepState:
        return self.source.state(self.model, i, t, x)

    def feedback(self, i, t, x):
        st = self.state(i, t, x)
        return st.ham.ustar_index, st.ham.vstar_index


def default_epsilon_stop(model: GameModel, value_source, ci: float = 0.0) -> float:
    """2 x (local Lipschitz estimate of the barriers) x dx + regression CI.

    dx is the PDE spacing for a surface and sigma(0, x0) sqrt(dt) for a value
    process. Never returns less than 1e-6.
    """
    src = as_source(value_source)
    x0 = model.initial_state
    if src.kind == "pde":
        dx = float(np.max(src.surface.sgrid.spacing))
        grid = src.surface.tgrid
    else:
        grid = src.vp.grid
        sig = np.asarray(model.diffusion(0.0, x0[None, :])).reshape(model.dim, model.dim)
        dx = float(np.linalg.norm(sig, 2) * np.sqrt(grid.dt))
        ci = ci or 3.0 * src.vp.std_error
    offsets = np.linspace(-1.0, 1.0, 41)
    lip = 0.0
    for k in range(model.dim):
        pts = np.repeat(x0[None, :], offsets.size, axis=0)
        pts[:, k] += offsets
        for fn in (model.lower_obstacle, model.upper_obstacle):
            vals = fn(0.0, pts).reshape(-1)
            lip = max(lip, float(np.max(np.abs(np.diff(vals)) / np.diff(offsets))))
    return max(2.0 * lip * dx + ci, 1e-6)


def extract_strategy(model: GameModel, value_source, epsilon_stop: float | None = None,
                     check_isaacs: bool = True) -> Strategy:
    src = as_source(value_source)
    if src.kind == "pde":
        if src.surface.sgrid.dim != model.dim:
            raise StrategyError("value surface does not match the model dimension")
    elif src.vp.Z.shape[2] != model.dim:
        raise StrategyError("value process does not match the model dimension")
    if check_isaacs:
        require_isaacs(model)
    eps = default_epsilon_stop(model, src) if epsilon_stop is None else epsilon_stop
    return Strategy(model, src, float(eps))


# ---------------------------------------------------------------------------
# payoff evaluation


@dataclass
class PayoffEstimate:
    mean: float
    std_error: float
    path_count: int
    confidence: float
    decomposition: dict
    samples: np.ndarray = field(repr=False)
    tau: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)

    @property
    def half_width(self) -> float:
        from scipy.stats import norm
        return float(norm.ppf(0.5 + self.confidence / 2) * self.std_error)


def evaluate_payoff(model: GameModel, control_a, stop_a, control_b, stop_b,
                    grid: TimeGrid, path_count: int, seed: int, strategy: Strategy | None = None,
                    threads: int = 1, increments: np.ndarray | None = None,
                    confidence: float = 0.95) -> PayoffEstimate:
    """Monte Carlo estimate of J(control_a, stop_a; control_b, stop_b).

    Components that read the value source (saddle controls, barrier stops)
    need ``strategy``. Paths are simulated with ``simulate_controlled`` and
    the same seed gives common random numbers across calls.
    """
    comps = (control_a, control_b, stop_a, stop_b)
    if strategy is None and any(c.needs_state for c in comps):
        raise StrategyError("saddle components need the strategy they came from")
    M, N = path_count, grid.steps
    fire_min = np.zeros((M, N + 1), dtype=bool)
    fire_max = np.zeros((M, N + 1), dtype=bool)

    def feedback(i, t, x):
        st = strategy.state(i, t, x) if any(c.needs_state for c in comps) else None
        fire_min[:, i] = stop_a(model, i, t, x, st)
        fire_max[:, i] = stop_b(model, i, t, x, st)
        return control_a(i, t, x, st), control_b(i, t, x, st)

    bundle = simulate_controlled(model, grid, feedback, path_count, seed,
                                 threads=threads, increments=increments)
    X = bundle.states
    t = grid.nodes
    ga, gb = model.control_grid_a, model.control_grid_b
    running = np.empty((M, N))
    upper = np.empty((M, N + 1))
    lower = np.empty((M, N + 1))
    for i in range(N + 1):
        upper[:, i] = model.upper_obstacle(t[i], X[:, i])
        lower[:, i] = model.lower_obstacle(t[i], X[:, i])
        if i < N:
            running[:, i] = check_finite("running_cost", model.running_cost(
                t[i], X[:, i], ga[bundle.a_index[:, i]], gb[bundle.b_index[:, i]]))
    terminal = check_finite("terminal", model.terminal(X[:, N])).reshape(M)
    run, up, lo, term, tau, sig = kernels.settle_payoffs(
        running, fire_min, fire_max, upper, lower, terminal, grid.dt)
    total = run + up + lo + term
    se = float(np.std(total, ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    decomposition = {"running": float(np.mean(run)), "upper": float(np.mean(up)),
                     "lower": float(np.mean(lo)), "terminal": float(np.mean(term))}
    return PayoffEstimate(float(np.mean(total)), se, M, confidence, decomposition,
                          total, tau, sig)


# ---------------------------------------------------------------------------
# saddle audit


@dataclass(frozen=True)
class Deviation:
    player: str               # "min" or "max"
    control: object = None    # None keeps the saddle control
    stop: object = None       # None keeps the saddle stop
    label: str = ""

    def describe(self) -> str:
        if self.label:
            return self.label
        c = self.control.label if self.control is not None else "saddle"
        s = self.stop.label if self.stop is not None else "saddle"
        return f"{self.player}:{c}/{s}"


def default_deviations(model: GameModel, grid: TimeGrid, epsilon_stop: float,
                       seed: int = 7) -> list[Deviation]:
    """Eight unilateral deviations per player."""
    out = []
    for player, K in (("min", model.control_grid_a.shape[0]), ("max", model.control_grid_b.shape[0])):
        side = "upper" if player == "min" else "lower"
        for idx in sorted({0, K // 2, K - 1}):
            out.append(Deviation(player, control=ConstantControl(idx)))
        out.append(Deviation(player, control=RandomControl(K, seed)))
        out.append(Deviation(player, stop=NeverStop()))
        out.append(Deviation(player, stop=FixedTimeStop(0)))
        out.append(Deviation(player, stop=FixedTimeStop(grid.steps // 2)))
        out.append(Deviation(player, stop=BarrierStop(side, epsilon_stop + 0.05)))
    return out


@dataclass
class AuditRow:
    label: str
    player: str
    mean: float
    std_error: float
    diff: float          # J(deviation) - J(saddle)
    diff_se: float       # paired standard error under common random numbers
    slack: float
    violation: bool


@dataclass
class SaddleAuditReport:
    y0: float
    y0_std_error: float
    saddle: PayoffEstimate
    saddle_gap: float
    saddle_slack: float
    rows: list
    allowance: float
    n_se: float

    @property
    def saddle_ok(self) -> bool:
        return self.saddle_gap <= self.saddle_slack

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r.violation]

    @property
    def ok(self) -> bool:
        return self.saddle_ok and not self.violations

    def to_dict(self) -> dict:
        return {
            "y0": self.y0, "y0_std_error": self.y0_std_error,
            "j_saddle": self.saddle.mean, "j_saddle_std_error": self.saddle.std_error,
            "saddle_gap": self.saddle_gap, "saddle_slack": self.saddle_slack,
            "saddle_ok": self.saddle_ok, "deviations": len(self.rows),
            "violations": [r.label for r in self.violations], "ok": self.ok,
            "allowance": self.allowance,
        }


def saddle_audit(model: GameModel, strategy: Strategy, deviations, grid: TimeGrid,
                 path_count: int, seed: int, y0: float, y0_std_error: float = 0.0,
                 allowance: float = 0.03, n_se: float = 3.0, threads: int = 1) -> SaddleAuditReport:
    """J at the saddle quadruple against Y0 and every unilateral deviation.

    A maximizer deviation is flagged when it raises J by more than
    ``n_se`` paired standard errors plus ``allowance``; a minimizer deviation
    when it lowers J by as much.
    """
    def run(ca, sa, cb, sb):
        return evaluate_payoff(model, ca, sa, cb, sb, grid, path_count, seed,
                               strategy=strategy, threads=threads)

    base = run(strategy.control_min, strategy.stop_min, strategy.control_max, strategy.stop_max)
    gap = abs(base.mean - y0)
    slack = n_se * float(np.hypot(base.std_error, y0_std_error)) + allowance
    rows = []
    for dev in deviations:
        if dev.player == "min":
            est = run(dev.control or strategy.control_min, dev.stop or strategy.stop_min,
                      strategy.control_max, strategy.stop_max)
        elif dev.player == "max":
            est = run(strategy.control_min, strategy.stop_min,
                      dev.control or strategy.control_max, dev.stop or strategy.stop_max)
        else:
            raise StrategyError(f"unknown player {dev.player!r}")
        paired = est.samples - base.samples
        diff = float(np.mean(paired))
        dse = float(np.std(paired, ddof=1) / np.sqrt(path_count)) if path_count > 1 else 0.0
        s = n_se * dse + allowance
        gain = diff if dev.player == "max" else -diff
        rows.append(AuditRow(dev.describe(), dev.player, est.mean, est.std_error,
                             diff, dse, s, gain > s))
    return SaddleAuditReport(y0, y0_std_error, base, gap, slack, rows, allowance, n_se)
