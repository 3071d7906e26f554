"""Euler-Maruyama simulation of the state diffusion and Girsanov densities.

Normal increments come from one Philox stream per path, keyed on
(seed, path index); the step index is the position in that stream. A path's
increments therefore never depend on how paths are split across workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .hamiltonian import sigma_inverse
from .model import GameModel, check_finite

_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    steps: int
    horizon: float

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step count must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class PathBundle:
    grid: TimeGrid
    states: np.ndarray           # (M, N+1, d)
    increments: np.ndarray       # (M, N, d)
    seed: int
    controlled: bool = False
    a_index: np.ndarray | None = None   # (M, N) when controlled
    b_index: np.ndarray | None = None

    @property
    def path_count(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]


def _path_normals(seed: int, start: int, stop: int, steps: int, dim: int) -> np.ndarray:
    out = np.empty((stop - start, steps, dim))
    key0 = seed & _MASK64
    for m in range(start, stop):
        bg = np.random.Philox(key=np.array([key0, m], dtype=np.uint64))
        out[m - start] = np.random.Generator(bg).standard_normal((steps, dim))
    return out


def brownian_increments(seed: int, path_count: int, grid: TimeGrid, dim: int,
                        threads: int = 1) -> np.ndarray:
    """Increments of shape (M, N, d) with variance dt; independent of ``threads``."""
    if path_count < 1:
        raise ValueError("path_count must be >= 1")
    threads = max(1, int(threads))
    bounds = np.linspace(0, path_count, min(threads, path_count) + 1).astype(int)
    if threads == 1:
        z = _path_normals(seed, 0, path_count, grid.steps, dim)
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda k: _path_normals(seed, bounds[k], bounds[k + 1],
                                                     grid.steps, dim),
                             range(len(bounds) - 1))
            z = np.concatenate(list(parts), axis=0)
    return z * np.sqrt(grid.dt)


def _check_step(x, i):
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise SimulationError(f"non-finite state on path {int(np.argmax(bad))} at step {i}")


def simulate_uncontrolled(model: GameModel, grid: TimeGrid, path_count: int, seed: int,
                          threads: int = 1, increments: np.ndarray | None = None) -> PathBundle:
    d = model.dim
    dB = (brownian_increments(seed, path_count, grid, d, threads)
          if increments is None else np.asarray(increments, dtype=float))
    M, N = dB.shape[0], grid.steps
    X = np.empty((M, N + 1, d))
    X[:, 0] = model.initial_state
    t = grid.nodes
    for i in range(N):
        sig = check_finite("diffusion", model.diffusion(t[i], X[:, i])).reshape(M, d, d)
        X[:, i + 1] = X[:, i] + np.einsum("mij,mj->mi", sig, dB[:, i])
        _check_step(X[:, i + 1], i + 1)
    return PathBundle(grid, X, dB, seed)


def simulate_controlled(model: GameModel, grid: TimeGrid, feedback, path_count: int,
                        seed: int, threads: int = 1,
                        increments: np.ndarray | None = None) -> PathBundle:
    """Strong Euler simulation under feedback controls.

    ``feedback(i, t, x)`` returns the minimizer's and maximizer's grid indices
    for every state in ``x``.
    """
    d = model.dim
    dB = (brownian_increments(seed, path_count, grid, d, threads)
          if increments is None else np.asarray(increments, dtype=float))
    M, N = dB.shape[0], grid.steps
    X = np.empty((M, N + 1, d))
    X[:, 0] = model.initial_state
    ai = np.empty((M, N), dtype=np.int64)
    bi = np.empty((M, N), dtype=np.int64)
    t = grid.nodes
    ga, gb = model.control_grid_a, model.control_grid_b
    for i in range(N):
        try:
            a_idx, b_idx = feedback(i, t[i], X[:, i])
        except Exception as exc:
            raise SimulationError(f"feedback evaluation failed at step {i}: {exc}") from exc
        ai[:, i], bi[:, i] = a_idx, b_idx
        f = check_finite("drift", model.drift(t[i], X[:, i], ga[ai[:, i]], gb[bi[:, i]]))
        sig = check_finite("diffusion", model.diffusion(t[i], X[:, i])).reshape(M, d, d)
        X[:, i + 1] = (X[:, i] + f.reshape(M, d) * grid.dt
                       + np.einsum("mij,mj->mi", sig, dB[:, i]))
        _check_step(X[:, i + 1], i + 1)
    return PathBundle(grid, X, dB, seed, controlled=True, a_index=ai, b_index=bi)


def _index_table(idx, M, N):
    idx = np.asarray(idx, dtype=np.int64)
    return np.broadcast_to(idx, (M, N)) if idx.ndim < 2 else idx


def girsanov_log_density(model: GameModel, bundle: PathBundle, a_index, b_index) -> np.ndarray:
    """Per-step exponents theta.dB - |theta|^2 dt / 2, shape (M, N)."""
    if bundle.controlled:
        raise ValueError("Girsanov densities need an uncontrolled bundle")
    M, N, d = bundle.path_count, bundle.grid.steps, bundle.dim
    ai, bi = _index_table(a_index, M, N), _index_table(b_index, M, N)
    ga, gb = model.control_grid_a, model.control_grid_b
    t = bundle.grid.nodes
    dt = bundle.grid.dt
    out = np.empty((M, N))
    for i in range(N):
        x = bundle.states[:, i]
        f = check_finite("drift", model.drift(t[i], x, ga[ai[:, i]], gb[bi[:, i]])).reshape(M, d)
        theta = np.einsum("mij,mj->mi", sigma_inverse(model, t[i], x), f)
        out[:, i] = (theta * bundle.increments[:, i]).sum(axis=1) - 0.5 * (theta ** 2).sum(axis=1) * dt
    return out


def girsanov_density(model: GameModel, bundle: PathBundle, a_index, b_index) -> np.ndarray:
    """Discretized stochastic exponential dP^(u,v)/dP per path."""
    dens = np.exp(girsanov_log_density(model, bundle, a_index, b_index).sum(axis=1))
    if not np.all(np.isfinite(dens) & (dens > 0)):
        raise SimulationError("Girsanov density overflowed or underflowed")
    return dens


def moment_estimate(bundle: PathBundle, q: float) -> float:
    """Monte Carlo estimate of E[max_i |X_i|^q]."""
    if q == 0:
        return 1.0
    running_max = np.linalg.norm(bundle.states, axis=2).max(axis=1)
    return float(np.mean(running_max ** q))


def write_paths_csv(bundle: PathBundle, path) -> None:
    from .io import write_csv
    M, N1, d = bundle.states.shape
    t = bundle.grid.nodes
    header = ["path_id", "step", "t"] + [f"x{k}" for k in range(d)]
    rows = ([m, i, t[i], *bundle.states[m, i]] for m in range(M) for i in range(N1))
    write_csv(path, header, rows)
