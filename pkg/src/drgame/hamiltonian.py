"""Game Hamiltonian H(t, x, z, a, b) = z . sigma^{-1} f + Gamma and its Isaacs values.

The inf-sup is an exhaustive scan of the control grids (see ``kernels``).
The minimizer picks rows (grid A), the maximizer columns (grid B).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import GameModel, ModelError, as_states, check_finite

ISAACS_THRESHOLD = 1e-9
SADDLE_TOL = 1e-12
_CHUNK_ENTRIES = 2_000_000


class IllConditionedDiffusion(ModelError):
    """sigma(t, x) is singular or its condition number exceeds the bound."""


class IsaacsViolation(RuntimeError):
    """The grid-level Isaacs gap exceeds the configured threshold."""

    def __init__(self, gap, threshold):
        self.gap = gap
        self.threshold = threshold
        super().__init__(
            f"Isaacs gap {gap:.6g} exceeds threshold {threshold:.3g}; "
            "refusing to solve the game")


@dataclass(frozen=True)
class HamiltonianResult:
    value_infsup: float
    value_supinf: float
    ustar_index: int
    vstar_index: int

    @property
    def gap(self) -> float:
        return self.value_infsup - self.value_supinf


@dataclass(frozen=True)
class HamiltonianBatch:
    """Array version of ``HamiltonianResult`` over a batch of (t, x, z)."""

    value_infsup: np.ndarray
    value_supinf: np.ndarray
    ustar_index: np.ndarray
    vstar_index: np.ndarray

    @property
    def gap(self) -> np.ndarray:
        return self.value_infsup - self.value_supinf


def _tvec(t, n):
    t = np.asarray(t, dtype=float)
    return np.full(n, float(t)) if t.ndim == 0 else t.reshape(n)


def sigma_inverse(model: GameModel, t, x) -> np.ndarray:
    """Batched sigma^{-1}(t, x); errors name the first offending (t, x)."""
    x = as_states(x, model.dim)
    n, d = x.shape
    sig = check_finite("diffusion", model.diffusion(t, x)).reshape(n, d, d)
    if d == 1:
        s = sig[:, 0, 0]
        bad = s == 0.0
        inv = np.zeros_like(sig)
        inv[~bad, 0, 0] = 1.0 / s[~bad]
    else:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(sig)
        bad = ~np.isfinite(cond) | (cond > model.cond_bound)
        inv = np.linalg.inv(np.where(bad[:, None, None], np.eye(d), sig))
    if np.any(bad):
        k = int(np.argmax(bad))
        tk = float(_tvec(t, n)[k])
        raise IllConditionedDiffusion(
            f"sigma is singular or ill-conditioned at t={tk:.6g}, x={x[k].tolist()}")
    return inv


@dataclass
class ControlTerms:
    """Drift and running cost tabulated over the control grids for a batch of states.

    Full models hold ``drift`` (n, Ka, Kb, d) and ``cost`` (n, Ka, Kb). Split
    models hold per-player tables: ``drift_a`` (n, Ka, d), ``cost_a`` (n, Ka)
    and the same for b.
    """

    split: bool
    drift: np.ndarray | None = None
    cost: np.ndarray | None = None
    drift_a: np.ndarray | None = None
    cost_a: np.ndarray | None = None
    drift_b: np.ndarray | None = None
    cost_b: np.ndarray | None = None


def control_terms(model: GameModel, t, x) -> ControlTerms:
    x = as_states(x, model.dim)
    n, d = x.shape
    ga, gb = model.control_grid_a, model.control_grid_b
    ka, kb = ga.shape[0], gb.shape[0]
    tv = _tvec(t, n)
    if model.is_split:
        s = model.split
        xa, ta = np.repeat(x, ka, axis=0), np.repeat(tv, ka)
        aa = np.tile(ga, (n, 1))
        xb, tb = np.repeat(x, kb, axis=0), np.repeat(tv, kb)
        bb = np.tile(gb, (n, 1))
        return ControlTerms(
            split=True,
            drift_a=check_finite("drift", s.drift_a(ta, xa, aa)).reshape(n, ka, d),
            cost_a=check_finite("running_cost", s.cost_a(ta, xa, aa)).reshape(n, ka),
            drift_b=check_finite("drift", s.drift_b(tb, xb, bb)).reshape(n, kb, d),
            cost_b=check_finite("running_cost", s.cost_b(tb, xb, bb)).reshape(n, kb),
        )
    reps = ka * kb
    xr, tr = np.repeat(x, reps, axis=0), np.repeat(tv, reps)
    ar = np.tile(np.repeat(ga, kb, axis=0), (n, 1))
    br = np.tile(gb, (n * ka, 1))
    f = check_finite("drift", model.drift(tr, xr, ar, br)).reshape(n, ka, kb, d)
    g = check_finite("running_cost", model.running_cost(tr, xr, ar, br)).reshape(n, ka, kb)
    return ControlTerms(split=False, drift=f, cost=g)


def _contract(z, sinv, drift):
    # z . sigma^{-1} f with z a row vector; drift is (n, ..., d)
    theta = np.einsum("nij,n...j->n...i", sinv, drift)
    return np.einsum("ni,n...i->n...", z, theta)


def hamiltonian_tables(model: GameModel, t, x, z):
    """H over the grid product; returns ("full", H) or ("split", A, B)."""
    x = as_states(x, model.dim)
    z = np.asarray(z, dtype=float).reshape(x.shape)
    sinv = sigma_inverse(model, t, x)
    terms = control_terms(model, t, x)
    if terms.split:
        A = _contract(z, sinv, terms.drift_a) + terms.cost_a
        B = _contract(z, sinv, terms.drift_b) + terms.cost_b
        return "split", A, B
    return "full", _contract(z, sinv, terms.drift) + terms.cost


def _chunks(n, per_state):
    size = max(1, _CHUNK_ENTRIES // max(per_state, 1))
    for lo in range(0, n, size):
        yield slice(lo, min(n, lo + size))


def isaacs_batch(model: GameModel, t, x, z) -> HamiltonianBatch:
    """Vectorized ``isaacs_infsup`` over states ``x`` (n, d) and gradients ``z`` (n, d)."""
    x = as_states(x, model.dim)
    n = x.shape[0]
    z = np.asarray(z, dtype=float).reshape(x.shape)
    tv = _tvec(t, n)
    per_state = model.control_grid_a.shape[0] * model.control_grid_b.shape[0]
    out = [np.empty(n), np.empty(n), np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64)]
    for sl in _chunks(n, per_state):
        tables = hamiltonian_tables(model, tv[sl], x[sl], z[sl])
        if tables[0] == "split":
            res = kernels.split_minimax(np.ascontiguousarray(tables[1]),
                                        np.ascontiguousarray(tables[2]))
        else:
            res = kernels.minimax(np.ascontiguousarray(tables[1]))
        for buf, r in zip(out, res):
            buf[sl] = r
    if not np.all(np.isfinite(out[0])):
        raise ModelError("non-finite Hamiltonian value")
    return HamiltonianBatch(*out)


def hamiltonian_value(model: GameModel, t, x, z, a, b) -> float:
    """H at a single (t, x, z, a, b); a and b are control points (not indices)."""
    x = as_states(x, model.dim)
    z = np.asarray(z, dtype=float).reshape(1, model.dim)
    a = np.asarray(a, dtype=float).reshape(1, -1)
    b = np.asarray(b, dtype=float).reshape(1, -1)
    sinv = sigma_inverse(model, t, x)
    tv = _tvec(t, 1)
    if model.is_split:
        s = model.split
        A = _contract(z, sinv, s.drift_a(tv, x, a).reshape(1, -1)) + s.cost_a(tv, x, a)
        B = _contract(z, sinv, s.drift_b(tv, x, b).reshape(1, -1)) + s.cost_b(tv, x, b)
        return float(np.asarray(A).reshape(-1)[0] + np.asarray(B).reshape(-1)[0])
    f = model.drift(tv, x, a, b).reshape(1, -1)
    return float(_contract(z, sinv, f)[0] + np.asarray(model.running_cost(tv, x, a, b)).reshape(-1)[0])


def isaacs_infsup(model: GameModel, t, x, z) -> HamiltonianResult:
    res = isaacs_batch(model, t, np.asarray(x, dtype=float).reshape(1, -1),
                       np.asarray(z, dtype=float).reshape(1, -1))
    return HamiltonianResult(float(res.value_infsup[0]), float(res.value_supinf[0]),
                             int(res.ustar_index[0]), int(res.vstar_index[0]))


def saddle_pointwise_check(model: GameModel, t, x, z, result: HamiltonianResult,
                           tol: float = SADDLE_TOL) -> bool:
    """True iff (u*, v*) is a pure saddle of H over the full grid product."""
    tables = hamiltonian_tables(model, t, np.asarray(x, dtype=float).reshape(1, -1), z)
    if tables[0] == "split":
        H = tables[1][0][:, None] + tables[2][0][None, :]
    else:
        H = tables[1][0]
    centre = H[result.ustar_index, result.vstar_index]
    return bool(np.all(H[result.ustar_index, :] <= centre + tol)
                and np.all(centre <= H[:, result.vstar_index] + tol))


def isaacs_gap_audit(model: GameModel, sample_count: int, z_radius: float, seed: int,
                     x_radius: float = 3.0) -> float:
    """Largest grid-level Isaacs gap over random (t, x, z) samples.

    States are drawn uniformly in the ball of radius ``x_radius`` around the
    initial state and gradients uniformly in the ball of radius ``z_radius``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    d = model.dim

    def ball(radius):
        v = rng.standard_normal((sample_count, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * (radius * rng.uniform(size=sample_count) ** (1.0 / d))[:, None]

    t = rng.uniform(0.0, model.horizon, size=sample_count)
    x = model.initial_state + ball(x_radius)
    z = ball(z_radius)
    return float(np.max(isaacs_batch(model, t, x, z).gap))


def require_isaacs(model: GameModel, threshold: float = ISAACS_THRESHOLD,
                   sample_count: int = 1000, z_radius: float = 10.0, seed: int = 0) -> float:
    """Run the gap audit and raise ``IsaacsViolation`` above ``threshold``."""
    gap = isaacs_gap_audit(model, sample_count, z_radius, seed)
    if gap > threshold:
        raise IsaacsViolation(gap, threshold)
    return gap
