"""Explicit monotone finite differences for the double-obstacle HJBI problem.

The Hamiltonian term is discretized per control pair: for every (a, b) the
transport part grad(u).f is upwinded by the sign of each component of f, and
the inf-sup is taken over these upwinded values. With z = sigma^T grad(u) this
is the scheme's version of H*(t, x, z); for smooth u it agrees with
``hamiltonian.isaacs_infsup`` to O(dx). Every inner expression is
non-decreasing in the neighbour values, so the scheme is monotone under the
step restriction

    dt <= 1 / (sum_k a_kk / dx_k^2 + sum_k max|f_k| / dx_k),    a = sigma sigma^T.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .drbsde import ramp
from .forward_sde import TimeGrid
from .hamiltonian import control_terms, require_isaacs
from .model import GameModel, ModelError, check_finite

INTERIOR, LOWER, UPPER = 0, -1, 1
CFL_SAFETY = 0.95


class CFLError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpaceGrid:
    lower: tuple
    upper: tuple
    nodes: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        nn = tuple(int(v) for v in np.atleast_1d(self.nodes))
        if not (len(lo) == len(hi) == len(nn)):
            raise ValueError("bounds and node counts must have one entry per dimension")
        if not all(np.isfinite(lo + hi)) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("need finite bounds with lower < upper")
        if any(n < 3 for n in nn):
            raise ValueError("need at least 3 nodes per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "nodes", nn)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / (n - 1) for a, b, n in zip(self.lower, self.upper, self.nodes)])

    @property
    def axes(self) -> list:
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.nodes)]

    @property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        return bool(np.all(x >= np.array(self.lower)) and np.all(x <= np.array(self.upper)))

    def halved(self) -> "SpaceGrid":
        """Grid with twice the spacing (used for grid-error estimates)."""
        return SpaceGrid(self.lower, self.upper, tuple((n - 1) // 2 + 1 for n in self.nodes))


@dataclass
class ValueSurface:
    tgrid: TimeGrid
    sgrid: SpaceGrid
    u: np.ndarray            # (N+1, *nodes)
    contact: np.ndarray      # (N+1, *nodes) int8: -1 lower, +1 upper, 0 interior
    substeps: np.ndarray     # per coarse step
    dt_sub_min: float
    cfl_ratio: float         # largest dt_sub / dt_max actually used
    generator: str = "hamiltonian"
    exp_scaled: bool = False
    meta: dict = field(default_factory=dict)

    def _interp(self, values, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.sgrid.dim)
        x = np.clip(x, self.sgrid.lower, self.sgrid.upper)
        f = RegularGridInterpolator(tuple(self.sgrid.axes), values, method="linear")
        return f(x)

    def value(self, i: int, x) -> np.ndarray:
        return self._interp(self.u[i], x)

    def value_at_time(self, t: float, x) -> np.ndarray:
        s = np.clip(t / self.tgrid.dt, 0, self.tgrid.steps)
        i = min(int(math.floor(s)), self.tgrid.steps - 1)
        w = s - i
        return (1 - w) * self.value(i, x) + w * self.value(i + 1, x)

    def gradient(self, i: int, x) -> np.ndarray:
        """Central difference of the interpolant with step dx."""
        x = np.asarray(x, dtype=float).reshape(-1, self.sgrid.dim)
        h = self.sgrid.spacing
        out = np.empty_like(x)
        lo, hi = np.array(self.sgrid.lower), np.array(self.sgrid.upper)
        for k in range(self.sgrid.dim):
            xp, xm = x.copy(), x.copy()
            xp[:, k] = np.minimum(x[:, k] + h[k], hi[k])
            xm[:, k] = np.maximum(x[:, k] - h[k], lo[k])
            width = xp[:, k] - xm[:, k]
            out[:, k] = (self.value(i, xp) - self.value(i, xm)) / np.where(width > 0, width, 1.0)
        return out

    def z(self, model: GameModel, i: int, x) -> np.ndarray:
        """z = sigma^T grad(u), the gradient argument of the Hamiltonian."""
        x = np.asarray(x, dtype=float).reshape(-1, model.dim)
        sig = model.diffusion(self.tgrid.nodes[i], x).reshape(-1, model.dim, model.dim)
        return np.einsum("nji,nj->ni", sig, self.gradient(i, x))


# ---------------------------------------------------------------------------
# discrete operators


def _shifts(U, k):
    """Forward and backward neighbours along axis k (edges repeat; overwritten later)."""
    up = np.concatenate([U.take(np.arange(1, U.shape[k]), axis=k),
                         U.take([U.shape[k] - 1], axis=k)], axis=k)
    dn = np.concatenate([U.take([0], axis=k), U.take(np.arange(0, U.shape[k] - 1), axis=k)], axis=k)
    return up, dn


def _diffusion_matrix(model, t, pts):
    d = model.dim
    sig = check_finite("diffusion", model.diffusion(t, pts)).reshape(-1, d, d)
    return np.einsum("nij,nkj->nik", sig, sig)


def _operator(model, t, U, sgrid, pts, n_trunc, m_trunc, smooth):
    """Diffusion term, discrete Hamiltonian and the per-node step bound at time t."""
    d = sgrid.dim
    h = sgrid.spacing
    shape = U.shape
    a = _diffusion_matrix(model, t, pts)
    Dp = np.empty((pts.shape[0], d))
    Dm = np.empty((pts.shape[0], d))
    diff = np.zeros(pts.shape[0])
    for k in range(d):
        up, dn = _shifts(U, k)
        Dp[:, k] = ((up - U) / h[k]).reshape(-1)
        Dm[:, k] = ((U - dn) / h[k]).reshape(-1)
        diff += 0.5 * a[:, k, k] * ((up - 2 * U + dn) / h[k] ** 2).reshape(-1)
    for k in range(d):
        for l in range(k + 1, d):
            upk, dnk = _shifts(U, k)
            pp, pm = _shifts(upk, l)
            mp, mm = _shifts(dnk, l)
            cross = (pp - pm - mp + mm) / (4 * h[k] * h[l])
            diff += a[:, k, l] * cross.reshape(-1)

    terms = control_terms(model, t, pts)
    if terms.split:
        A = _upwind(terms.drift_a, Dp, Dm) + terms.cost_a
        B = _upwind(terms.drift_b, Dp, Dm) + terms.cost_b
        H = kernels.split_minimax(np.ascontiguousarray(A), np.ascontiguousarray(B))[0]
        speed = (np.abs(terms.drift_a).max(axis=1) + np.abs(terms.drift_b).max(axis=1))
    else:
        E = _upwind(terms.drift, Dp, Dm) + terms.cost
        H = kernels.minimax(np.ascontiguousarray(E))[0]
        speed = np.abs(terms.drift).max(axis=(1, 2))
    if np.isfinite(n_trunc) or np.isfinite(m_trunc):
        xn = np.linalg.norm(pts, axis=1)
        pos, neg = np.maximum(H, 0.0), np.maximum(-H, 0.0)
        if smooth:
            H = pos * ramp(n_trunc, xn) - neg * ramp(m_trunc, xn)
        else:
            H = pos * (xn <= n_trunc) - neg * (xn <= m_trunc)
    rate = (np.einsum("nkk->nk", a) / h ** 2).sum(axis=1) + (speed / h).sum(axis=1)
    return diff.reshape(shape), H.reshape(shape), rate


def _upwind(f, Dp, Dm):
    # f: (n, ..., d); Dp, Dm: (n, d)
    extra = (slice(None),) + (None,) * (f.ndim - 2) + (slice(None),)
    return (np.maximum(f, 0.0) * Dp[extra] - np.maximum(-f, 0.0) * Dm[extra]).sum(axis=-1)


def _extrapolate(U):
    for k in range(U.ndim):
        n = U.shape[k]
        idx = [slice(None)] * U.ndim

        def at(j):
            idx[k] = j
            return tuple(idx)

        U[at(0)] = 2 * U[at(1)] - U[at(2)]
        U[at(n - 1)] = 2 * U[at(n - 2)] - U[at(n - 3)]
    return U


def _project(model, t, pts, U):
    lo = check_finite("lower_obstacle", model.lower_obstacle(t, pts)).reshape(U.shape)
    hi = check_finite("upper_obstacle", model.upper_obstacle(t, pts)).reshape(U.shape)
    if np.any(lo > hi):
        raise ModelError(f"lower obstacle exceeds upper obstacle at t={t:.6g}")
    # a node counts as in contact when it ends up on an obstacle, clamped or not
    contact = np.where(U <= lo, LOWER, np.where(U >= hi, UPPER, INTERIOR)).astype(np.int8)
    return np.minimum(np.maximum(U, lo), hi), contact


def solve_double_obstacle_pde(model: GameModel, tgrid: TimeGrid, sgrid: SpaceGrid,
                              n: float = np.inf, m: float = np.inf, smooth: bool = True,
                              check_isaacs: bool = True, max_substeps: int = 1_000_000,
                              ) -> ValueSurface:
    """Backward explicit scheme with CFL sub-stepping and exact obstacle projection.

    Finite ``n``/``m`` replace H* by the truncation H+ ramp_n(|x|) - H- ramp_m(|x|)
    (indicator cut-offs when ``smooth`` is False).
    """
    if model.dim != sgrid.dim or model.dim > 2:
        raise ValueError("PDE solver needs d <= 2 and a grid of matching dimension")
    if abs(tgrid.horizon - model.horizon) > 1e-12:
        raise ValueError("time grid horizon does not match the model")
    if check_isaacs:
        require_isaacs(model)
    if not sgrid.contains(model.initial_state):
        raise ValueError("initial state lies outside the spatial grid")

    pts = sgrid.points
    shape = sgrid.nodes
    t = tgrid.nodes
    N = tgrid.steps

    smax = max(np.max(_diffusion_matrix(model, tt, pts)) for tt in (t[0], t[-1]))
    margin = 4 * math.sqrt(model.horizon * smax)
    x0 = model.initial_state
    if np.any(x0 - margin < np.array(sgrid.lower)) or np.any(x0 + margin > np.array(sgrid.upper)):
        warnings.warn(f"spatial domain gives x0 less than {margin:.3g} margin; "
                      "truncation error may be visible", stacklevel=2)

    u = np.empty((N + 1,) + shape)
    contact = np.zeros((N + 1,) + shape, dtype=np.int8)
    u[N] = check_finite("terminal", model.terminal(pts)).reshape(shape)
    substeps = np.zeros(N, dtype=np.int64)
    total = 0
    dt_min = np.inf
    ratio = 0.0
    U = u[N].copy()
    for i in range(N - 1, -1, -1):
        s = t[i + 1]
        diff, H, rate = _operator(model, s, U, sgrid, pts, n, m, smooth)
        k = max(1, math.ceil(tgrid.dt * np.max(rate) / CFL_SAFETY))
        total += k
        if total > max_substeps:
            raise CFLError(f"CFL sub-stepping exceeds the budget of {max_substeps} steps")
        dt_sub = tgrid.dt / k
        for j in range(k):
            if j > 0:
                diff, H, rate = _operator(model, s, U, sgrid, pts, n, m, smooth)
            ratio = max(ratio, dt_sub * float(np.max(rate)))
            if dt_sub * np.max(rate) > 1.0:
                raise CFLError(f"step {dt_sub:.3g} violates the monotonicity bound at t={s:.6g}")
            U = U + dt_sub * (diff + H)
            if not np.all(np.isfinite(U)):
                raise ModelError(f"non-finite PDE update at t={s:.6g}")
            U = _extrapolate(U)
            s = t[i + 1] - (j + 1) * dt_sub
            U, c = _project(model, s, pts, U)
        u[i] = U
        contact[i] = c
        substeps[i] = k
        dt_min = min(dt_min, dt_sub)

    tag = "hamiltonian" if not (np.isfinite(n) or np.isfinite(m)) else (
        f"{'smoothed' if smooth else 'truncated'}(n={n:g},m={m:g})")
    return ValueSurface(tgrid, sgrid, u, contact, substeps, float(dt_min), ratio, tag,
                        meta={"n": n, "m": m, "smooth": smooth})


def truncated_pde_solve(model: GameModel, tgrid: TimeGrid, sgrid: SpaceGrid,
                        n: float, m: float, **kw) -> ValueSurface:
    """Same scheme with the continuous ramp truncation of H*."""
    if n < 0 or m < 0:
        raise ValueError("n and m must be >= 0")
    return solve_double_obstacle_pde(model, tgrid, sgrid, n=n, m=m, smooth=True, **kw)


def exp_change_of_variable(surface: ValueSurface, direction: str = "forward") -> ValueSurface:
    """Multiply (forward) or divide (inverse) each time slice by exp(t)."""
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    sign = 1.0 if direction == "forward" else -1.0
    w = np.exp(sign * surface.tgrid.nodes).reshape((-1,) + (1,) * surface.sgrid.dim)
    out = ValueSurface(**{**surface.__dict__})
    out.u = surface.u * w
    out.exp_scaled = direction == "forward"
    return out


# ---------------------------------------------------------------------------
# residual audit


@dataclass
class ResidualReport:
    tolerance: float
    dt: float
    dx: float
    interior_max: float
    interior_worst: dict
    lower_gap_max: float          # max |u - h| at lower contact
    lower_sign_min: float         # min max[R, u - h'] at lower contact
    upper_gap_max: float
    upper_residual_max: float     # max R at upper contact
    counts: dict
    fitted_constant: float        # interior_max / (dt + dx)

    @property
    def ok(self) -> bool:
        tol = self.tolerance
        return (self.interior_max <= tol and self.lower_gap_max <= 1e-12
                and self.lower_sign_min >= -tol and self.upper_gap_max <= 1e-12
                and self.upper_residual_max <= tol)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def discrete_residual(model: GameModel, surface: ValueSurface) -> np.ndarray:
    """R = -du/dt - L u - H at times 0..N-1, operators evaluated on slice i+1."""
    sg, tg = surface.sgrid, surface.tgrid
    pts = sg.points
    n, m = surface.meta.get("n", np.inf), surface.meta.get("m", np.inf)
    smooth = surface.meta.get("smooth", True)
    R = np.empty((tg.steps,) + sg.nodes)
    for i in range(tg.steps):
        diff, H, _ = _operator(model, tg.nodes[i + 1], surface.u[i + 1], sg, pts, n, m, smooth)
        R[i] = -(surface.u[i + 1] - surface.u[i]) / tg.dt - diff - H
    return R


def viscosity_residual_check(model: GameModel, surface: ValueSurface,
                             c_tol: float = 1.0) -> ResidualReport:
    """Sign conditions of the obstacle problem per contact category.

    Tolerance is ``c_tol * (dt + dx)``; only spatially interior nodes are
    audited (the boundary rows are extrapolated, not solved).
    """
    sg, tg = surface.sgrid, surface.tgrid
    dx = float(np.max(sg.spacing))
    tol = c_tol * (tg.dt + dx)
    R = discrete_residual(model, surface)
    pts = sg.points
    inner = np.ones(sg.nodes, dtype=bool)
    for k in range(sg.dim):
        idx = [slice(None)] * sg.dim
        idx[k] = [0, sg.nodes[k] - 1]
        inner[tuple(idx)] = False

    interior_max, worst = 0.0, {}
    lo_gap, lo_sign, up_gap, up_res = 0.0, np.inf, 0.0, -np.inf
    counts = {"interior": 0, "lower": 0, "upper": 0}
    for i in range(tg.steps):
        t = tg.nodes[i]
        u = surface.u[i]
        h = model.lower_obstacle(t, pts).reshape(sg.nodes)
        hp = model.upper_obstacle(t, pts).reshape(sg.nodes)
        c = surface.contact[i]
        mi = inner & (c == INTERIOR)
        ml = inner & (c == LOWER)
        mu = inner & (c == UPPER)
        counts["interior"] += int(mi.sum())
        counts["lower"] += int(ml.sum())
        counts["upper"] += int(mu.sum())
        if mi.any():
            val = np.abs(np.minimum(u - h, np.maximum(R[i], u - hp)))[mi]
            k = int(np.argmax(val))
            if val[k] > interior_max or not worst:
                interior_max = max(interior_max, float(val[k]))
                worst = {"step": i, "x": pts[mi.reshape(-1)][k].tolist(), "value": float(val[k])}
        if ml.any():
            lo_gap = max(lo_gap, float(np.max(np.abs(u - h)[ml])))
            lo_sign = min(lo_sign, float(np.min(np.maximum(R[i], u - hp)[ml])))
        if mu.any():
            up_gap = max(up_gap, float(np.max(np.abs(u - hp)[mu])))
            up_res = max(up_res, float(np.max(R[i][mu])))
    return ResidualReport(
        tol, tg.dt, dx, interior_max, worst, lo_gap,
        float(lo_sign) if np.isfinite(lo_sign) else np.inf,
        up_gap, float(up_res) if np.isfinite(up_res) else -np.inf,
        counts, interior_max / (tg.dt + dx))


# ---------------------------------------------------------------------------
# cross-check against the probabilistic solution


@dataclass
class CrossCheckReport:
    u0: float
    y0: float
    gap: float
    tolerance: float
    mc_error: float
    grid_error: float
    bias_allowance: float
    probes: list

    @property
    def ok(self) -> bool:
        return self.gap <= self.tolerance

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ok"] = self.ok
        return d


def compare_pde_probabilistic(surface: ValueSurface, vp, model: GameModel,
                              bundle=None, probe_steps=(), coarse_surface: ValueSurface | None = None,
                              bias_allowance: float = 0.01, probe_allowance: float = 0.05,
                              ) -> CrossCheckReport:
    """|u(0, x0) - Y0| against 3 standard errors + grid error + regression allowance.

    ``coarse_surface`` (same problem on a coarser grid) supplies the grid
    error estimate. Intermediate probes at ``probe_steps`` compare u(t_i, x)
    with the regression-evaluated Y at the 10%..90% quantiles of the path
    cloud in ``bundle``.
    """
    x0 = model.initial_state
    if not surface.sgrid.contains(x0):
        raise ValueError("x0 lies outside the spatial grid")
    u0 = float(surface.value(0, x0)[0])
    grid_err = 0.0
    if coarse_surface is not None:
        grid_err = abs(u0 - float(coarse_surface.value(0, x0)[0]))
    mc = 3.0 * vp.std_error
    tol = mc + grid_err + bias_allowance
    probes = []
    for i in probe_steps:
        if bundle is None:
            break
        xi = bundle.states[:, i]
        qs = np.quantile(xi, np.linspace(0.1, 0.9, 9), axis=0)
        y, _ = vp.evaluate(model, i, qs)
        ui = surface.value_at_time(vp.grid.nodes[i], qs)
        g = float(np.max(np.abs(y - ui)))
        probes.append({"step": int(i), "t": float(vp.grid.nodes[i]), "max_gap": g,
                       "tolerance": grid_err + probe_allowance,
                       "ok": g <= grid_err + probe_allowance})
    return CrossCheckReport(u0, vp.y0, abs(u0 - vp.y0), tol, mc, grid_err, bias_allowance, probes)
