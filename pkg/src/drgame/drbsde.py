"""Backward regression solver for the doubly reflected BSDE with a game generator.

The scheme is the discretely reflected least-squares Monte Carlo recursion:
continuation and Z are cross-sectional regressions on the state at t_i, the
driver is applied explicitly and the result is projected onto [h, h'].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import solve_triangular

from .forward_sde import PathBundle, TimeGrid
from .hamiltonian import isaacs_batch, require_isaacs
from .model import GameModel, ModelError, check_finite

TOL_BARRIER = 1e-8
COMP_REL = 1e-6
MAX_TREE_LEVELS = 4096
MIN_PER_BIN = 10


class RegressionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# regression bases


@dataclass(frozen=True)
class RegressionBasis:
    family: str = "poly"      # "poly" (global polynomials) or "bins" (equal-mass bins)
    degree: int = 4
    bins: int = 64
    local_linear: bool = False   # bins only: affine fit inside each cell

    def __post_init__(self):
        if self.family not in ("poly", "bins"):
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.degree < 0 or self.bins < 1:
            raise ValueError("degree must be >= 0 and bins >= 1")

    def fit(self, x: np.ndarray) -> "FittedBasis":
        x = np.asarray(x, dtype=float)
        lo, hi = x.min(axis=0), x.max(axis=0)
        if np.all(hi - lo <= 1e-14 * np.maximum(1.0, np.abs(lo))):
            return FittedBasis("const", lo, hi)
        if self.family == "poly":
            d = x.shape[1]
            mean, std = x.mean(axis=0), x.std(axis=0)
            std = np.where(std > 0, std, 1.0)
            powers = [np.zeros(d, dtype=int)]
            for deg in range(1, self.degree + 1):
                for combo in combinations_with_replacement(range(d), deg):
                    powers.append(np.bincount(combo, minlength=d))
            return FittedBasis("poly", lo, hi, center=mean, scale=std,
                               powers=np.array(powers))
        d = x.shape[1]
        # at least MIN_PER_BIN samples per cell on average
        cap = (x.shape[0] / MIN_PER_BIN) ** (1.0 / d)
        per_dim = max(1, int(min(round(self.bins ** (1.0 / d)), cap)))
        qs = np.linspace(0.0, 1.0, per_dim + 1)[1:-1]
        edges = [np.unique(np.quantile(x[:, k], qs)) for k in range(d)]
        fb = FittedBasis("bins", lo, hi, edges=edges)
        if self.local_linear:
            cell = fb.cells(x)
            count = np.maximum(np.bincount(cell, minlength=fb.cell_count), 1)
            fb.center = np.stack([np.bincount(cell, x[:, k], fb.cell_count) / count
                                  for k in range(d)], axis=1)
        return fb


def monotone_basis(dim: int) -> RegressionBasis:
    """Flat equal-mass bins: cell averages have non-negative weights, so the
    backward step preserves pathwise order between generators."""
    return RegressionBasis("bins", bins=64)


def default_basis(dim: int) -> RegressionBasis:
    # equal-mass bins follow the obstacle kinks; global polynomials smear them.
    # The affine term per cell keeps the slope that flat cells lose in the tails.
    return RegressionBasis("bins", bins=64, local_linear=True)


@dataclass
class FittedBasis:
    kind: str
    lower: np.ndarray
    upper: np.ndarray
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    powers: np.ndarray | None = None
    edges: list | None = None

    @property
    def size(self) -> int:
        if self.kind == "const":
            return 1
        if self.kind == "poly":
            return len(self.powers)
        return self.cell_count * self.cell_width

    @property
    def cell_count(self) -> int:
        return int(np.prod([len(e) + 1 for e in self.edges]))

    @property
    def cell_width(self) -> int:
        """Coefficients per cell: 1, or 1 + d with per-cell slopes."""
        return 1 if self.center is None else 1 + len(self.lower)

    def cell_design(self, x: np.ndarray):
        """(cell index, per-cell regressors [1, x - centre]) for bin bases."""
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        cell = self.cells(x)
        G = np.ones((x.shape[0], self.cell_width))
        if self.center is not None:
            G[:, 1:] = x - self.center[cell]
        return cell, G

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        n = x.shape[0]
        if self.kind == "const":
            return np.ones((n, 1))
        if self.kind == "poly":
            s = (x - self.center) / self.scale
            return np.prod(s[:, None, :] ** self.powers[None, :, :], axis=2)
        cell, G = self.cell_design(x)
        F = np.zeros((n, self.size))
        cols = cell[:, None] * self.cell_width + np.arange(self.cell_width)
        F[np.arange(n)[:, None], cols] = G
        return F

    def cells(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        cell = np.zeros(x.shape[0], dtype=np.int64)
        for k, e in enumerate(self.edges):
            cell = cell * (len(e) + 1) + np.searchsorted(e, x[:, k], side="right")
        return cell


@dataclass
class StepFit:
    basis: FittedBasis
    coef_c: np.ndarray       # (k,)
    coef_z: np.ndarray       # (k, d)

    def continuation(self, x):
        return self.basis.features(x) @ self.coef_c

    def z(self, x):
        return self.basis.features(x) @ self.coef_z


class _Projector:
    """Least-squares projection onto a fitted basis at one time step.

    Bin bases decouple into one small normal-equation system per cell, which
    skips the dense QR.
    """

    def __init__(self, fb: FittedBasis, x: np.ndarray, step: int):
        self.fb = fb
        if fb.kind == "bins":
            self.cell, self.G = fb.cell_design(x)
            K, p = fb.cell_count, fb.cell_width
            if np.any(np.bincount(self.cell, minlength=K) == 0):
                raise RegressionError(f"empty regression bin at step {step}")
            A = np.empty((K, p, p))
            for a in range(p):
                for b in range(a, p):
                    A[:, a, b] = A[:, b, a] = np.bincount(
                        self.cell, self.G[:, a] * self.G[:, b], K)
            # a whisker of ridge on the slopes keeps single-point cells solvable
            A[:, np.arange(1, p), np.arange(1, p)] += 1e-12 * A[:, :1, 0]
            self.A = A
            return
        self.F = fb.features(x)
        if self.F.shape[0] < self.F.shape[1]:
            raise RegressionError(f"fewer paths than basis functions at step {step}")
        self.Q, self.R = np.linalg.qr(self.F)
        diag = np.abs(np.diag(self.R))
        if diag.size == 0 or np.min(diag) <= 1e-10 * max(np.max(diag), 1e-300):
            raise RegressionError(f"rank-deficient regression design at step {step}")

    def coef(self, rhs: np.ndarray) -> np.ndarray:
        if self.fb.kind == "bins":
            if rhs.ndim == 2:
                return np.stack([self.coef(rhs[:, j]) for j in range(rhs.shape[1])], axis=1)
            K, p = self.A.shape[:2]
            b = np.stack([np.bincount(self.cell, self.G[:, a] * rhs, K) for a in range(p)], axis=1)
            return np.linalg.solve(self.A, b[:, :, None])[:, :, 0].reshape(-1)
        return solve_triangular(self.R, self.Q.T @ rhs)

    def fitted(self, coef: np.ndarray) -> np.ndarray:
        if self.fb.kind != "bins":
            return self.F @ coef
        p = self.fb.cell_width
        cols = self.cell[:, None] * p + np.arange(p)
        if coef.ndim == 1:
            return np.sum(self.G * coef[cols], axis=1)
        return np.einsum("np,npd->nd", self.G, coef[cols])


# ---------------------------------------------------------------------------
# generators


def phi_generator(t, x_norm, z, C: float, p: float):
    """Dominating generator C(1+|x|)|z| + C(1+|x|^p) (z given as (..., d))."""
    zn = np.linalg.norm(np.atleast_1d(z), axis=-1)
    out = C * (1.0 + x_norm) * zn + C * (1.0 + np.asarray(x_norm) ** p)
    return float(out) if np.ndim(out) == 0 else out


def truncated_phi(t, x_norm, z, C: float, p: float, n: float):
    """Generator whose z-coefficient is capped at n (Lipschitz in z)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    zn = np.linalg.norm(np.atleast_1d(z), axis=-1)
    out = np.minimum(C * (1.0 + x_norm), n) * zn + C * (1.0 + np.asarray(x_norm) ** p)
    return float(out) if np.ndim(out) == 0 else out


def ramp(k: float, r):
    """Continuous cutoff: 1 on [0, k], linear down to 0 on [k, k+1]."""
    return np.clip(1.0 + k - np.asarray(r, dtype=float), 0.0, 1.0)


def _truncate(h, xn, n, m, smooth):
    pos, neg = np.maximum(h, 0.0), np.maximum(-h, 0.0)
    if smooth:
        return pos * ramp(n, xn) - neg * ramp(m, xn)
    return pos * (xn <= n) - neg * (xn <= m)


def truncated_hamiltonian(model: GameModel, t, x, z, n: float, m: float):
    """H* with its positive part kept on |x| <= n and its negative part on |x| <= m."""
    if n < 0 or m < 0:
        raise ValueError("n and m must be >= 0")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, model.dim)
    h = isaacs_batch(model, t, X, np.asarray(z, dtype=float).reshape(X.shape)).value_infsup
    out = _truncate(h, np.linalg.norm(X, axis=1), n, m, smooth=False)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class Generator:
    """Driver selector: "hamiltonian", "truncated", "smoothed", "phi", "phi-truncated", "zero"."""

    kind: str = "hamiltonian"
    n: float = np.inf
    m: float = np.inf

    KINDS = ("hamiltonian", "truncated", "smoothed", "phi", "phi-truncated", "zero")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown generator {self.kind!r}")

    @property
    def needs_isaacs(self) -> bool:
        return self.kind in ("hamiltonian", "truncated", "smoothed")

    @property
    def tag(self) -> str:
        if self.kind in ("truncated", "smoothed"):
            return f"{self.kind}(n={self.n:g},m={self.m:g})"
        if self.kind == "phi-truncated":
            return f"phi-truncated(n={self.n:g})"
        return self.kind

    def __call__(self, model: GameModel, t, x, z) -> np.ndarray:
        xn = np.linalg.norm(x, axis=1)
        if self.kind == "zero":
            return np.zeros(x.shape[0])
        if self.kind == "phi":
            return phi_generator(t, xn, z, model.growth_constant, model.growth_exponent)
        if self.kind == "phi-truncated":
            return truncated_phi(t, xn, z, model.growth_constant, model.growth_exponent, self.n)
        h = isaacs_batch(model, t, x, z).value_infsup
        if self.kind == "hamiltonian":
            return h
        return _truncate(h, xn, self.n, self.m, smooth=self.kind == "smoothed")


# ---------------------------------------------------------------------------
# solver


@dataclass
class ValueProcess:
    grid: TimeGrid
    Y: np.ndarray            # (N+1, M)
    Z: np.ndarray            # (N, M, d)
    dKplus: np.ndarray       # (N, M)
    dKminus: np.ndarray      # (N, M)
    lower: np.ndarray        # (N+1, M) obstacle values along the paths
    upper: np.ndarray
    basis: RegressionBasis
    generator: Generator
    fits: list = field(repr=False, default_factory=list)   # StepFit per step 0..N-1
    residual: np.ndarray | None = field(repr=False, default=None)  # (M,) summed surprises

    @property
    def y0(self) -> float:
        return float(np.mean(self.Y[0]))

    @property
    def z0(self) -> np.ndarray:
        return self.Z[0].mean(axis=0)

    @property
    def std_error(self) -> float:
        """Monte Carlo standard error of Y[0].

        Per path, the one-step surprises Y[i+1] - C_i sum to the gap between
        the path's realized value and Y[0]. Their spread covers the noise fed
        back through every regression rather than the last one only, so the
        figure is conservative.
        """
        M = self.Y.shape[1]
        spread = self.residual if self.residual is not None else self.Y[1]
        return float(np.std(spread, ddof=1) / np.sqrt(M))

    def evaluate(self, model: GameModel, i: int, x: np.ndarray):
        """(Y, Z) at step i for arbitrary states, reusing the fitted regressions."""
        x = np.asarray(x, dtype=float).reshape(-1, model.dim)
        t = self.grid.nodes[i]
        if i >= self.grid.steps:
            return model.terminal(x).reshape(-1), np.zeros_like(x)
        fit = self.fits[i]
        z = fit.z(x)
        ytil = fit.continuation(x) + self.generator(model, t, x, z) * self.grid.dt
        y = np.clip(ytil, model.lower_obstacle(t, x), model.upper_obstacle(t, x))
        return y, z

    def invariants(self, tol_barrier: float = TOL_BARRIER, comp_rel: float = COMP_REL) -> dict:
        Y = self.Y
        below = float(np.max(self.lower - Y))
        above = float(np.max(Y - self.upper))
        both = int(np.sum((self.dKplus > 0) & (self.dKminus > 0)))
        neg = float(min(self.dKplus.min(), self.dKminus.min()))
        comp_lo = np.sum((Y[:-1] - self.lower[:-1]) * self.dKplus, axis=0)
        comp_hi = np.sum((self.upper[:-1] - Y[:-1]) * self.dKminus, axis=0)
        tv = np.sum(self.dKplus + self.dKminus, axis=0)
        eps = comp_rel * tv
        comp_excess = float(np.max(np.maximum(np.abs(comp_lo), np.abs(comp_hi)) - eps))
        return {
            "max_below_lower": below,
            "max_above_upper": above,
            "sandwich_ok": below <= tol_barrier and above <= tol_barrier,
            "both_reflections_active": both,
            "min_increment": neg,
            "complementarity_excess": comp_excess,
            "complementarity_ok": comp_excess <= 0.0,
            "ok": (below <= tol_barrier and above <= tol_barrier and both == 0
                   and neg >= 0.0 and comp_excess <= 0.0),
        }


def _obstacles(model, t, x):
    lo = check_finite("lower_obstacle", model.lower_obstacle(t, x)).reshape(-1)
    hi = check_finite("upper_obstacle", model.upper_obstacle(t, x)).reshape(-1)
    return lo, hi


def solve_drbsde(model: GameModel, bundle: PathBundle, basis: RegressionBasis | None = None,
                 generator: Generator | str = "hamiltonian", check_isaacs: bool = True,
                 isaacs_seed: int = 0) -> ValueProcess:
    if bundle.controlled:
        raise ValueError("solve_drbsde needs an uncontrolled bundle")
    if isinstance(generator, str):
        generator = Generator(generator)
    basis = basis or default_basis(model.dim)
    if generator.needs_isaacs and check_isaacs:
        require_isaacs(model, seed=isaacs_seed)

    grid = bundle.grid
    M, N, d = bundle.path_count, grid.steps, model.dim
    t, dt = grid.nodes, grid.dt
    X, dB = bundle.states, bundle.increments

    Y = np.empty((N + 1, M))
    Z = np.empty((N, M, d))
    dKp = np.zeros((N, M))
    dKm = np.zeros((N, M))
    lower = np.empty((N + 1, M))
    upper = np.empty((N + 1, M))
    fits: list = [None] * N
    resid = np.zeros(M)

    Y[N] = check_finite("terminal", model.terminal(X[:, N])).reshape(M)
    lower[N], upper[N] = _obstacles(model, t[N], X[:, N])

    for i in range(N - 1, -1, -1):
        xi = X[:, i]
        fb = basis.fit(xi)
        proj = _Projector(fb, xi, i)
        coef_c = proj.coef(Y[i + 1])
        cont = proj.fitted(coef_c)
        w = (Y[i + 1] - cont)[:, None] * dB[:, i] / dt
        coef_z = proj.coef(w)
        z = proj.fitted(coef_z)
        resid += Y[i + 1] - cont
        drv = np.asarray(generator(model, t[i], xi, z), dtype=float).reshape(M)
        if not np.all(np.isfinite(drv)):
            raise ModelError(f"non-finite driver value at step {i}")
        ytil = cont + drv * dt
        lo, hi = _obstacles(model, t[i], xi)
        if np.any(lo > hi):
            k = int(np.argmax(lo > hi))
            raise ModelError(f"lower obstacle exceeds upper obstacle at step {i}, x={xi[k].tolist()}")
        Y[i] = np.minimum(np.maximum(ytil, lo), hi)
        dKp[i] = np.maximum(lo - ytil, 0.0)
        dKm[i] = np.maximum(ytil - hi, 0.0)
        Z[i] = z
        lower[i], upper[i] = lo, hi
        fits[i] = StepFit(fb, coef_c, coef_z)

    return ValueProcess(grid, Y, Z, dKp, dKm, lower, upper, basis, generator, fits, resid)


# ---------------------------------------------------------------------------
# truncation audit


@dataclass
class MonotonicityReport:
    n_list: list
    m_list: list
    y0: np.ndarray            # (len(n_list), len(m_list))
    y0_phi: float
    n_violation_y0: float     # max over m of Y0[n_k] - Y0[n_{k+1}]
    m_violation_y0: float     # max over n of Y0[m_{k+1}] - Y0[m_k]
    phi_violation_y0: float   # max Y0[n, m] - Y0_phi
    n_violation_paths: float  # the same orderings over every (i, path)
    m_violation_paths: float
    phi_violation_paths: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return max(self.n_violation_y0, self.m_violation_y0, self.phi_violation_y0) <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "n_list": [float(v) for v in self.n_list],
            "m_list": [float(v) for v in self.m_list],
            "y0": self.y0.tolist(),
            "y0_phi": self.y0_phi,
            "n_violation_y0": self.n_violation_y0,
            "m_violation_y0": self.m_violation_y0,
            "phi_violation_y0": self.phi_violation_y0,
            "n_violation_paths": self.n_violation_paths,
            "m_violation_paths": self.m_violation_paths,
            "phi_violation_paths": self.phi_violation_paths,
            "tolerance": self.tolerance,
            "ok": self.ok,
        }


def monotonicity_audit(model: GameModel, bundle: PathBundle, basis: RegressionBasis | None,
                       n_list, m_list, tol: float = 1e-8) -> MonotonicityReport:
    """Solve every (n, m) truncation plus the phi-generator on one shared bundle.

    Without an explicit basis the audit uses ``monotone_basis``; per-cell
    slopes can reorder individual paths by regression noise alone.
    """
    n_list, m_list = sorted(n_list), sorted(m_list)
    basis = basis or monotone_basis(model.dim)
    require_isaacs(model)
    Ys = {}
    for n in n_list:
        for m in m_list:
            Ys[n, m] = solve_drbsde(model, bundle, basis, Generator("truncated", n, m),
                                    check_isaacs=False).Y
    Yphi = solve_drbsde(model, bundle, basis, Generator("phi")).Y

    def worst(pairs):
        vals = [np.max(hi - lo) for lo, hi in pairs]
        return float(max(vals)) if vals else 0.0

    def worst0(pairs):
        vals = [np.mean(hi[0]) - np.mean(lo[0]) for lo, hi in pairs]
        return float(max(vals)) if vals else 0.0

    n_pairs = [(Ys[n_list[k + 1], m], Ys[n_list[k], m])
               for m in m_list for k in range(len(n_list) - 1)]
    m_pairs = [(Ys[n, m_list[k]], Ys[n, m_list[k + 1]])
               for n in n_list for k in range(len(m_list) - 1)]
    phi_pairs = [(Yphi, Y) for Y in Ys.values()]
    y0 = np.array([[np.mean(Ys[n, m][0]) for m in m_list] for n in n_list])
    return MonotonicityReport(
        n_list, m_list, y0, float(np.mean(Yphi[0])),
        worst0(n_pairs), worst0(m_pairs), worst0(phi_pairs),
        worst(n_pairs), worst(m_pairs), worst(phi_pairs), tol)


# ---------------------------------------------------------------------------
# binomial-tree oracle


class MalformedTree(ValueError):
    pass


@dataclass
class TreeSpec:
    """Recombining binomial tree; level i has i+1 nodes, node j moves to j+1 (up) or j.

    ``driver`` is either a list of per-level arrays (levels 0..N-1) or a
    callable ``driver(i, x, z)`` returning per-node values, where z is the
    tree estimate of E[V dB] / dt.
    """

    levels: int
    dt: float
    states: list          # level i: (i+1,) node states
    terminal: np.ndarray  # (N+1,)
    lower: list           # level i: (i+1,)
    upper: list
    driver: object = None
    prob_up: float = 0.5


def dynkin_oracle(tree: TreeSpec) -> float:
    """Exact backward induction V_i = clamp(E[V_{i+1}] + driver dt, [h, h'])."""
    N = tree.levels
    if not 1 <= N <= MAX_TREE_LEVELS or not tree.dt > 0 or not 0 < tree.prob_up < 1:
        raise MalformedTree("need 1 <= levels, dt > 0 and 0 < prob_up < 1")
    V = np.asarray(tree.terminal, dtype=float)
    if V.shape != (N + 1,) or len(tree.lower) != N + 1 or len(tree.upper) != N + 1:
        raise MalformedTree("terminal/obstacle arrays do not match the level count")
    p = tree.prob_up
    sq = np.sqrt(tree.dt)
    for i in range(N - 1, -1, -1):
        lo = np.asarray(tree.lower[i], dtype=float)
        hi = np.asarray(tree.upper[i], dtype=float)
        if lo.shape != (i + 1,) or hi.shape != (i + 1,):
            raise MalformedTree(f"obstacle arrays at level {i} must have {i + 1} nodes")
        up, dn = V[1:], V[:-1]
        cont = p * up + (1.0 - p) * dn
        z = (p * up - (1.0 - p) * dn) * sq / tree.dt
        if tree.driver is None:
            drv = np.zeros(i + 1)
        elif callable(tree.driver):
            drv = np.asarray(tree.driver(i, np.asarray(tree.states[i]), z), dtype=float)
        else:
            drv = np.asarray(tree.driver[i], dtype=float)
        if drv.shape != (i + 1,):
            raise MalformedTree(f"driver at level {i} must have {i + 1} nodes")
        V = np.clip(cont + drv * tree.dt, lo, hi)
    return float(V[0])


def tree_from_model(model: GameModel, levels: int) -> TreeSpec:
    """Binomial lattice x0 + (2j - i) sigma sqrt(dt) for a 1-d model with constant sigma."""
    if model.dim != 1:
        raise MalformedTree("tree mapping needs a one-dimensional model")
    dt = model.horizon / levels
    sig = float(np.asarray(model.diffusion(0.0, model.initial_state[None, :])).reshape(-1)[0])
    x0 = float(model.initial_state[0])
    states = [x0 + (2 * np.arange(i + 1) - i) * sig * np.sqrt(dt) for i in range(levels + 1)]
    for i, s in enumerate(states):
        sv = np.asarray(model.diffusion(i * dt, s[:, None])).reshape(-1)
        if not np.allclose(sv, sig, rtol=0, atol=1e-14):
            raise MalformedTree("tree mapping needs a constant diffusion coefficient")
    lower = [model.lower_obstacle(i * dt, s[:, None]).reshape(-1) for i, s in enumerate(states)]
    upper = [model.upper_obstacle(i * dt, s[:, None]).reshape(-1) for i, s in enumerate(states)]
    terminal = model.terminal(states[-1][:, None]).reshape(-1)

    def driver(i, x, z):
        return isaacs_batch(model, i * dt, x[:, None], z[:, None]).value_infsup

    return TreeSpec(levels, dt, states, terminal, lower, upper, driver)
