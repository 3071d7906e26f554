"""Parametric coefficient families and the built-in model registry.

Built-in models are plain parameter blocks fed through ``build_model``, the
same path the CLI uses for inline models, so a config can reproduce any of
them by copying its block.
"""
from __future__ import annotations

import copy

import numpy as np

from .model import GameModel, ModelError, SplitTerms


def _sumx(x):
    return np.asarray(x).sum(axis=1)


def _scalar_field(spec: dict, what: str):
    """Build a (t, x) -> (n,) function from a family block."""
    spec = dict(spec)
    family = spec.pop("family", "constant")
    tc = float(spec.pop("t_coeff", 0.0))
    if family == "constant":
        c = float(spec.pop("value", 0.0))
        fn = lambda x: np.full(np.asarray(x).shape[0], c)
    elif family == "affine":
        off, slope = float(spec.pop("offset", 0.0)), float(spec.pop("slope", 1.0))
        fn = lambda x: off + slope * _sumx(x)
    elif family == "tanh":
        off, scale = float(spec.pop("offset", 0.0)), float(spec.pop("scale", 1.0))
        fn = lambda x: off + scale * np.tanh(_sumx(x))
    elif family == "positive-part":
        off = float(spec.pop("offset", 0.0))
        scale = float(spec.pop("scale", 1.0))
        strike = float(spec.pop("strike", 0.0))
        fn = lambda x: off + scale * np.maximum(_sumx(x) - strike, 0.0)
    else:
        raise ModelError(f"unknown {what} family {family!r}")
    if spec:
        raise ModelError(f"unknown keys in {what} block: {sorted(spec)}")
    if tc == 0.0:
        return lambda t, x: fn(x)
    return lambda t, x: fn(x) + tc * np.asarray(t, dtype=float)


def _control_grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        if "values" in spec:
            return np.asarray(spec["values"], dtype=float)
        return np.linspace(float(spec["low"]), float(spec["high"]), int(spec["points"]))
    return np.asarray(spec, dtype=float)


def _per_player(coef, u, d):
    u = np.asarray(u, dtype=float)
    if u.shape[1] not in (1, d):
        raise ModelError("control dimension must be 1 or equal to the state dimension")
    return coef * np.broadcast_to(u, (u.shape[0], d))


def build_model(params: dict) -> GameModel:
    """Assemble a ``GameModel`` from a parameter block (see README for keys)."""
    p = copy.deepcopy(params)
    d = int(p.pop("dim", 1))
    T = float(p.pop("horizon", 1.0))
    x0 = np.asarray(p.pop("x0", [0.0] * d), dtype=float).reshape(d)

    sig = np.asarray(p.pop("sigma", 1.0), dtype=float)
    sig_mat = sig * np.eye(d) if sig.ndim == 0 else sig.reshape(d, d)
    diffusion = lambda t, x: np.broadcast_to(sig_mat, (np.asarray(x).shape[0], d, d)).copy()

    drift = dict(p.pop("drift", {"family": "zero"}))
    dfam = drift.pop("family", "zero")
    if dfam == "zero":
        ka = kb = kx = c = 0.0
    elif dfam == "control-linear":
        ka = float(drift.pop("a", 1.0))
        kb = float(drift.pop("b", -1.0))
        kx = float(drift.pop("x", 0.0))
        c = float(drift.pop("const", 0.0))
    else:
        raise ModelError(f"unknown drift family {dfam!r}")
    if drift:
        raise ModelError(f"unknown keys in drift block: {sorted(drift)}")

    cost = dict(p.pop("running_cost", {"family": "zero"}))
    cfam = cost.pop("family", "zero")
    if cfam not in ("zero", "quadratic"):
        raise ModelError(f"unknown running_cost family {cfam!r}")
    cc = {k: float(cost.pop(k, 0.0)) for k in ("const", "x", "x2", "a", "aa", "b", "bb", "ab")}
    if cost:
        raise ModelError(f"unknown keys in running_cost block: {sorted(cost)}")

    drift_a = lambda t, x, a: c + kx * np.asarray(x) + _per_player(ka, a, d)
    drift_b = lambda t, x, b: _per_player(kb, b, d)

    def cost_a(t, x, a):
        a = np.asarray(a)
        x = np.asarray(x)
        return (cc["const"] + cc["x"] * _sumx(x) + cc["x2"] * (x * x).sum(axis=1)
                + cc["a"] * a.sum(axis=1) + cc["aa"] * (a * a).sum(axis=1))

    def cost_b(t, x, b):
        b = np.asarray(b)
        return cc["b"] * b.sum(axis=1) + cc["bb"] * (b * b).sum(axis=1)

    split = None
    running = None
    if cc["ab"] == 0.0:
        split = SplitTerms(drift_a, drift_b, cost_a, cost_b)
    else:
        kab = cc["ab"]

        def running(t, x, a, b):
            return (cost_a(t, x, a) + cost_b(t, x, b)
                    + kab * (np.asarray(a) * np.asarray(b)).sum(axis=1))

    full_drift = lambda t, x, a, b: drift_a(t, x, a) + drift_b(t, x, b)

    terminal_f = _scalar_field(p.pop("terminal", {"family": "constant"}), "terminal")
    terminal = lambda x: terminal_f(0.0, x)
    lower = _scalar_field(p.pop("lower", {"family": "constant", "value": -1.0}), "lower")
    upper = _scalar_field(p.pop("upper", {"family": "constant", "value": 1.0}), "upper")

    controls = p.pop("controls", {})
    grid_a = _control_grid(controls.pop("a", [0.0]))
    grid_b = _control_grid(controls.pop("b", [0.0]))
    if controls:
        raise ModelError(f"unknown keys in controls block: {sorted(controls)}")
    growth = p.pop("growth", {})
    C = float(growth.pop("C", 1.0))
    pexp = float(growth.pop("p", 2.0))
    if growth:
        raise ModelError(f"unknown keys in growth block: {sorted(growth)}")
    name = str(p.pop("name", "inline"))
    if p:
        raise ModelError(f"unknown model keys: {sorted(p)}")

    return GameModel(
        dim=d, horizon=T, diffusion=diffusion, terminal=terminal,
        lower_obstacle=lower, upper_obstacle=upper,
        control_grid_a=grid_a, control_grid_b=grid_b, initial_state=x0,
        drift=full_drift if split is None else None,
        running_cost=running, split=split,
        growth_constant=C, growth_exponent=pexp, name=name,
        params=copy.deepcopy(params),
    )


BUILTIN_PARAMS: dict[str, dict] = {
    "zero": {
        "name": "zero",
        "terminal": {"family": "constant", "value": 0.0},
        "lower": {"family": "constant", "value": -1.0},
        "upper": {"family": "constant", "value": 1.0},
    },
    "linear-heat": {
        "name": "linear-heat",
        "terminal": {"family": "affine", "offset": 0.0, "slope": 1.0},
        "lower": {"family": "affine", "offset": -5.0, "slope": 1.0},
        "upper": {"family": "affine", "offset": 5.0, "slope": 1.0},
        "growth": {"C": 6.0, "p": 2.0},
    },
    "dynkin-1d": {
        "name": "dynkin-1d",
        "running_cost": {"family": "quadratic", "x": 0.5, "const": -0.2},
        "terminal": {"family": "positive-part", "offset": 0.2},
        "lower": {"family": "positive-part", "offset": 0.0},
        "upper": {"family": "positive-part", "offset": 0.5},
        "controls": {"a": [-1.0, 0.0, 1.0], "b": [-1.0, 0.0, 1.0]},
    },
    "isaacs-separated-1d": {
        "name": "isaacs-separated-1d",
        "drift": {"family": "control-linear", "a": 1.0, "b": -1.0},
        "running_cost": {"family": "quadratic", "x": 0.5, "aa": 1.0, "bb": -0.5},
        "terminal": {"family": "tanh", "scale": 0.5},
        "lower": {"family": "constant", "value": -0.5},
        "upper": {"family": "constant", "value": 0.5},
        "controls": {"a": {"low": -1.0, "high": 1.0, "points": 21},
                     "b": {"low": -1.0, "high": 1.0, "points": 21}},
        "growth": {"C": 2.0, "p": 2.0},
    },
    "matching-pennies": {
        "name": "matching-pennies",
        "running_cost": {"family": "quadratic", "ab": 1.0},
        "terminal": {"family": "constant", "value": 0.0},
        "lower": {"family": "constant", "value": -1.0},
        "upper": {"family": "constant", "value": 1.0},
        "controls": {"a": [-1.0, 1.0], "b": [-1.0, 1.0]},
    },
}


def builtin_names() -> list[str]:
    return list(BUILTIN_PARAMS)


def builtin_model(name: str) -> GameModel:
    try:
        params = BUILTIN_PARAMS[name]
    except KeyError:
        raise ModelError(f"unknown built-in model {name!r}; "
                         f"choose from {builtin_names()}") from None
    return build_model(params)
