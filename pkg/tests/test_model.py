import numpy as np
import pytest

from drgame import GameModel, ModelError, builtin_model, builtin_names, validate_model
from drgame.registry import build_model

from conftest import const, inline


def test_builtins_pass_validation():
    for name in builtin_names():
        rep = validate_model(builtin_model(name), 500, seed=3)
        assert rep.passed, (name, rep.flagged)


def test_trivial_model_passes(zero_model):
    rep = validate_model(zero_model, 200, seed=0)
    assert rep.passed and rep.flagged == []


def test_touching_obstacles_flag_strict_ordering():
    m = inline(lower=const(0.0), upper=const(0.0))
    rep = validate_model(m, 100, seed=1)
    assert not rep.passed
    assert "obstacle_order" in rep.flagged


def test_terminal_above_upper_flags_sandwich(capped_model):
    rep = validate_model(capped_model, 100, seed=1)
    assert not rep.passed
    assert rep.flagged == ["terminal_sandwich"]


def test_degenerate_diffusion_flagged():
    rep = validate_model(inline(sigma=1e-9), 50, seed=0, cond_bound=1e6)
    assert "diffusion_conditioning" not in rep.flagged  # scalar multiple of I is well conditioned
    skew = inline(dim=2, sigma=[[1.0, 0.0], [0.0, 1e-9]])
    assert "diffusion_conditioning" in validate_model(skew, 50, seed=0).flagged


def test_growth_violation_reports_worst_point():
    m = inline(terminal={"family": "affine", "slope": 50.0},
               lower={"family": "affine", "slope": 50.0, "offset": -1.0},
               upper={"family": "affine", "slope": 50.0, "offset": 1.0})
    rep = validate_model(m, 100, seed=2)
    assert "terminal_growth" in rep.flagged
    worst = rep.entries["terminal_growth"].worst_point
    assert set(worst) >= {"t", "x"}


def test_validation_is_seeded():
    m = builtin_model("dynkin-1d")
    a = validate_model(m, 300, seed=9).to_dict()
    b = validate_model(m, 300, seed=9).to_dict()
    assert a == b


def test_empty_control_grid_rejected():
    with pytest.raises(ModelError):
        build_model({"controls": {"a": []}})


def test_split_model_derives_full_terms(separated_model):
    m = separated_model
    assert m.is_split
    x = np.array([[0.3]])
    a, b = np.array([[0.5]]), np.array([[-0.2]])
    assert m.drift(0.0, x, a, b)[0, 0] == pytest.approx(0.7)
    assert m.running_cost(0.0, x, a, b)[0] == pytest.approx(0.15 + 0.25 - 0.02)


def test_unknown_block_keys_rejected():
    with pytest.raises(ModelError, match="sigmaa"):
        build_model({"sigmaa": 1.0})
    with pytest.raises(ModelError, match="slopee"):
        build_model({"terminal": {"family": "affine", "slopee": 1.0}})


def test_bad_initial_state_dimension():
    with pytest.raises(ModelError):
        GameModel(dim=2, horizon=1.0, diffusion=None, terminal=None, lower_obstacle=None,
                  upper_obstacle=None, control_grid_a=[0.0], control_grid_b=[0.0],
                  initial_state=[0.0], drift=lambda *a: 0, running_cost=lambda *a: 0)
