import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drgame.hamiltonian import (IllConditionedDiffusion, IsaacsViolation, hamiltonian_value,
                                isaacs_batch, isaacs_gap_audit, isaacs_infsup, require_isaacs,
                                saddle_pointwise_check)

from conftest import inline

TRIPLE = {"a": [-1.0, 0.0, 1.0], "b": [-1.0, 0.0, 1.0]}
PUSH = {"family": "control-linear", "a": 1.0, "b": -1.0}


def test_zero_drift_gives_running_cost():
    m = inline(running_cost={"family": "quadratic", "x": 1.0, "ab": 2.0},
               controls={"a": [0.5], "b": [1.5]})
    assert hamiltonian_value(m, 0.2, [0.7], [3.0], [0.5], [1.5]) == pytest.approx(0.7 + 1.5)


def test_zero_gradient_gives_running_cost(separated_model):
    h = hamiltonian_value(separated_model, 0.1, [0.4], [0.0], [0.3], [-0.6])
    assert h == pytest.approx(0.2 + 0.09 - 0.18)


def test_push_pull_arithmetic():
    m = inline(drift=PUSH, controls=TRIPLE)
    assert hamiltonian_value(m, 0.0, [0.0], [2.0], [1.0], [-1.0]) == 4.0


def test_single_point_grids_have_no_gap():
    m = inline(drift=PUSH, running_cost={"family": "quadratic", "x": 1.0},
               controls={"a": [0.3], "b": [-0.4]})
    res = isaacs_infsup(m, 0.5, [1.0], [2.0])
    assert res.value_infsup == res.value_supinf == pytest.approx(2.0 * 0.7 + 1.0)
    assert res.gap == 0.0
    assert saddle_pointwise_check(m, 0.5, [1.0], [2.0], res)
    assert isaacs_gap_audit(m, 50, 5.0, seed=0) == 0.0


@pytest.mark.parametrize("z", [-3.0, -0.5, 0.0, 1.0, 7.0])
def test_push_pull_grid_value_is_zero(z):
    m = inline(drift=PUSH, controls=TRIPLE)
    res = isaacs_infsup(m, 0.0, [0.0], [z])
    assert res.value_infsup == res.value_supinf == 0.0
    assert saddle_pointwise_check(m, 0.0, [0.0], [z], res)


def test_matching_pennies(pennies_model):
    res = isaacs_infsup(pennies_model, 0.3, [0.1], [0.4])
    assert (res.value_infsup, res.value_supinf, res.gap) == (1.0, -1.0, 2.0)
    assert not saddle_pointwise_check(pennies_model, 0.3, [0.1], [0.4], res)
    assert isaacs_gap_audit(pennies_model, 100, 10.0, seed=0) == 2.0
    with pytest.raises(IsaacsViolation):
        require_isaacs(pennies_model)


def test_separated_gap_exactly_zero(separated_model):
    assert isaacs_gap_audit(separated_model, 1000, 10.0, seed=5) == 0.0
    assert require_isaacs(separated_model) == 0.0


def test_hand_computed_separated_value(separated_model):
    # H = 0.5x + inf_a(z a + a^2) + sup_b(-z b - b^2/2) on the 0.1-spaced grid
    res = isaacs_infsup(separated_model, 0.3, [0.2], [0.7])
    a = np.linspace(-1, 1, 21)
    expect = 0.1 + np.min(0.7 * a + a * a) + np.max(-0.7 * a - 0.5 * a * a)
    assert res.value_infsup == pytest.approx(expect, abs=1e-14)
    assert res.ustar_index == int(np.argmin(0.7 * a + a * a))
    assert saddle_pointwise_check(separated_model, 0.3, [0.2], [0.7], res)


def test_ill_conditioned_diffusion_names_point():
    m = inline(dim=2, sigma=[[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(IllConditionedDiffusion, match="t="):
        isaacs_infsup(m, 0.25, [1.0, 2.0], [0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(kab=st.floats(-3, 3), kx=st.floats(-2, 2), z=st.floats(-10, 10), x=st.floats(-5, 5),
       ka=st.floats(-2, 2), kb=st.floats(-2, 2))
def test_weak_duality_and_valid_indices(kab, kx, z, x, ka, kb):
    m = inline(drift={"family": "control-linear", "a": ka, "b": kb, "x": kx},
               running_cost={"family": "quadratic", "ab": kab, "aa": 0.3, "bb": -0.2},
               controls={"a": {"low": -1, "high": 1, "points": 5},
                         "b": {"low": -1, "high": 1, "points": 4}})
    res = isaacs_batch(m, 0.0, np.array([[x]]), np.array([[z]]))
    assert res.value_supinf[0] <= res.value_infsup[0] + 1e-12
    assert res.gap[0] >= -1e-12
    assert 0 <= res.ustar_index[0] < 5 and 0 <= res.vstar_index[0] < 4


def test_batch_matches_scalar(separated_model):
    r = np.random.default_rng(4)
    x = r.normal(size=(30, 1))
    z = r.normal(scale=3, size=(30, 1))
    t = r.uniform(size=30)
    batch = isaacs_batch(separated_model, t, x, z)
    for k in range(30):
        one = isaacs_infsup(separated_model, t[k], x[k], z[k])
        assert one.value_infsup == batch.value_infsup[k]
        assert one.ustar_index == batch.ustar_index[k]
