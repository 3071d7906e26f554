import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drgame import builtin_model, builtin_names
from drgame.drbsde import (Generator, MalformedTree, RegressionBasis, RegressionError, TreeSpec,
                           dynkin_oracle, monotonicity_audit, phi_generator, solve_drbsde,
                           tree_from_model, truncated_hamiltonian, truncated_phi)
from drgame.forward_sde import TimeGrid, simulate_controlled, simulate_uncontrolled
from drgame.hamiltonian import IsaacsViolation, isaacs_infsup

from conftest import const, inline

# --- generators -------------------------------------------------------------


def test_phi_values():
    assert phi_generator(0.0, 0.0, [0.0], 1.0, 2.0) == 1.0
    assert phi_generator(0.0, 1.0, [1.0], 1.0, 2.0) == 4.0
    assert phi_generator(0.0, 1.0, [0.0, 2.0], 1.5, 3.0) == pytest.approx(1.5 * 2 * 2 + 1.5 * 2)


@given(xn=st.floats(0, 20), z=st.floats(-50, 50), C=st.floats(0.1, 5), p=st.floats(1.1, 4))
def test_phi_homogeneous_in_z(xn, z, C, p):
    base = C * (1 + xn ** p)
    one = phi_generator(0.0, xn, [z], C, p) - base
    two = phi_generator(0.0, xn, [2 * z], C, p) - base
    assert two == pytest.approx(2 * one, rel=1e-12, abs=1e-9)


@given(xn=st.floats(0, 20), z=st.floats(-50, 50), n1=st.floats(0, 100), n2=st.floats(0, 100))
def test_truncated_phi_properties(xn, z, n1, n2):
    C, p = 1.3, 2.0
    lo, hi = sorted((n1, n2))
    assert truncated_phi(0, xn, [z], C, p, lo) <= truncated_phi(0, xn, [z], C, p, hi)
    assert truncated_phi(0, xn, [z], C, p, 0) == C * (1 + xn ** p)
    big = C * (1 + xn) + 1
    assert truncated_phi(0, xn, [z], C, p, big) == phi_generator(0, xn, [z], C, p)


def test_truncated_hamiltonian_regions(separated_model):
    m, z = separated_model, [0.9]
    for x in ([0.5], [-1.5]):
        full = isaacs_infsup(m, 0.2, x, z).value_infsup
        assert truncated_hamiltonian(m, 0.2, x, z, 2, 3) == full
        assert truncated_hamiltonian(m, 0.2, x, z, 0.1, 0.2) == 0.0
    # H* < 0 here, so only the negative part can survive
    x = [-1.5]
    h = isaacs_infsup(m, 0.2, x, [0.0]).value_infsup
    assert h < 0
    assert truncated_hamiltonian(m, 0.2, x, [0.0], 1, 2) == h
    assert truncated_hamiltonian(m, 0.2, x, [0.0], 2, 1) == 0.0


def test_generator_rejects_unknown_kind():
    with pytest.raises(ValueError):
        Generator("quadratic")

# --- solver -----------------------------------------------------------------


def test_zero_data_gives_zero_process(zero_model, grid20):
    b = simulate_uncontrolled(zero_model, grid20, 500, seed=1)
    vp = solve_drbsde(zero_model, b, generator="zero")
    assert np.all(vp.Y == 0) and np.all(vp.dKplus == 0) and np.all(vp.dKminus == 0)
    assert np.all(vp.Z == 0)


def test_martingale_terminal(heat_model):
    b = simulate_uncontrolled(heat_model, TimeGrid(20, 1.0), 20000, seed=3)
    vp = solve_drbsde(heat_model, b, generator="zero")
    assert abs(vp.y0) <= 3 * vp.std_error
    assert vp.z0[0] == pytest.approx(1.0, abs=0.05)
    assert np.array_equal(vp.Y[-1], b.states[:, -1, 0])


def test_two_step_tree_against_solver():
    m = builtin_model("dynkin-1d")
    tree = dynkin_oracle(tree_from_model(m, 2))
    vals = []
    for seed in range(3):
        b = simulate_uncontrolled(m, TimeGrid(2, 1.0), 20000, seed=seed)
        vp = solve_drbsde(m, b)
        vals.append(abs(vp.y0 - tree) <= 3 * (vp.std_error + 0.02 * abs(tree)))
    assert all(vals)


@pytest.mark.parametrize("name", builtin_names())
def test_invariants_on_builtins(name):
    m = builtin_model(name)
    gen = "zero" if name == "matching-pennies" else "hamiltonian"
    b = simulate_uncontrolled(m, TimeGrid(25, 1.0), 4000, seed=7)
    vp = solve_drbsde(m, b, generator=gen)
    inv = vp.invariants()
    assert inv["sandwich_ok"] and inv["complementarity_ok"], inv
    assert inv["both_reflections_active"] == 0 and inv["min_increment"] >= 0


def test_refuses_isaacs_violation(pennies_model, grid20):
    b = simulate_uncontrolled(pennies_model, grid20, 100, seed=0)
    with pytest.raises(IsaacsViolation):
        solve_drbsde(pennies_model, b)


def test_rejects_controlled_bundle(heat_model, grid20):
    still = lambda i, t, x: (np.zeros(len(x), int), np.zeros(len(x), int))
    b = simulate_controlled(heat_model, grid20, still, 10, seed=0)
    with pytest.raises(ValueError):
        solve_drbsde(heat_model, b)


def test_crossed_obstacles_rejected(grid20):
    m = inline(lower=const(1.0), upper=const(0.0), terminal=const(0.5))
    b = simulate_uncontrolled(m, grid20, 50, seed=0)
    with pytest.raises(Exception, match="lower obstacle exceeds"):
        solve_drbsde(m, b, generator="zero")


def test_rank_deficient_design_names_step(heat_model):
    b = simulate_uncontrolled(heat_model, TimeGrid(4, 1.0), 3, seed=0)
    with pytest.raises(RegressionError, match="step"):
        solve_drbsde(heat_model, b, basis=RegressionBasis("poly", 6))


def test_basis_families_agree_on_linear_data(heat_model):
    b = simulate_uncontrolled(heat_model, TimeGrid(10, 1.0), 5000, seed=2)
    y_poly = solve_drbsde(heat_model, b, RegressionBasis("poly", 3)).y0
    y_bins = solve_drbsde(heat_model, b, RegressionBasis("bins", bins=32)).y0
    assert y_poly == pytest.approx(y_bins, abs=0.01)


def test_local_linear_bins_reproduce_affine_data():
    from drgame.drbsde import _Projector
    x = np.random.default_rng(0).normal(size=(3000, 1))
    fb = RegressionBasis("bins", bins=16, local_linear=True).fit(x)
    proj = _Projector(fb, x, 0)
    y = 0.3 - 1.7 * x[:, 0]
    coef = proj.coef(y)
    assert np.allclose(proj.fitted(coef), y, atol=1e-10)
    assert np.allclose(fb.features(x) @ coef, y, atol=1e-10)


def test_flat_bins_are_cell_means():
    from drgame.drbsde import _Projector
    x = np.linspace(0, 1, 100)[:, None]
    fb = RegressionBasis("bins", bins=4).fit(x)
    proj = _Projector(fb, x, 0)
    y = np.arange(100.0)
    fitted = proj.fitted(proj.coef(y))
    assert fitted[0] == pytest.approx(np.mean(y[:25]))


def test_evaluate_reproduces_path_values(separated_model):
    b = simulate_uncontrolled(separated_model, TimeGrid(10, 1.0), 2000, seed=1)
    vp = solve_drbsde(separated_model, b)
    y, z = vp.evaluate(separated_model, 4, b.states[:50, 4])
    assert np.allclose(y, vp.Y[4, :50], atol=1e-12)
    assert np.allclose(z, vp.Z[4, :50], atol=1e-12)

# --- truncation audit -------------------------------------------------------


def test_monotonicity_vacuous_singletons(separated_model, grid20):
    b = simulate_uncontrolled(separated_model, grid20, 2000, seed=0)
    rep = monotonicity_audit(separated_model, b, None, [1e6], [1e6])
    assert rep.n_violation_y0 == rep.m_violation_y0 == 0.0
    assert rep.ok


def test_monotonicity_zero_hamiltonian(heat_model, grid20):
    b = simulate_uncontrolled(heat_model, grid20, 2000, seed=0)
    rep = monotonicity_audit(heat_model, b, None, [1, 3], [1, 3])
    assert rep.n_violation_paths == rep.m_violation_paths == 0.0
    assert np.ptp(rep.y0) == 0.0


def test_monotonicity_positive_cost():
    m = inline(running_cost={"family": "quadratic", "const": 0.5, "x2": 0.3},
               terminal=const(0.0), lower=const(-3.0), upper=const(3.0), growth={"C": 4.0})
    b = simulate_uncontrolled(m, TimeGrid(20, 1.0), 4000, seed=2)
    rep = monotonicity_audit(m, b, None, [0.5, 1, 2, 5], [50])
    assert np.all(np.diff(rep.y0[:, 0]) >= -1e-8)
    assert rep.ok

# --- tree oracle --------------------------------------------------------------


def _flat_tree(levels, terminal, lo=-1.0, hi=1.0):
    return TreeSpec(levels, 1.0 / levels, [np.zeros(i + 1) for i in range(levels + 1)],
                    np.asarray(terminal, float),
                    [np.full(i + 1, lo) for i in range(levels + 1)],
                    [np.full(i + 1, hi) for i in range(levels + 1)])


def test_tree_hand_cases():
    assert dynkin_oracle(_flat_tree(3, np.zeros(4))) == 0.0
    assert dynkin_oracle(_flat_tree(1, [-2.0, 2.0])) == 0.0
    assert dynkin_oracle(_flat_tree(1, [2.0, 2.0])) == 1.0


def test_tree_driver_list():
    t = _flat_tree(1, [0.0, 0.0], lo=-5, hi=5)
    t.driver = [np.array([0.5])]
    assert dynkin_oracle(t) == 0.5


def test_malformed_trees():
    with pytest.raises(MalformedTree):
        dynkin_oracle(_flat_tree(2, np.zeros(2)))
    bad = _flat_tree(2, np.zeros(3))
    bad.lower[1] = np.zeros(5)
    with pytest.raises(MalformedTree):
        dynkin_oracle(bad)
    with pytest.raises(MalformedTree):
        dynkin_oracle(TreeSpec(0, 1.0, [], np.zeros(1), [], []))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5))
def test_tree_root_inside_obstacles(terminal):
    v = dynkin_oracle(_flat_tree(4, terminal, lo=-0.5, hi=0.7))
    assert -0.5 <= v <= 0.7
