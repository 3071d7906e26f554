import numpy as np
import pytest

from drgame import builtin_model
from drgame.drbsde import dynkin_oracle, solve_drbsde, tree_from_model
from drgame.forward_sde import TimeGrid, simulate_uncontrolled
from drgame.game import (BarrierStop, ConstantControl, Deviation, FixedTimeStop, NeverStop,
                         RandomControl, Strategy, StrategyError, as_source, default_deviations,
                         default_epsilon_stop, evaluate_payoff, extract_strategy, saddle_audit)
from drgame.hamiltonian import IsaacsViolation
from drgame.pde import SpaceGrid, solve_double_obstacle_pde

from conftest import const, inline

LINE = SpaceGrid((-4.0,), (4.0,), (81,))
C0 = ConstantControl(0)


def test_zero_model_never_stops(zero_model, grid20):
    vp = solve_drbsde(zero_model, simulate_uncontrolled(zero_model, grid20, 500, seed=0))
    strat = extract_strategy(zero_model, vp, epsilon_stop=0.1)
    est = evaluate_payoff(zero_model, strat.control_min, strat.stop_min, strat.control_max,
                          strat.stop_max, grid20, 500, seed=1, strategy=strat)
    assert np.all(est.tau == grid20.steps) and np.all(est.sigma == grid20.steps)
    assert est.mean == 0.0 and est.std_error == 0.0


def test_never_stopping_zero_model_is_exactly_zero(zero_model, grid20):
    est = evaluate_payoff(zero_model, C0, NeverStop(), C0, NeverStop(), grid20, 300, seed=2)
    assert est.mean == 0.0 and est.std_error == 0.0


def test_capped_model_stops_at_once(capped_model):
    tg = TimeGrid(10, 1.0)
    surf = solve_double_obstacle_pde(capped_model, tg, LINE)
    strat = extract_strategy(capped_model, surf, epsilon_stop=1e-3)
    est = evaluate_payoff(capped_model, strat.control_min, strat.stop_min, strat.control_max,
                          strat.stop_max, tg, 200, seed=0, strategy=strat)
    assert np.all(est.tau == 0)
    assert est.mean == 1.0


def test_single_point_grids_give_constant_feedback(heat_model, grid20):
    vp = solve_drbsde(heat_model, simulate_uncontrolled(heat_model, grid20, 500, seed=0))
    strat = extract_strategy(heat_model, vp)
    a, b = strat.feedback(3, 0.15, np.linspace(-2, 2, 9)[:, None])
    assert np.all(a == 0) and np.all(b == 0)


def test_unit_running_cost_integrates_to_horizon(grid20):
    m = inline(running_cost={"family": "quadratic", "const": 1.0}, lower=const(-5.0),
               upper=const(5.0), growth={"C": 6.0})
    est = evaluate_payoff(m, C0, NeverStop(), C0, NeverStop(), grid20, 400, seed=3)
    assert est.mean == pytest.approx(1.0, abs=1e-12)
    assert est.decomposition["running"] == pytest.approx(1.0)


def test_forced_immediate_stop_pays_upper(zero_model, grid20):
    est = evaluate_payoff(zero_model, C0, FixedTimeStop(0), C0, NeverStop(), grid20, 100, seed=4)
    assert est.mean == 1.0
    assert est.decomposition == {"running": 0.0, "upper": 1.0, "lower": 0.0, "terminal": 0.0}


def test_tie_pays_lower(zero_model, grid20):
    est = evaluate_payoff(zero_model, C0, FixedTimeStop(5), C0, FixedTimeStop(5), grid20, 10,
                          seed=0)
    assert est.mean == -1.0 and np.all(est.tau == 5) and np.all(est.sigma == 5)


def test_saddle_components_need_strategy(zero_model, grid20):
    with pytest.raises(StrategyError):
        evaluate_payoff(zero_model, C0, BarrierStop("upper", 0.1), C0, NeverStop(), grid20, 5,
                        seed=0)


def test_refuses_isaacs_violation(pennies_model, zero_model, grid20):
    vp = solve_drbsde(zero_model, simulate_uncontrolled(zero_model, grid20, 100, seed=0))
    with pytest.raises(IsaacsViolation):
        extract_strategy(pennies_model, vp)


def test_epsilon_must_be_positive(zero_model, grid20):
    vp = solve_drbsde(zero_model, simulate_uncontrolled(zero_model, grid20, 100, seed=0))
    with pytest.raises(StrategyError):
        Strategy(zero_model, as_source(vp), 0.0)
    assert default_epsilon_stop(zero_model, vp) >= 1e-6


def test_random_control_is_reproducible():
    rc = RandomControl(21, seed=3)
    x = np.zeros((500, 1))
    a, b = rc(4, 0.0, x, None), rc(4, 0.0, x, None)
    assert np.array_equal(a, b) and a.min() >= 0 and a.max() < 21
    assert not np.array_equal(a, rc(5, 0.0, x, None))


def test_default_deviations_cover_both_players(separated_model, grid20):
    devs = default_deviations(separated_model, grid20, 0.01)
    assert sum(d.player == "min" for d in devs) >= 8
    assert sum(d.player == "max" for d in devs) >= 8
    assert len({d.describe() for d in devs}) == len(devs)


def test_zero_model_audit(zero_model, grid20):
    vp = solve_drbsde(zero_model, simulate_uncontrolled(zero_model, grid20, 300, seed=0))
    strat = extract_strategy(zero_model, vp, epsilon_stop=0.1)
    devs = [Deviation("min", control=C0), Deviation("max", stop=NeverStop())]
    rep = saddle_audit(zero_model, strat, devs, grid20, 300, seed=1, y0=vp.y0)
    assert rep.saddle.mean == 0.0
    assert all(r.mean == 0.0 for r in rep.rows)
    assert rep.ok and rep.violations == []


def test_dynkin_controls_are_inert():
    m = builtin_model("dynkin-1d")
    tg = TimeGrid(25, 1.0)
    surf = solve_double_obstacle_pde(m, tg, SpaceGrid((-4.0,), (4.0,), (161,)))
    # the default band (2 x Lipschitz x dx) would stop the minimizer at once on this kinked barrier
    strat = extract_strategy(m, surf, epsilon_stop=1e-3)
    devs = [Deviation("min", control=ConstantControl(2)), Deviation("max", control=C0),
            Deviation("min", control=RandomControl(3, 9))]
    M = 8000
    rep = saddle_audit(m, strat, devs, tg, M, seed=5, y0=float(surf.value(0, m.initial_state)[0]))
    assert all(r.diff == 0.0 for r in rep.rows)
    assert rep.saddle_ok
    tree = dynkin_oracle(tree_from_model(m, 200))
    assert abs(rep.saddle.mean - tree) <= 3 * rep.saddle.std_error + 0.03
