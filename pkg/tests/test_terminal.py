import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from annuitization.diffusion import generator
from annuitization.model import validate_config
from annuitization.montecarlo import SimConfig, StopAbove, evaluate_policy
from annuitization.scenarios import MU0
from annuitization.terminal import derivative_terminal, solve_terminal, value_terminal

from conftest import small_config


def threshold_value(sol, b, x):
    """Value of the rule 'stop once wealth crosses b', started on the continuation side."""
    g = sol.gamma_plus if sol.K > 0 else sol.gamma_minus
    return sol.beta * x + (sol.f_hat * (b - sol.K) - sol.beta * b) * (x / b) ** g


@pytest.mark.parametrize("K, nu, mu", [(1500, 0.35, MU0), (1500, 0.35, 2 * MU0), (-1500, 0.6, 2 * MU0),
                                       (-1500, 0.6, MU0)])
def test_threshold_maximises_policy_value(K, nu, mu):
    sol = solve_terminal(small_config(K=K, nu=nu, N=0), mu)
    b = sol.threshold
    x = 0.5 * b if K > 0 else 2.0 * b
    res = minimize_scalar(lambda lb: -threshold_value(sol, np.exp(lb), x),
                          bracket=(np.log(b) - 0.3, np.log(b) + 0.3), tol=1e-12)
    assert np.exp(res.x) == pytest.approx(b, rel=1e-5)


def test_regimes():
    assert solve_terminal(small_config(K=1500, nu=0.35, N=0), MU0).regime == "StopAbove"
    assert solve_terminal(small_config(K=-1500, nu=0.6, N=0), 2 * MU0).regime == "StopBelow"
    # f_hat >= beta with a negative fee: stop at once
    assert solve_terminal(small_config(K=-1500, nu=0.0, N=0), MU0).regime == "StopEverywhere"
    # f_hat <= beta with a positive fee: never
    assert solve_terminal(small_config(K=1500, nu=1.0, theta=0.14, N=0), MU0).regime == "NeverStop"


def test_smooth_fit_and_ode():
    sol = solve_terminal(small_config(N=0), MU0)
    b = sol.x_star
    assert value_terminal(sol, b) == pytest.approx(sol.f_hat * (b - sol.K), rel=1e-12)
    assert derivative_terminal(sol, b * (1 - 1e-12)) == pytest.approx(sol.f_hat, rel=1e-9)
    m = small_config().market
    x = np.array([0.2, 0.5, 0.9]) * b
    u = lambda y: value_terminal(sol, y)
    res = generator(m, u, x) - sol.rate * u(x) + (m.alpha + m.nu * MU0) * x
    assert np.max(np.abs(res) / (sol.rate * u(x))) < 1e-5


def test_value_dominates_obstacle():
    for K, nu in [(1500, 0.35), (-1500, 0.6)]:
        sol = solve_terminal(small_config(K=K, nu=nu, N=0), 2 * MU0)
        x = np.geomspace(10, 1e6, 400)
        v = value_terminal(sol, x)
        assert np.all(v >= sol.f_hat * (x - sol.K) - 1e-9 * np.abs(v))
        assert np.all(np.diff(v) > 0)
        assert np.all(np.diff(v, 2) >= -1e-9 * np.abs(v[1:-1]))


def test_against_monte_carlo():
    cfg = validate_config(small_config(N=0))
    sol = solve_terminal(cfg, MU0)
    sim = SimConfig(n_paths=50_000, seed=7)
    for x in (10_000.0, 25_000.0):
        res = evaluate_policy(cfg, sim, {0: StopAbove(sol.x_star)}, x)
        assert abs(res.mean - value_terminal(sol, x)) < 3 * res.stderr


@settings(max_examples=60, deadline=None)
@given(K=st.floats(100, 5000), nu=st.floats(0, 1), mu=st.floats(0.02, 0.15))
def test_smooth_fit_property(K, nu, mu):
    sol = solve_terminal(small_config(K=K, nu=nu, N=0), mu)
    if sol.regime != "StopAbove":
        return
    b = sol.x_star
    assert value_terminal(sol, b) == pytest.approx(sol.f_hat * (b - K), rel=1e-9)
    assert derivative_terminal(sol, b) == pytest.approx(sol.f_hat, rel=1e-8)
