import math

import numpy as np
import pytest

from annuitization.diffusion import characteristic_roots, resolvent
from annuitization.errors import GridExhausted, IllPosed
from annuitization.model import two_point_kernel, validate_config
from annuitization.montecarlo import SimConfig, evaluate_policy
from annuitization.scenarios import MU0
from annuitization.solver import (CASE1, CASE2, CASE3, CASE4, CASE5, GridSpec, asymptote_P, make_grid,
                                  solve_all, value_at)
from annuitization.terminal import solve_terminal, value_terminal

from conftest import small_config


def threshold_oracle(sol, x):
    """Root value of its own threshold policy from the ODE: particular plus homogeneous solution."""
    cfg, sv = sol.cfg, sol.root
    m, mu, lam = cfg.market, sv.node.mu, sv.node.lambda_next
    kids = [(sol[c.index], p) for c, p in sv.node.children]
    g = lambda y: (m.alpha + m.nu * mu) * y + lam * sum(p * k(y) for k, p in kids)
    brk = [t for k, _ in kids for t in k.thresholds]
    b = sv.thresholds[0]
    gam = characteristic_roots(m, sv.rate)
    gam = gam.gamma_plus if sv.regime == CASE2 else gam.gamma_minus
    Rb = resolvent(m, sv.rate, g, b, breakpoints=brk)
    return resolvent(m, sv.rate, g, x, breakpoints=brk) + (sv.f_hat * (b - sv.K) - Rb) * (x / b) ** gam


def test_positive_fee_scenario(pos_sol):
    assert [sv.regime for sv in pos_sol] == [CASE2, CASE2, CASE2]
    assert pos_sol[1].closed_form is not None and pos_sol[2].closed_form is not None
    # the terminal stages are the closed form exactly
    for k in (1, 2):
        ts = solve_terminal(pos_sol.cfg, pos_sol[k].node.mu)
        assert pos_sol[k].thresholds[0] == ts.x_star


def test_negative_fee_scenario(neg_sol):
    assert neg_sol.root.regime == CASE4
    assert all(sv.regime == CASE4 for sv in neg_sol)


@pytest.mark.parametrize("which", ["pos", "neg"])
def test_root_matches_ode_oracle(which, pos_sol, neg_sol):
    sol = pos_sol if which == "pos" else neg_sol
    b = sol.root.thresholds[0]
    x = b * (np.array([0.2, 0.5, 0.9]) if which == "pos" else np.array([1.1, 2.0, 5.0]))
    assert np.allclose(sol.root.exact(x), threshold_oracle(sol, x), rtol=1e-7)


def test_value_properties(pos_sol, neg_sol):
    for sol in (pos_sol, neg_sol):
        for sv in sol:
            x = sv.grid.points
            v = sv.values
            assert np.all(v >= sv.f_hat * (x - sv.K) - 1e-9 * np.abs(sv.K))
            assert np.all(np.diff(v) >= 0)
            assert np.all(np.diff(v, 2) >= -1e-9 * abs(sv.K))
            assert sv.exact(x[-1] * 100) / (x[-1] * 100) == pytest.approx(sv.asymptotic_slope, rel=1e-2)


def test_children_representation_agrees(pos_cfg, pos_sol):
    alt = solve_all(pos_cfg, use_closed_form_children=False)
    assert alt.root.thresholds[0] == pytest.approx(pos_sol.root.thresholds[0], rel=1e-6)


def test_value_at(pos_sol):
    assert value_at(pos_sol, 0, 10_000.0) == pytest.approx(pos_sol.root(10_000.0))
    assert value_at(pos_sol, pos_sol.tree.nodes[1], 5_000.0) == pytest.approx(
        value_terminal(pos_sol[1].closed_form, 5_000.0), rel=1e-6)


def test_never_stop_case():
    sol = solve_all(small_config(mu_hat=0.061667 * 0.8))
    assert sol.root.regime == CASE1 and sol.root.thresholds == ()
    assert asymptote_P(sol.root.node, sol.cfg) > 0


def test_stop_everywhere_case():
    sol = solve_all(small_config(K=-1500, nu=0.0))
    assert sol.root.regime == CASE5
    x = sol.root.grid.points
    assert np.allclose(sol.root.values, sol.root.f_hat * (x + 1500), rtol=1e-12)


def stage_fee_config():
    c = small_config(K=200.0, nu=0.3)
    return validate_config(c.with_pdmp(kernel=two_point_kernel(0, MU0, 0.5, 0.3), stage_fees=(200.0, 3000.0)))


def test_stop_inside_band():
    cfg = stage_fee_config()
    sol = solve_all(cfg)
    assert sol.root.regime == CASE3
    b1, b2 = sol.root.thresholds
    assert b1 == pytest.approx(14801.0, rel=1e-4) and b2 == pytest.approx(48511.3, rel=1e-4)
    sim = SimConfig(n_paths=40_000, seed=11)
    for x in (8_000.0, 30_000.0, 80_000.0):
        res = evaluate_policy(cfg, sim, sol, x)
        assert abs(res.mean - sol.root(x)) < 3 * res.stderr + 1e-9 * sol.root(x)


def test_grid_widening(pos_cfg, pos_sol):
    sol = solve_all(pos_cfg, GridSpec(x_lo=1.0, x_hi=15_000.0))
    assert any("widened" in n for n in sol.root.notes)
    assert sol.root.thresholds[0] == pytest.approx(pos_sol.root.thresholds[0], rel=1e-3)


def test_grid_exhausted(pos_cfg):
    with pytest.raises(GridExhausted):
        solve_all(pos_cfg, GridSpec(x_lo=0.01, x_hi=5.0))


def test_ill_posed():
    with pytest.raises(IllPosed):
        solve_all(small_config(theta=0.3))


def test_make_grid():
    g = make_grid(1.0, 1e4, 101)
    assert g.count == 101 and g.x_lo == 1.0 and g.x_hi == pytest.approx(1e4)
    assert np.allclose(np.diff(np.log(g.points)), math.log(1e4) / 100)
    with pytest.raises(ValueError):
        make_grid(10.0, 1.0)
