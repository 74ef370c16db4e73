from dataclasses import replace

import numpy as np
import pytest

from annuitization.scenarios import MU0
from annuitization.solver import solve_all
from annuitization.verify import (CHECKS, growth_bounds, run_suite, spot_wealths)

from conftest import small_config


def corrupt_thresholds(sol, factor):
    stages = []
    for sv in sol.stages:
        thr = tuple(t * factor for t in sv.thresholds)
        stages.append(replace(sv, thresholds=thr, closed_form=None if thr else sv.closed_form))
    return replace(sol, stages=tuple(stages))


def test_suite_passes_without_mc(pos_cfg, pos_sol, neg_cfg, neg_sol):
    for cfg, sol in ((pos_cfg, pos_sol), (neg_cfg, neg_sol)):
        rep = run_suite(cfg, sol, monte_carlo=False)
        assert rep.passed, rep.table()
        assert {r.check for r in rep.records} == set(CHECKS) - {"monte_carlo"}


def test_corrupted_thresholds_are_caught(pos_cfg, pos_sol):
    bad = corrupt_thresholds(pos_sol, 1.05)
    rep = run_suite(pos_cfg, bad, monte_carlo=False)
    assert not rep.passed
    failing = {r.check for r in rep.failures()}
    assert {"smooth_fit", "regime_consistency"} <= failing


def test_corrupted_values_are_caught(pos_cfg, pos_sol):
    sv = pos_sol.root
    v = sv.values.copy()
    v[len(v) // 3] -= 0.5 * abs(v[len(v) // 3])
    bad = replace(pos_sol, stages=(replace(sv, values=v),) + pos_sol.stages[1:])
    rep = run_suite(pos_cfg, bad, monte_carlo=False)
    assert not rep.check_passed("convexity_monotonicity")


def test_growth_bounds_hold(pos_cfg, pos_sol):
    b = growth_bounds(pos_sol, pos_cfg)
    for sv in pos_sol:
        A, B = b[sv.node.index]
        x = sv.grid.points
        assert np.all(sv.values <= A + B * x)


def test_spot_wealths_bracket_thresholds(pos_sol):
    sv = pos_sol.root
    xs = spot_wealths(sv, 1500.0)
    assert len(xs) == 5 and xs == sorted(xs)
    b = sv.thresholds[0]
    assert any(x < b for x in xs) and any(x > b for x in xs)


def test_report_serialises(pos_cfg, pos_sol):
    rep = run_suite(pos_cfg, pos_sol, monte_carlo=False)
    d = rep.to_dict()
    assert len(d["records"]) == len(rep.records)
    assert "PASS" in rep.table()
    assert rep.to_json()


def test_stage_fee_band_passes():
    from annuitization.model import two_point_kernel, validate_config
    cfg = validate_config(small_config(K=200.0, nu=0.3).with_pdmp(
        kernel=two_point_kernel(0, MU0, 0.5, 0.3), stage_fees=(200.0, 3000.0)))
    rep = run_suite(cfg, solve_all(cfg), monte_carlo=False)
    assert rep.passed, rep.table()
