"""Executable invariant suite over a solved model."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .diffusion import generator
from .model import ModelConfig, fee_scale, validate_config
from .montecarlo import SimConfig, evaluate_policy, policy_from_solution
from .mortality import money_worth_gap
from .solver import (CASE1, CASE2, CASE3, CASE4, CASE5, K0_EVERYWHERE, K0_NEVER, Solution,
                     StageValue, asymptote_P, value_at)

CHECKS = (
    "obstacle_domination",
    "smooth_fit",
    "ode_residual",
    "convexity_monotonicity",
    "asymptotic_slope",
    "moneys_worth",
    "linear_growth",
    "monte_carlo",
    "regime_consistency",
    "M0_sign",
)

TOL = {
    "obstacle_domination": 1e-9,
    "smooth_fit": 1e-4,
    "ode_residual": 1e-3,
    "convexity_monotonicity": 1e-9,
    "asymptotic_slope": 1e-2,
    "moneys_worth": 0.0,
    "linear_growth": 1e-12,
    "monte_carlo": 2.0,
    "regime_consistency": 0.0,
    "M0_sign": 0.0,
}

# grid points on each side of a threshold left out of stencils and contact tests
EXCLUDE = 2


@dataclass(frozen=True)
class CheckRecord:
    check: str
    node: int
    max_violation: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerifyReport:
    records: tuple[CheckRecord, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self) -> list[CheckRecord]:
        return [r for r in self.records if not r.passed]

    def by_check(self, name: str) -> list[CheckRecord]:
        return [r for r in self.records if r.check == name]

    def check_passed(self, name: str) -> bool:
        return all(r.passed for r in self.by_check(name))

    def to_dict(self) -> dict:
        return {"passed": self.passed, "records": [asdict(r) for r in self.records]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        head = f"{'check':<24} {'node':>4} {'max_violation':>14} {'tolerance':>10}  result  detail"
        lines = [head, "-" * len(head)]
        for r in self.records:
            lines.append(f"{r.check:<24} {r.node:>4} {r.max_violation:>14.4g} {r.tolerance:>10.3g}  "
                         f"{'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
        return "\n".join(lines)


def _record(name, node, viol, detail="", passed=None):
    tol = TOL[name]
    if passed is None:
        passed = bool(viol <= tol)
    return CheckRecord(name, int(node), float(viol), tol, bool(passed), detail)


def _near_threshold(sv: StageValue, x: np.ndarray) -> np.ndarray:
    """Mask of grid points within EXCLUDE steps of a threshold."""
    mask = np.zeros(x.shape, bool)
    for b in sv.thresholds:
        j = int(np.searchsorted(x, b))
        mask[max(0, j - EXCLUDE):min(x.size, j + EXCLUDE)] = True
    return mask


def _children_value(sol: Solution, sv: StageValue, x):
    node = sv.node
    if node.is_terminal:
        return np.zeros_like(x)
    return sum(p * sol[c].exact(x) for c, p in node.children)


def check_obstacle(sol, sv):
    W = sv.W_values
    scale = max(1.0, float(np.max(np.abs(sv.values))))
    return _record("obstacle_domination", sv.node.index, max(0.0, -float(W.min())) / scale,
                   f"min W = {W.min():.4g}")


def _w_and_slope(sv: StageValue, b: float) -> tuple[float, float]:
    if sv.closed_form is not None:
        cf = sv.closed_form
        return cf.f_hat * cf.K - (cf.f_hat - cf.beta) * b, -(cf.f_hat - cf.beta)
    h = 1e-3 * b
    w = sv.w_func(np.array([b - h, b, b + h]))
    return float(w[1]), float((w[2] - w[0]) / (2 * h))


def check_smooth_fit(sol, sv):
    """The continuation candidate pinned to the obstacle at a reported threshold must leave it flat.

    On the continuation side of b, W = w + c*g with g the admissible power
    (x^gamma_plus below b, x^gamma_minus above) and c set by W(b) = 0; smooth
    fit is W'(b) = 0, i.e. w'(b) - w(b) * gamma / b = 0.
    """
    finite = [b for b in sv.thresholds if 0 < b < math.inf]
    if not finite or sv.w_func is None and sv.closed_form is None:
        return _record("smooth_fit", sv.node.index, 0.0, "no finite threshold")
    gp, gm = sv.roots.gamma_plus, sv.roots.gamma_minus
    worst = 0.0
    for b in finite:
        below = not bool(sv.stop_mask(np.array([b * (1 - 1e-6)]))[0])
        w, dw = _w_and_slope(sv, b)
        g = gp if below else gm
        worst = max(worst, abs(dw - w * g / b) / abs(sv.f_hat))
    return _record("smooth_fit", sv.node.index, worst,
                   "thresholds " + ", ".join(f"{b:.6g}" for b in finite))


def check_ode(sol, sv, cfg):
    x = sv.grid.points
    keep = ~sv.stop_mask(x) & ~_near_threshold(sv, x)
    keep[:EXCLUDE] = keep[-EXCLUDE:] = False
    if not keep.any():
        return _record("ode_residual", sv.node.index, 0.0, "no continuation interior")
    xs = x[keep]
    m = cfg.market
    V = sv.exact(xs)
    LV = generator(m, sv.exact, xs)
    lam = sv.node.lambda_next
    Vh = _children_value(sol, sv, xs)
    run = (m.alpha + m.nu * sv.node.mu) * xs
    res = LV - sv.rate * V + run + lam * Vh
    scale = np.abs(sv.rate * V) + np.abs(run) + np.abs(lam * Vh)
    rel = np.abs(res) / scale
    i = int(np.argmax(rel))
    return _record("ode_residual", sv.node.index, float(rel[i]), f"worst at x = {xs[i]:.6g}")


def check_convexity(sol, sv):
    x, V = sv.grid.points, sv.values
    s = np.diff(V) / np.diff(x)
    scale = max(float(np.max(np.abs(s))), 1e-300)
    conv = max(0.0, -float(np.min(np.diff(s)))) / scale
    mono = max(0.0, -float(np.min(s))) / scale
    return _record("convexity_monotonicity", sv.node.index, max(conv, mono),
                   f"convexity {conv:.3g}, monotonicity {mono:.3g}")


def check_asymptote(sol, sv):
    x_hi = sv.grid.x_hi
    ratio = float(sv.values[-1]) / x_hi
    viol = abs(ratio - sv.asymptotic_slope) / sv.asymptotic_slope
    return _record("asymptotic_slope", sv.node.index, viol,
                   f"V/x = {ratio:.6g} vs {sv.asymptotic_slope:.6g} at x = {x_hi:.4g}")


def check_moneys_worth(sol, sv, cfg):
    gap = money_worth_gap(sv.node, cfg)
    return _record("moneys_worth", sv.node.index, max(0.0, -gap), f"gap = {gap:.6g}", passed=gap > 0)


def growth_bounds(sol: Solution, cfg: ModelConfig) -> dict[int, tuple[float, float]]:
    """Per node (A, B) with 0 <= V <= A + B x, built stage by stage from the leaves."""
    m = cfg.market
    out: dict[int, tuple[float, float]] = {}
    for sv in reversed(sol.stages):
        node = sv.node
        coef = m.alpha + m.nu * node.mu
        A = sv.f_hat * abs(sv.K)
        if node.is_terminal:
            out[node.index] = (A, sv.f_hat + coef / (sv.rate - m.drift))
            continue
        Ac = sum(p * out[c.index][0] for c, p in node.children)
        Bc = sum(p * out[c.index][1] for c, p in node.children)
        lam = node.lambda_next
        out[node.index] = (A + lam * Ac / sv.rate, sv.f_hat + (coef + lam * Bc) / (sv.rate - m.drift))
    return out


def check_growth(sol, sv, bounds):
    A, B = bounds[sv.node.index]
    x, V = sv.grid.points, sv.values
    cap = A + B * x
    over = float(np.max((V - cap) / cap))
    under = max(0.0, -float(V.min())) / max(1.0, float(np.max(np.abs(V))))
    return _record("linear_growth", sv.node.index, max(over, under, 0.0),
                   f"V <= {A:.6g} + {B:.6g} x")


def spot_wealths(sv: StageValue, scale: float, count: int = 5) -> list[float]:
    """Wealth levels either side of each threshold, then generic levels."""
    finite = sorted(b for b in sv.thresholds if 0 < b < math.inf)
    pts: list[float] = []
    if finite:
        pts.append(0.5 * finite[0])
        for b in finite:
            pts += [0.975 * b, 1.025 * b]
        pts.append(2.0 * finite[-1])
    for f in (10.0, 3.0, 30.0, 1.0, 100.0):
        pts.append(f * scale)
    out: list[float] = []
    for p in pts:
        if all(abs(p / q - 1) > 1e-3 for q in out):
            out.append(p)
        if len(out) == count:
            break
    return sorted(out)


def check_monte_carlo(sol, sv, cfg, sim, policy, count=5):
    worst = 0.0
    parts = []
    passed = True
    for x in spot_wealths(sv, fee_scale(cfg), count):
        est = evaluate_policy(cfg, sim, policy, x, node=sv.node.index)
        v = float(value_at(sol, sv.node.index, x))
        err = abs(est.mean - v)
        # deterministic payoffs (immediate stops) have zero stderr; compare to rounding
        floor = 1e-9 * max(1.0, abs(v))
        z = err / (est.stderr + floor / TOL["monte_carlo"])
        ok = z <= TOL["monte_carlo"]
        passed &= ok
        worst = max(worst, z)
        parts.append(f"x={x:.6g}: mc {est.mean:.6g}+-{est.stderr:.3g} vs {v:.6g}")
    return _record("monte_carlo", sv.node.index, worst, "; ".join(parts), passed=passed)


def expected_regime(sol, sv, cfg) -> str:
    K = sv.K
    if K == 0:
        return sv.regime if sv.regime in (K0_NEVER, K0_EVERYWHERE) else "K0"
    if sv.closed_form is not None:
        cf = sv.closed_form
        if K > 0:
            return CASE2 if cf.f_hat > cf.beta else CASE1
        return CASE4 if cf.f_hat < cf.beta else CASE5
    P = asymptote_P(sv.node, cfg)
    if K > 0:
        if P < 0:
            return CASE2
        return CASE1 if np.all(sv.w_values > 0) else CASE3
    return CASE4 if (np.any(sv.M_values > 0) or P > 0) else CASE5


def check_regime(sol, sv, cfg):
    exp = expected_regime(sol, sv, cfg)
    x = sv.grid.points
    W = sv.W_values
    scale = max(1.0, float(np.max(np.abs(sv.values))))
    contact = W <= 1e-9 * scale
    mask = sv.stop_mask(x)
    skip = _near_threshold(sv, x)
    mism = int(np.sum((contact != mask) & ~skip))
    ok = exp == sv.regime and mism == 0
    return _record("regime_consistency", sv.node.index, float(mism) + (exp != sv.regime),
                   f"tag {sv.regime}, sign pattern says {exp}, {mism} grid points disagree "
                   "with the stopping set", passed=ok)


def check_M0(sol, sv, cfg):
    K = sv.K
    if K == 0:
        return _record("M0_sign", sv.node.index, 0.0, "vacuous for K = 0")
    if sv.M_func is not None:
        M0 = float(sv.M_func(np.array([0.0]))[0])
    else:
        M0 = cfg.market.price_rate * K
    ok = np.sign(M0) == np.sign(K)
    return _record("M0_sign", sv.node.index, 0.0 if ok else abs(M0), f"M(0) = {M0:.6g}", passed=ok)


def run_suite(cfg: ModelConfig, sol: Solution, sim: Optional[SimConfig] = None,
              monte_carlo: bool = True, spot_count: int = 5) -> VerifyReport:
    """Every check on every node; failures are records, never exceptions."""
    cfg = validate_config(cfg)
    sim = SimConfig() if sim is None else sim
    bounds = growth_bounds(sol, cfg)
    policy = policy_from_solution(sol)
    recs: list[CheckRecord] = []
    for sv in sol.stages:
        recs.append(check_obstacle(sol, sv))
        recs.append(check_smooth_fit(sol, sv))
        recs.append(check_ode(sol, sv, cfg))
        recs.append(check_convexity(sol, sv))
        recs.append(check_asymptote(sol, sv))
        recs.append(check_moneys_worth(sol, sv, cfg))
        recs.append(check_growth(sol, sv, bounds))
        if monte_carlo:
            recs.append(check_monte_carlo(sol, sv, cfg, sim, policy, spot_count))
        recs.append(check_regime(sol, sv, cfg))
        recs.append(check_M0(sol, sv, cfg))
    return VerifyReport(tuple(recs))
