"""Monte Carlo oracle: path simulation, policy evaluation and the optimality probe."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional, Union

import numpy as np

from . import _mc_kernels as kern
from .model import ModelConfig, fee, fee_scale, validate_config
from .mortality import StateTree, enumerate_states, moneys_worth

BLOCK = 1024
LOG2_BLOCK = 10


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1.0 / 252.0
    horizon: Optional[float] = None
    seed: int = 20240611
    antithetic: bool = False
    eps: float = 1e-10  # bridge crossing probability below which a block is not refined

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def resolved_horizon(self, cfg: ModelConfig) -> float:
        if self.horizon is not None:
            return self.horizon
        mu_min = cfg.pdmp.mu_min if cfg.pdmp.mu_min is not None else validate_config(cfg).pdmp.mu_min
        # the discounted payoff decays like exp(-(rho + mu - drift) t) in expectation
        return math.log(1e8) / (cfg.market.rho + mu_min - max(cfg.market.drift, 0.0))

    def n_steps(self, cfg: ModelConfig) -> int:
        steps = int(math.ceil(self.resolved_horizon(cfg) / self.dt))
        return int(math.ceil(steps / BLOCK)) * BLOCK


@dataclass(frozen=True)
class PolicyEvalResult:
    mean: float
    stderr: float
    n_paths: int
    payoffs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    stop_times: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr


@dataclass(frozen=True)
class Rule:
    kind: str  # never | immediately | above | below | inside
    b1: float = math.nan
    b2: float = math.nan

    _CODES = {"never": kern.NEVER, "immediately": kern.IMMEDIATELY, "above": kern.ABOVE,
              "below": kern.BELOW, "inside": kern.INSIDE}

    def __post_init__(self):
        if self.kind not in self._CODES:
            raise ValueError(f"unknown rule {self.kind!r}")

    @property
    def code(self) -> int:
        return self._CODES[self.kind]

    def stops(self, x: float) -> bool:
        if self.kind == "never":
            return False
        if self.kind == "immediately":
            return True
        if self.kind == "above":
            return x >= self.b1
        if self.kind == "below":
            return x <= self.b1
        return self.b1 <= x <= self.b2

    def shifted(self, which: int, factor: float) -> "Rule":
        if which == 0:
            return replace(self, b1=self.b1 * factor)
        return replace(self, b2=self.b2 * factor)

    @property
    def thresholds(self) -> tuple[float, ...]:
        if self.kind in ("above", "below"):
            return (self.b1,)
        if self.kind == "inside":
            return (self.b1, self.b2)
        return ()


def StopAbove(b: float) -> Rule:
    return Rule("above", b)


def StopBelow(b: float) -> Rule:
    return Rule("below", b)


def StopInside(b1: float, b2: float) -> Rule:
    return Rule("inside", b1, b2)


NEVER = Rule("never")
IMMEDIATELY = Rule("immediately")

Policy = Mapping[int, Rule]

_REGIME_RULE = {"Case1": "never", "Case2": "above", "Case3": "inside", "Case4": "below",
                "Case5": "immediately", "K0_NeverStop": "never", "K0_StopEverywhere": "immediately"}


def policy_from_solution(sol) -> dict[int, Rule]:
    out = {}
    for sv in sol.stages:
        kind = _REGIME_RULE[sv.regime]
        out[sv.node.index] = Rule(kind, *sv.thresholds)
    return out


@dataclass(frozen=True)
class _TreeArrays:
    mu: np.ndarray
    lam: np.ndarray
    fhat: np.ndarray
    child_start: np.ndarray
    child_count: np.ndarray
    child_idx: np.ndarray
    child_cum: np.ndarray
    fees: np.ndarray
    max_seg: int


def _tree_arrays(cfg: ModelConfig, tree: StateTree) -> _TreeArrays:
    n = len(tree)
    mu = np.array([nd.mu for nd in tree.nodes])
    lam = np.array([nd.lambda_next for nd in tree.nodes])
    memo: dict = {}
    fhat = np.array([moneys_worth(nd, cfg, memo) for nd in tree.nodes])
    start = np.zeros(n, np.int64)
    count = np.zeros(n, np.int64)
    idx, cum = [], []
    for nd in tree.nodes:
        start[nd.index] = len(idx)
        count[nd.index] = len(nd.children)
        c = 0.0
        for child, p in nd.children:
            c += p
            idx.append(child.index)
            cum.append(c)
        if nd.children:
            cum[-1] = 1.0
    return _TreeArrays(mu, lam, fhat, start, count, np.array(idx, np.int64),
                       np.array(cum, float), np.array([fee(cfg, nd.n) for nd in tree.nodes], float),
                       tree.N + 2)


def _prepare(cfg: ModelConfig):
    cfg = validate_config(cfg)
    tree = enumerate_states(cfg)
    return cfg, tree, _tree_arrays(cfg, tree)


def _summarize(pay: np.ndarray, antithetic: bool) -> tuple[float, float]:
    if antithetic and pay.size >= 2:
        m = pay.size // 2 * 2
        units = 0.5 * (pay[:m:2] + pay[1:m:2])
        if pay.size > m:
            units = np.append(units, pay[-1])
    else:
        units = pay
    mean = float(units.mean())
    se = float(units.std(ddof=1) / math.sqrt(units.size)) if units.size > 1 else 0.0
    return mean, se


def _node_index(tree: StateTree, node) -> int:
    if node is None:
        return 0
    if isinstance(node, (int, np.integer)):
        return int(node)
    return node.index


def _rule_arrays(policy: Policy, n: int):
    rtype = np.zeros(n, np.int64)
    b1 = np.full(n, np.nan)
    b2 = np.full(n, np.nan)
    for k in range(n):
        rule = policy.get(k, NEVER)
        rtype[k] = rule.code
        if rule.kind in ("above", "below", "inside"):
            b1[k] = math.log(rule.b1) if rule.b1 > 0 else -np.inf
        if rule.kind == "inside":
            b2[k] = math.log(rule.b2) if rule.b2 > 0 else -np.inf
    return rtype, b1, b2


def evaluate_policy(cfg: ModelConfig, sim: SimConfig, policy: Union[Policy, object], x0: float,
                    node=None, mode: str = "integrated", keep_paths: bool = False) -> PolicyEvalResult:
    """Expected payoff of a stopping policy started at wealth x0 in `node` (root by default).

    mode="integrated" integrates mortality out of the payoff; mode="raw" samples
    the death time and pays the bequest or the annuity stream explicitly.
    """
    if hasattr(policy, "stages"):
        policy = policy_from_solution(policy)
    cfg, tree, ta = _prepare(cfg)
    k0 = _node_index(tree, node)
    rtype, b1, b2 = _rule_arrays(policy, len(tree))
    m = cfg.market
    pay, tau = kern.evaluate_paths(
        np.uint64(sim.seed), sim.n_paths, sim.antithetic, float(x0), k0, ta.mu, ta.lam, ta.fhat,
        ta.child_start, ta.child_count, ta.child_idx, ta.child_cum, rtype, b1, b2, m.rho, m.alpha,
        m.nu, m.sigma, m.drift, ta.fees, m.price_rate, mode == "raw", sim.dt, BLOCK, LOG2_BLOCK,
        sim.n_steps(cfg), sim.eps, ta.max_seg)
    mean, se = _summarize(pay, sim.antithetic)
    return PolicyEvalResult(mean, se, sim.n_paths, pay if keep_paths else None,
                            tau if keep_paths else None)


@dataclass(frozen=True)
class SimPath:
    times: np.ndarray
    wealth: np.ndarray
    node: np.ndarray  # tree index of the mortality state on [times[i], times[i+1])
    death_time: float


def simulate_paths(cfg: ModelConfig, sim: SimConfig, x0: float, node=None,
                   horizon: Optional[float] = None) -> Iterator[SimPath]:
    """Full-resolution paths on the union of the payoff grid and the jump times.

    Uses the same random streams as evaluate_policy, so path p here is the path
    p seen by the policy evaluator.
    """
    cfg, tree, ta = _prepare(cfg)
    k0 = _node_index(tree, node)
    m = cfg.market
    full_steps = sim.n_steps(cfg)
    H = full_steps * sim.dt if horizon is None else min(horizon, full_steps * sim.dt)
    steps = int(math.ceil(H / sim.dt / BLOCK)) * BLOCK
    mdrift = m.drift - 0.5 * m.sigma ** 2
    for p in range(sim.n_paths):
        W = kern.fill_grid(np.uint64(sim.seed), p, sim.antithetic, steps, BLOCK, LOG2_BLOCK, sim.dt)
        seg_node, seg_t, td = kern.path_events(np.uint64(sim.seed), p, sim.antithetic, k0,
                                               full_steps * sim.dt, ta.mu, ta.lam, ta.child_start,
                                               ta.child_count, ta.child_idx, ta.child_cum, ta.max_seg)
        pk, sgn = kern.path_key(np.uint64(sim.seed), p, sim.antithetic)
        grid_t = np.arange(steps + 1) * sim.dt
        ev_t = [t for t in seg_t[1:] if t < H]
        ev_W = []
        for j, t in enumerate(seg_t[1:], start=1):
            if t >= H:
                break
            i = int(math.floor(t / sim.dt))
            ev_W.append(kern.bridge_point(t, i * sim.dt, W[i], (i + 1) * sim.dt, W[i + 1], np.uint64(pk), sgn, j))
        times = np.concatenate([grid_t[grid_t <= H], ev_t])
        Ws = np.concatenate([W[: grid_t[grid_t <= H].size], ev_W])
        order = np.argsort(times, kind="stable")
        times, Ws = times[order], Ws[order]
        wealth = x0 * np.exp(mdrift * times + m.sigma * Ws)
        seg_idx = np.searchsorted(seg_t, times, side="right") - 1
        yield SimPath(times, wealth, seg_node[seg_idx], float(td))


def simulate_mortality(cfg: ModelConfig, n_paths: int, seed: int = 0, node=None):
    """Death times and realised annuity integrals from the mortality process only."""
    cfg, tree, ta = _prepare(cfg)
    return kern.mortality_paths(np.uint64(seed), n_paths, _node_index(tree, node), cfg.market.rho,
                                ta.mu, ta.lam, ta.child_start, ta.child_count, ta.child_idx,
                                ta.child_cum, ta.max_seg)


def mc_life_expectancy(cfg: ModelConfig, n_paths: int = 1_000_000, seed: int = 0, node=None):
    tau, _ = simulate_mortality(cfg, n_paths, seed, node)
    return float(tau.mean()), float(tau.std(ddof=1) / math.sqrt(n_paths))


def mc_annuity_factor(cfg: ModelConfig, n_paths: int = 1_000_000, seed: int = 0, node=None):
    _, ann = simulate_mortality(cfg, n_paths, seed, node)
    return float(ann.mean()), float(ann.std(ddof=1) / math.sqrt(n_paths))


def survival_curve(cfg: ModelConfig, times, n_paths: int = 100_000, seed: int = 0, node=None):
    tau, _ = simulate_mortality(cfg, n_paths, seed, node)
    tau = np.sort(tau)
    times = np.asarray(times, dtype=float)
    return 1.0 - np.searchsorted(tau, times, side="right") / tau.size


# --- optimality probe --------------------------------------------------------------

@dataclass(frozen=True)
class ProbeEntry:
    node: int
    threshold_index: int  # -1 for a delay variant of an immediate stop
    factor: float
    x0: float
    base_mean: float
    variant_mean: float
    diff: float          # variant - base
    diff_stderr: float
    beaten: bool


@dataclass(frozen=True)
class ProbeReport:
    entries: tuple[ProbeEntry, ...]
    perturbation: float

    @property
    def passed(self) -> bool:
        return not any(e.beaten for e in self.entries)

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def worst(self) -> Optional[ProbeEntry]:
        if not self.entries:
            return None
        return max(self.entries, key=lambda e: e.diff / e.diff_stderr if e.diff_stderr > 0 else
                   (math.inf if e.diff > 0 else -math.inf))


def _paired(cfg, sim, policy, variant, x0, k):
    base = evaluate_policy(cfg, sim, policy, x0, node=k, keep_paths=True)
    var = evaluate_policy(cfg, sim, variant, x0, node=k, keep_paths=True)
    dm, dse = _summarize(var.payoffs - base.payoffs, sim.antithetic)
    beaten = dm > 2.0 * dse and dm > 1e-12 * max(1.0, abs(base.mean))
    return base.mean, var.mean, dm, dse, beaten


def optimality_probe(cfg: ModelConfig, sim: SimConfig, sol, perturbation: float = 0.1,
                     nodes=None) -> ProbeReport:
    """Shift each threshold by +-perturbation and compare with common random numbers.

    Variants are started at the node whose threshold moved, at wealth levels
    inside the band where the two policies disagree. Nodes that stop
    immediately are challenged by rules that wait for wealth to move by the
    perturbation. The base policy FAILs if some variant beats it by more than
    two standard errors of the paired difference.
    """
    policy = policy_from_solution(sol) if hasattr(sol, "stages") else dict(sol)
    targets = sorted(policy) if nodes is None else sorted(_node_index(None, n) for n in nodes)
    levels = sorted({b for r in policy.values() for b in r.thresholds if 0 < b < math.inf}
                    | {10.0 * fee_scale(cfg)})
    entries = []
    for k in targets:
        rule = policy.get(k, NEVER)
        for ti, b in enumerate(rule.thresholds):
            for sign in (-1.0, 1.0):
                factor = 1.0 + sign * perturbation
                variant = dict(policy)
                variant[k] = rule.shifted(ti, factor)
                lo, hi = sorted((b, b * factor))
                for x0 in (lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)):
                    res = _paired(cfg, sim, policy, variant, x0, k)
                    entries.append(ProbeEntry(k, ti, factor, x0, *res))
        if rule.kind == "immediately":
            for x0 in levels:
                for factor, delay in ((1.0 - perturbation, StopBelow), (1.0 + perturbation, StopAbove)):
                    variant = dict(policy)
                    variant[k] = delay(x0 * factor)
                    res = _paired(cfg, sim, policy, variant, x0, k)
                    entries.append(ProbeEntry(k, -1, factor, x0, *res))
    return ProbeReport(tuple(entries), perturbation)
