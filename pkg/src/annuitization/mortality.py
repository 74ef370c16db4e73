"""Reachable mortality states, annuity factors, life expectancy and calibration."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Callable, Optional

from scipy.optimize import brentq

from .errors import InvalidParam, NoRoot, TreeTooLarge
from .model import ModelConfig, _kernel_dist, merge_mu, MU_RTOL


@dataclass(frozen=True, eq=False)
class StateNode:
    n: int
    mu: float
    lambda_next: float
    children: tuple[tuple["StateNode", float], ...]
    index: int = -1

    @property
    def is_terminal(self) -> bool:
        return not self.children

    def label(self) -> str:
        return f"({self.n},{self.mu:.6g})"

    def __repr__(self) -> str:
        return f"StateNode(n={self.n}, mu={self.mu!r}, index={self.index})"


@dataclass(frozen=True)
class StateTree:
    nodes: tuple[StateNode, ...]
    N: int

    @property
    def root(self) -> StateNode:
        return self.nodes[0]

    def stage(self, n: int) -> list[StateNode]:
        return [nd for nd in self.nodes if nd.n == n]

    def find(self, n: int, mu: float, rtol: float = 1e-9) -> StateNode:
        for nd in self.nodes:
            if nd.n == n and math.isclose(nd.mu, mu, rel_tol=rtol):
                return nd
        raise KeyError(f"no node at stage {n} with mu={mu}")

    def __len__(self) -> int:
        return len(self.nodes)


def _same(a: float, b: float) -> bool:
    return abs(a - b) <= MU_RTOL * max(abs(a), abs(b))


def enumerate_states(cfg: ModelConfig, max_nodes: int = 100_000) -> StateTree:
    pd = cfg.pdmp
    stages: list[list[float]] = [[pd.mu0]]
    edges: list[dict[int, list[tuple[float, float]]]] = []
    count = 1
    for n in range(pd.N):
        nxt: list[float] = []
        stage_edges = {}
        for i, mu in enumerate(stages[n]):
            dist = _kernel_dist(pd, n, mu)
            stage_edges[i] = list(dist)
            nxt.extend(z for z, _ in dist)
        merged = merge_mu(nxt)
        count += len(merged)
        if count > max_nodes:
            raise TreeTooLarge(f"state tree exceeds {max_nodes} nodes")
        stages.append(merged)
        edges.append(stage_edges)

    # build bottom-up so children exist before their parents
    built: list[list[StateNode]] = [[] for _ in stages]
    built[pd.N] = [StateNode(pd.N, mu, 0.0, ()) for mu in stages[pd.N]]
    for n in range(pd.N - 1, -1, -1):
        below = built[n + 1]
        row = []
        for i, mu in enumerate(stages[n]):
            agg: dict[int, float] = {}
            for z, p in edges[n][i]:
                j = next(k for k, c in enumerate(below) if _same(c.mu, z))
                agg[j] = agg.get(j, 0.0) + p
            kids = tuple((below[j], p) for j, p in sorted(agg.items()))
            row.append(StateNode(n, mu, pd.lam(n), kids))
        built[n] = row

    # breadth-first order with stable indices
    ordered = []
    for row in built:
        for nd in row:
            object.__setattr__(nd, "index", len(ordered))
            ordered.append(nd)
    return StateTree(tuple(ordered), pd.N)


def _backward(node: StateNode, leaf: Callable[[StateNode], float],
              step: Callable[[StateNode, float], float], memo: dict) -> float:
    key = id(node)
    if key in memo:
        return memo[key]
    if node.is_terminal:
        val = leaf(node)
    else:
        avg = sum(p * _backward(c, leaf, step, memo) for c, p in node.children)
        val = step(node, avg)
    memo[key] = val
    return val


def annuity_factor(node: StateNode, cfg: ModelConfig, memo: Optional[dict] = None) -> float:
    rho = cfg.market.rho

    def step(nd, avg):
        r = rho + nd.mu + nd.lambda_next
        return 1.0 / r + nd.lambda_next / r * avg

    return _backward(node, lambda nd: 1.0 / (rho + nd.mu), step, {} if memo is None else memo)


def moneys_worth(node: StateNode, cfg: ModelConfig, memo: Optional[dict] = None) -> float:
    return cfg.market.price_rate * annuity_factor(node, cfg, memo)


def life_expectancy(node: StateNode, cfg: ModelConfig, scale: float = 1.0) -> float:
    """E[tau_d] from `node`; `scale` multiplies every mortality value in the tree."""

    def step(nd, avg):
        h = scale * nd.mu + nd.lambda_next
        return 1.0 / h + nd.lambda_next / h * avg

    return _backward(node, lambda nd: 1.0 / (scale * nd.mu), step, {})


def calibrate(target: float, mode: str, cfg: Optional[ModelConfig] = None,
              bracket: tuple[float, float] = (1e-6, 1.0)) -> float:
    """Baseline mode returns mu0 matching the target life expectancy at the root.

    The whole mortality tree is rescaled together with mu0, so kernel
    targets keep their ratios to mu0.
    """
    if not target > 0:
        raise InvalidParam("target life expectancy must be positive")
    if mode == "objective":
        return 1.0 / target
    if mode != "baseline":
        raise InvalidParam(f"unknown calibration mode {mode!r}")
    if cfg is None:
        raise InvalidParam("baseline calibration needs a config")
    tree = enumerate_states(cfg)
    mu_ref = cfg.pdmp.mu0

    def resid(mu0):
        return life_expectancy(tree.root, cfg, scale=mu0 / mu_ref) - target

    lo, hi = bracket
    f_lo, f_hi = resid(lo), resid(hi)
    if f_lo * f_hi > 0:
        raise NoRoot(f"life expectancy {target} not bracketed by mu0 in [{lo}, {hi}]")
    mu0 = brentq(resid, lo, hi, xtol=1e-16, rtol=4 * sys.float_info.epsilon, maxiter=500)
    if abs(resid(mu0)) > 1e-10 * max(1.0, target):
        raise NoRoot("calibration residual above tolerance")
    return mu0


def money_worth_gap(node: StateNode, cfg: ModelConfig) -> float:
    """(rho+mu) f(n,mu) - lambda (E f(child) - f(n,mu)); strictly positive in theory."""
    if node.is_terminal:
        return (cfg.market.rho + node.mu) * moneys_worth(node, cfg)
    memo: dict = {}
    f = moneys_worth(node, cfg, memo)
    avg = sum(p * moneys_worth(c, cfg, memo) for c, p in node.children)
    return (cfg.market.rho + node.mu) * f - node.lambda_next * (avg - f)
