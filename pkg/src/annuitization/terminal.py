"""Closed-form solution of the constant-mortality (last stage) stopping problem."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffusion import characteristic_roots
from .model import ModelConfig, beta, fee

NEVER_STOP = "NeverStop"
STOP_ABOVE = "StopAbove"
STOP_BELOW = "StopBelow"
STOP_EVERYWHERE = "StopEverywhere"
K0_NEVER_STOP = "K0_NeverStop"
K0_STOP_EVERYWHERE = "K0_StopEverywhere"


@dataclass(frozen=True)
class TerminalSolution:
    mu: float
    regime: str
    x_star: Optional[float]
    x_star_star: Optional[float]
    zeta: Optional[float]
    f_hat: float
    beta: float
    gamma_plus: float
    gamma_minus: float
    K: float
    rate: float
    drift: float
    log_zeta: Optional[float] = None

    @property
    def threshold(self) -> Optional[float]:
        return self.x_star if self.x_star is not None else self.x_star_star

    @property
    def L(self) -> float:
        """Slope of the running reward when K = 0."""
        return (self.f_hat - self.beta) * (self.drift - self.rate)

    @property
    def asymptotic_slope(self) -> float:
        return max(self.beta, self.f_hat)


def solve_terminal(cfg: ModelConfig, mu: float) -> TerminalSolution:
    m = cfg.market
    n = cfg.pdmp.N
    r = m.rho + mu
    fh = m.price_rate / r
    be = beta(cfg, n, mu)
    roots = characteristic_roots(m, r)
    gp, gm = roots.gamma_plus, roots.gamma_minus
    K = fee(cfg, n)
    base = dict(mu=mu, f_hat=fh, beta=be, gamma_plus=gp, gamma_minus=gm, K=K, rate=r, drift=m.drift)

    if K == 0:
        L = (fh - be) * (m.drift - r)
        regime = K0_NEVER_STOP if L > 0 else K0_STOP_EVERYWHERE
        return TerminalSolution(regime=regime, x_star=None, x_star_star=None, zeta=None, **base)
    if K > 0:
        if fh <= be:
            return TerminalSolution(regime=NEVER_STOP, x_star=None, x_star_star=None, zeta=None, **base)
        g = gp
    else:
        if fh >= be:
            return TerminalSolution(regime=STOP_EVERYWHERE, x_star=None, x_star_star=None, zeta=None, **base)
        g = gm
    xb = fh * K * g / ((g - 1.0) * (fh - be))
    log_zeta = (1.0 - g) * math.log(fh * K / (g - 1.0)) + g * math.log((fh - be) / g)
    zeta = math.exp(log_zeta) if log_zeta < 700 else math.inf
    if K > 0:
        return TerminalSolution(regime=STOP_ABOVE, x_star=xb, x_star_star=None, zeta=zeta,
                                log_zeta=log_zeta, **base)
    return TerminalSolution(regime=STOP_BELOW, x_star=None, x_star_star=xb, zeta=zeta,
                            log_zeta=log_zeta, **base)


def _power_term(sol: TerminalSolution, x: np.ndarray, g: float) -> np.ndarray:
    with np.errstate(divide="ignore", over="ignore"):
        return np.exp(sol.log_zeta + g * np.log(x))


def value_terminal(sol: TerminalSolution, x):
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    obstacle = sol.f_hat * (x - sol.K)
    reg = sol.regime
    if reg == NEVER_STOP:
        v = sol.beta * x
    elif reg == STOP_EVERYWHERE:
        v = obstacle
    elif reg in (K0_NEVER_STOP, K0_STOP_EVERYWHERE):
        Lp = max(sol.L, 0.0)
        v = (sol.f_hat + Lp / (sol.rate - sol.drift)) * x
    elif reg == STOP_ABOVE:
        xc = np.minimum(x, sol.x_star)
        cont = sol.beta * xc + _power_term(sol, xc, sol.gamma_plus)
        v = np.where(x < sol.x_star, cont, obstacle)
    elif reg == STOP_BELOW:
        xc = np.maximum(x, sol.x_star_star)
        cont = sol.beta * xc + _power_term(sol, xc, sol.gamma_minus)
        v = np.where(x <= sol.x_star_star, obstacle, cont)
    else:
        raise ValueError(reg)
    return float(v) if scalar else v


def derivative_terminal(sol: TerminalSolution, x):
    """dV/dx, taking the continuation branch at a threshold."""
    x = np.asarray(x, dtype=float)
    reg = sol.regime
    if reg == NEVER_STOP:
        return np.full_like(x, sol.beta)
    if reg == STOP_EVERYWHERE:
        return np.full_like(x, sol.f_hat)
    if reg in (K0_NEVER_STOP, K0_STOP_EVERYWHERE):
        return np.full_like(x, sol.f_hat + max(sol.L, 0.0) / (sol.rate - sol.drift))
    if reg == STOP_ABOVE:
        xc = np.minimum(x, sol.x_star)
        cont = sol.beta + sol.gamma_plus * _power_term(sol, xc, sol.gamma_plus) / xc
        return np.where(x <= sol.x_star, cont, sol.f_hat)
    xc = np.maximum(x, sol.x_star_star)
    cont = sol.beta + sol.gamma_minus * _power_term(sol, xc, sol.gamma_minus) / xc
    return np.where(x >= sol.x_star_star, cont, sol.f_hat)
