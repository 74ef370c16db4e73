"""GBM fundamental solutions and the resolvent g -> E_x[int_0^inf e^{-rt} g(X_t) dt]."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NonIntegrable, QuadratureFailure
from .model import MarketParams

GL_ORDER = 8
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)
TAIL_REL = 1e-14
S_CAP = 600.0


@dataclass(frozen=True)
class GbmRoots:
    gamma_plus: float
    gamma_minus: float
    rate: float


def characteristic_roots(market: MarketParams, r: float) -> GbmRoots:
    s2 = market.sigma ** 2
    a = 0.5 - market.drift / s2
    d = math.sqrt(a * a + 2.0 * r / s2)
    # the product of the roots is -2r/sigma^2; get the root that cancels from the other one
    if a >= 0:
        gp = a + d
        gm = -2.0 * r / s2 / gp
    else:
        gm = a - d
        gp = -2.0 * r / s2 / gm
    return GbmRoots(gp, gm, r)


def char_poly(market: MarketParams, r: float, g: float) -> float:
    return 0.5 * market.sigma ** 2 * g * (g - 1.0) + market.drift * g - r


def resolvent_affine(market: MarketParams, r: float, a: float, b: float, x):
    """Exact resolvent of g(y) = a + b y."""
    return a / r + b * np.asarray(x, dtype=float) / (r + market.alpha - market.theta)


def _panel_nodes(edges: np.ndarray):
    """Gauss-Legendre nodes/weights for panels given by consecutive edges along the last axis."""
    lo, hi = edges[..., :-1], edges[..., 1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    s = mid[..., None] + half[..., None] * _GL_X
    w = half[..., None] * _GL_W
    shape = s.shape[:-2] + (-1,)
    return s.reshape(shape), w.reshape(shape)


class _GreenIntegrand:
    def __init__(self, roots: GbmRoots, g: Callable, x: np.ndarray, breaks: np.ndarray):
        self.gp, self.gm = roots.gamma_plus, roots.gamma_minus
        self.g = g
        self.x = x
        self.logx = np.log(x)
        self.breaks = breaks

    def edges(self, h: float, n_left: int, n_right: int) -> np.ndarray:
        base = h * np.arange(-n_left, n_right + 1, dtype=float)
        e = np.broadcast_to(base, (self.x.size, base.size))
        if self.breaks.size:
            sb = np.log(self.breaks)[None, :] - self.logx[:, None]
            sb = np.clip(sb, base[0], base[-1])
            e = np.sort(np.concatenate([e, sb], axis=1), axis=1)
        return e

    def values(self, s: np.ndarray) -> np.ndarray:
        wt = np.where(s < 0, np.exp(-self.gm * np.minimum(s, 0.0)), np.exp(-self.gp * np.maximum(s, 0.0)))
        with np.errstate(over="ignore", invalid="ignore"):
            y = self.x[:, None] * np.exp(s)
            gv = np.asarray(self.g(y), dtype=float)
            return wt * gv


def resolvent(market: MarketParams, r: float, g, x, mode: str = "quadrature",
              breakpoints: Sequence[float] = (), tol: float = 1e-9, max_halvings: int = 8):
    """Resolvent of the wealth diffusion at discount rate r.

    mode="affine" takes g=(a, b) meaning g(y)=a+b*y and is exact.
    mode="quadrature" takes a vectorized callable; `breakpoints` lists wealth
    levels where g is not smooth so panels can be split there.
    """
    if mode == "affine":
        a, b = g
        return resolvent_affine(market, r, a, b, x)
    if mode != "quadrature":
        raise ValueError(f"unknown resolvent mode {mode!r}")

    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    zero = xs <= 0
    if zero.any():
        out[zero] = float(np.asarray(g(np.zeros(1)))[0]) / r
    pos = ~zero
    if pos.any():
        roots = characteristic_roots(market, r)
        breaks = np.asarray([b for b in breakpoints if b > 0 and math.isfinite(b)], dtype=float)
        xp = xs[pos]
        vals = np.empty_like(xp)
        chunk = max(1, 4096 // max(1, breaks.size + 1))
        for i in range(0, xp.size, chunk):
            vals[i:i + chunk] = _green_quad(roots, g, xp[i:i + chunk], breaks, tol, max_halvings)
        out[pos] = vals
    return float(out[0]) if scalar else out


def _green_quad(roots: GbmRoots, g, x, breaks, tol, max_halvings):
    gp, gm = roots.gamma_plus, roots.gamma_minus
    const = 2.0 / (roots_sigma2(roots) * (gp - gm))
    f = _GreenIntegrand(roots, g, x, breaks)
    ln_tail = math.log(1.0 / TAIL_REL)
    h = 0.5
    left = ln_tail / abs(gm)
    right = ln_tail / max(gp - 1.0, 1e-3)
    n_left, n_right = int(math.ceil(left / h)), int(math.ceil(min(right, S_CAP) / h))

    # extend the truncation window until both tails fall below TAIL_REL of the peak
    while True:
        e = f.edges(h, n_left, n_right)
        s, w = _panel_nodes(e)
        v = f.values(s)
        if not np.all(np.isfinite(v)):
            raise NonIntegrable("integrand is not finite; payoff grows too fast")
        a = np.abs(v)
        peak = a.max(axis=1)
        peak = np.where(peak > 0, peak, 1.0)
        k = GL_ORDER * 2
        lt = a[:, :k].max(axis=1) <= TAIL_REL * peak
        rt = a[:, -k:].max(axis=1) <= TAIL_REL * peak
        if lt.all() and rt.all():
            break
        grew = False
        if not lt.all() and n_left * h < S_CAP:
            n_left = int(math.ceil(n_left * 1.5))
            grew = True
        if not rt.all() and n_right * h < S_CAP:
            n_right = int(math.ceil(n_right * 1.5))
            grew = True
        if not grew:
            raise NonIntegrable("resolvent integrand does not decay; payoff grows superlinearly")

    est = (v * w).sum(axis=1)
    mag = (a * w).sum(axis=1)
    for _ in range(max_halvings):
        h *= 0.5
        n_left *= 2
        n_right *= 2
        s, w = _panel_nodes(f.edges(h, n_left, n_right))
        v = f.values(s)
        new = (v * w).sum(axis=1)
        mag = (np.abs(v) * w).sum(axis=1)
        done = np.abs(new - est) <= tol * np.maximum(mag, 1e-300)
        est = new
        if done.all():
            return const * est
    raise QuadratureFailure(f"resolvent quadrature did not reach tolerance {tol:g}")


def roots_sigma2(roots: GbmRoots) -> float:
    # gamma_plus * gamma_minus = -2 r / sigma^2
    return -2.0 * roots.rate / (roots.gamma_plus * roots.gamma_minus)


def generator(market: MarketParams, u: Callable, x, rel_step: float = 1e-3):
    """L u = 1/2 sigma^2 x^2 u'' + (theta - alpha) x u' by central differences."""
    x = np.asarray(x, dtype=float)
    h = rel_step * x
    up, u0, um = u(x + h), u(x), u(x - h)
    d1 = (up - um) / (2 * h)
    d2 = (up - 2 * u0 + um) / h ** 2
    return 0.5 * market.sigma ** 2 * x ** 2 * d2 + market.drift * x * d1
