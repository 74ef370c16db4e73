"""Backward stage recursion: running reward, resolvent, concave majorant, thresholds."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import terminal as T
from .diffusion import GbmRoots, characteristic_roots, resolvent
from .errors import ChildrenUnsolved, GridExhausted
from .majorant import MajorantResult, concave_majorant, _runs
from .model import ModelConfig, beta, effective_rate, fee, fee_scale, validate_config
from .mortality import StateNode, StateTree, enumerate_states, moneys_worth

log = logging.getLogger(__name__)

CASE1, CASE2, CASE3, CASE4, CASE5 = "Case1", "Case2", "Case3", "Case4", "Case5"
K0_NEVER, K0_EVERYWHERE = T.K0_NEVER_STOP, T.K0_STOP_EVERYWHERE

_TERMINAL_TO_CASE = {
    T.NEVER_STOP: CASE1,
    T.STOP_ABOVE: CASE2,
    T.STOP_BELOW: CASE4,
    T.STOP_EVERYWHERE: CASE5,
    T.K0_NEVER_STOP: K0_NEVER,
    T.K0_STOP_EVERYWHERE: K0_EVERYWHERE,
}

# which end of [0, inf) belongs to the stopping set, per regime
STOPS_NEAR_ZERO = {CASE4, CASE5, K0_EVERYWHERE}
STOPS_NEAR_INF = {CASE2, CASE5, K0_EVERYWHERE}

AMBIGUOUS_TOL = 1e-12
MAX_WIDEN = 3


@dataclass(frozen=True)
class GridSpec:
    count: int = 2000
    lo_factor: float = 1e-2
    hi_factor: float = 1e3
    x_lo: Optional[float] = None
    x_hi: Optional[float] = None

    def build(self, K: float) -> "WealthGrid":
        scale = max(abs(K), 1.0)
        lo = self.x_lo if self.x_lo is not None else self.lo_factor * scale
        hi = self.x_hi if self.x_hi is not None else self.hi_factor * scale
        return make_grid(lo, hi, self.count)


@dataclass(frozen=True)
class WealthGrid:
    points: np.ndarray

    def __post_init__(self):
        p = self.points
        if p.ndim != 1 or p.size < 64 or np.any(np.diff(p) <= 0) or p[0] <= 0:
            raise ValueError("wealth grid must be positive, strictly increasing, with at least 64 points")

    @property
    def x_lo(self) -> float:
        return float(self.points[0])

    @property
    def x_hi(self) -> float:
        return float(self.points[-1])

    @property
    def count(self) -> int:
        return int(self.points.size)

    def widened(self, down: bool, up: bool) -> "WealthGrid":
        lo = self.x_lo / 10 if down else self.x_lo
        hi = self.x_hi * 10 if up else self.x_hi
        return make_grid(lo, hi, self.count)


def _W_from_pieces(sv: "StageValue", x: np.ndarray) -> np.ndarray:
    w = sv.w_func(x)
    if sv.majorant is not None and not np.any(sv.majorant.contact):
        return np.maximum(w, 0.0)
    gp, gm = sv.roots.gamma_plus, sv.roots.gamma_minus
    with np.errstate(divide="ignore", over="ignore"):
        lx = np.log(x / sv.xscale)
        y = np.exp((gp - gm) * lx)
        phi = np.exp(gm * lx)
    W = np.zeros_like(x)
    for kind, yl, yr, a, b in sv.pieces:
        sel = (y > yl) & (y < yr) if kind == "chord" else (y < yr if kind == "origin" else y > yl)
        if kind == "origin":
            W[sel] = w[sel] + a * np.exp(gp * lx[sel])
        else:
            W[sel] = w[sel] + phi[sel] * (a + b * (y[sel] - yl))
    return np.maximum(W, 0.0)


def make_grid(x_lo: float, x_hi: float, count: int = 2000) -> WealthGrid:
    if not 0 < x_lo < x_hi:
        raise ValueError("need 0 < x_lo < x_hi")
    return WealthGrid(np.geomspace(x_lo, x_hi, count))


@dataclass(frozen=True, eq=False)
class StageValue:
    node: StateNode
    regime: str
    thresholds: tuple[float, ...]
    grid: WealthGrid
    values: np.ndarray
    asymptotic_slope: float
    value_at_zero: float
    closed_form: Optional[T.TerminalSolution]
    f_hat: float
    K: float
    rate: float
    roots: GbmRoots
    M_values: Optional[np.ndarray] = None
    w_values: Optional[np.ndarray] = None
    majorant: Optional[MajorantResult] = None
    w_func: Optional[Callable] = field(default=None, repr=False)
    M_func: Optional[Callable] = field(default=None, repr=False)
    notes: tuple[str, ...] = ()
    pieces: tuple = ()  # (kind, y_left, y_right, a, b) describing W off the contact set
    xscale: float = 1.0
    _interp: Optional[PchipInterpolator] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_interp", PchipInterpolator(self.grid.points, self.values, extrapolate=False))

    @property
    def W_values(self) -> np.ndarray:
        return self.values - self.f_hat * (self.grid.points - self.K)

    def stop_mask(self, x) -> np.ndarray:
        """Boolean mask of the stopping set implied by regime and thresholds."""
        x = np.asarray(x, dtype=float)
        reg, b = self.regime, self.thresholds
        if reg in (CASE5, K0_EVERYWHERE):
            return np.ones(x.shape, bool)
        if reg == CASE2:
            return x >= b[0]
        if reg == CASE3:
            return (x >= b[0]) & (x <= b[1])
        if reg == CASE4:
            return x <= b[0]
        return np.zeros(x.shape, bool)

    def obstacle(self, x):
        return self.f_hat * (np.asarray(x, dtype=float) - self.K)

    def exact(self, x):
        """V off the grid: closed form, or the resolvent w plus the majorant pieces."""
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.closed_form is not None:
            v = T.value_terminal(self.closed_form, x)
        elif self.w_func is None:
            v = self.asymptotic_slope * x
        else:
            v = self.obstacle(x) + _W_from_pieces(self, x)
        return float(v[0]) if scalar else v

    def __call__(self, x, use_closed_form: bool = True):
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        if use_closed_form and self.closed_form is not None:
            v = T.value_terminal(self.closed_form, x)
            return float(v) if scalar else v
        v = np.empty_like(x)
        lo, hi = self.grid.x_lo, self.grid.x_hi
        mid = (x >= lo) & (x <= hi)
        v[mid] = self._interp(x[mid])
        below = x < lo
        if below.any():
            if self.regime in STOPS_NEAR_ZERO:
                v[below] = self.obstacle(x[below])
            else:
                v0, v1 = self.value_at_zero, self.values[0]
                v[below] = v0 + (v1 - v0) * x[below] / lo
        above = x > hi
        if above.any():
            if self.regime in STOPS_NEAR_INF:
                v[above] = self.obstacle(x[above])
            else:
                v[above] = self.values[-1] + self.asymptotic_slope * (x[above] - hi)
        return float(v[()]) if scalar else v


@dataclass(frozen=True)
class Solution:
    cfg: ModelConfig
    tree: StateTree
    stages: tuple[StageValue, ...]

    @property
    def root(self) -> StageValue:
        return self.stages[0]

    def __getitem__(self, node) -> StageValue:
        idx = node.index if isinstance(node, StateNode) else int(node)
        return self.stages[idx]

    def __iter__(self):
        return iter(self.stages)

    def summary(self) -> list[dict]:
        rows = []
        for sv in self.stages:
            rows.append({
                "node_id": sv.node.index,
                "n": sv.node.n,
                "mu": sv.node.mu,
                "regime": sv.regime,
                "thresholds": list(sv.thresholds),
                "asymptotic_slope": sv.asymptotic_slope,
                "f_hat": sv.f_hat,
                "value_at_zero": sv.value_at_zero,
                "closed_form": sv.closed_form.regime if sv.closed_form else None,
                "notes": list(sv.notes),
            })
        return rows


# --- scalar recursions -------------------------------------------------------

def asymptotic_slope(node: StateNode, cfg: ModelConfig, memo: Optional[dict] = None) -> float:
    memo = {} if memo is None else memo
    if id(node) in memo:
        return memo[id(node)]
    fh = moneys_worth(node, cfg)
    be = beta(cfg, node.n, node.mu)
    if node.is_terminal:
        out = max(be, fh)
    else:
        m = cfg.market
        avg = sum(p * asymptotic_slope(c, cfg, memo) for c, p in node.children)
        r = effective_rate(cfg, node.n, node.mu)
        out = max(fh, (m.alpha + m.nu * node.mu + node.lambda_next * avg) / (r + m.alpha - m.theta))
    memo[id(node)] = out
    return out


def asymptote_P(node: StateNode, cfg: ModelConfig) -> float:
    """Limit slope of the running reward, lim M(x)/x."""
    fh = moneys_worth(node, cfg)
    be = beta(cfg, node.n, node.mu)
    r = effective_rate(cfg, node.n, node.mu)
    out = (fh - be) * (cfg.market.drift - r)
    if not node.is_terminal:
        memo: dict = {}
        out += node.lambda_next * sum(p * asymptotic_slope(c, cfg, memo) for c, p in node.children)
    return out


def L_coefficient(node: StateNode, cfg: ModelConfig, memo: Optional[dict] = None) -> float:
    """Slope of the running reward when K = 0."""
    memo = {} if memo is None else memo
    if id(node) in memo:
        return memo[id(node)]
    m = cfg.market
    fh = moneys_worth(node, cfg)
    r = effective_rate(cfg, node.n, node.mu)
    out = (fh - beta(cfg, node.n, node.mu)) * (m.drift - r)
    for c, p in node.children:
        rc = effective_rate(cfg, c.n, c.mu)
        Lc = L_coefficient(c, cfg, memo)
        out += node.lambda_next * p * (moneys_worth(c, cfg) + max(Lc, 0.0) / (rc - m.drift))
    memo[id(node)] = out
    return out


# --- stage building blocks ---------------------------------------------------

@dataclass
class _Stage:
    """Scalars shared by the building blocks of one node."""
    node: StateNode
    cfg: ModelConfig
    r: float
    fh: float
    be: float
    roots: GbmRoots
    xscale: float
    K: float

    @classmethod
    def of(cls, node, cfg):
        r = effective_rate(cfg, node.n, node.mu)
        return cls(node, cfg, r, moneys_worth(node, cfg), beta(cfg, node.n, node.mu),
                   characteristic_roots(cfg.market, r), fee_scale(cfg), fee(cfg, node.n))


def _child_mix(node: StateNode, children: Sequence[StageValue], use_closed_form: bool):
    if node.is_terminal:
        return None, ()
    if children is None or len(children) != len(node.children):
        raise ChildrenUnsolved(f"node {node.label()} needs {len(node.children)} solved children")
    probs = [p for _, p in node.children]
    kids = list(children)

    def vhat(x):
        return sum(p * c(x, use_closed_form) for p, c in zip(probs, kids))

    breaks = sorted({b for c in kids for b in c.thresholds})
    return vhat, tuple(breaks)


def assemble_M(node: StateNode, children: Sequence[StageValue], cfg: ModelConfig,
               use_closed_form: bool = True) -> Callable:
    st = _Stage.of(node, cfg)
    m = cfg.market
    a = st.r * st.fh * st.K
    b = (st.fh - st.be) * (m.drift - st.r)
    vhat, _ = _child_mix(node, children, use_closed_form)
    lam = node.lambda_next

    def M(x):
        x = np.asarray(x, dtype=float)
        out = a + b * x
        if vhat is not None:
            out = out + lam * vhat(x)
        return out

    return M


def compute_w(node: StateNode, children: Sequence[StageValue], cfg: ModelConfig,
              use_closed_form: bool = True, tol: float = 1e-9) -> Callable:
    """w = resolvent of M; affine part exact, child part by quadrature."""
    st = _Stage.of(node, cfg)
    K = st.K
    vhat, breaks = _child_mix(node, children, use_closed_form)
    lam = node.lambda_next

    def w(x):
        x = np.asarray(x, dtype=float)
        out = st.fh * K - (st.fh - st.be) * x
        if vhat is not None and lam > 0:
            out = out + lam * resolvent(cfg.market, st.r, vhat, x, breakpoints=breaks, tol=tol)
        return out

    return w


def dk_transform(st: _Stage, x: np.ndarray, w_vals: np.ndarray):
    """y = F(x) = psi/phi and the obstacle h = -w/phi (scaled by the K scale)."""
    gp, gm = st.roots.gamma_plus, st.roots.gamma_minus
    lx = np.log(np.asarray(x, dtype=float) / st.xscale)
    y = np.exp((gp - gm) * lx)
    h = -w_vals * np.exp(-gm * lx)
    return y, h


def classify_regime(node: StateNode, M_vals: np.ndarray, w_vals: np.ndarray, cfg: ModelConfig,
                    M: Optional[Callable] = None, x_hi: Optional[float] = None) -> tuple[str, list[str]]:
    notes = []
    K = fee(cfg, node.n)
    if K == 0:
        return (K0_NEVER if L_coefficient(node, cfg) > 0 else K0_EVERYWHERE), notes
    P = asymptote_P(node, cfg)
    if K > 0:
        if abs(P) <= AMBIGUOUS_TOL:
            notes.append("ambiguous: P(n,mu) is zero to 1e-12; fell back to the sign of M far out")
            far = float(M(x_hi * 1e3)) if M is not None and x_hi else float(M_vals[-1])
            if far < 0:
                return CASE2, notes
            return (CASE1 if np.all(w_vals > 0) else CASE3), notes
        if P < 0:
            return CASE2, notes
        return (CASE1 if np.all(w_vals > 0) else CASE3), notes
    if np.any(M_vals > 0) or P > 0:
        return CASE4, notes
    return CASE5, notes


# geometry expected from each regime: (gap at the origin, any contact, gap to infinity)
_GEOMETRY = {
    CASE1: (True, False, True),
    CASE2: (True, True, False),
    CASE3: (True, True, True),
    CASE4: (False, True, True),
    CASE5: (False, True, False),
}


class _Obstacle:
    """Pointwise evaluation of h(y) = -w(x)/phi(x) for tangency refinement."""

    def __init__(self, st: _Stage, w: Callable):
        self.st, self.w = st, w
        self.gp, self.gm = st.roots.gamma_plus, st.roots.gamma_minus

    def x_of(self, y):
        return self.st.xscale * np.power(y, 1.0 / (self.gp - self.gm))

    def h(self, y):
        y = np.asarray(y, dtype=float)
        x = self.x_of(y)
        return -self.w(x) * np.power(x / self.st.xscale, -self.gm)

    def h_and_slope(self, y: float):
        step = 1e-4 * y
        pts = y + step * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        hv = self.h(pts)
        d = (hv[0] - 8 * hv[1] + 8 * hv[3] - hv[4]) / (12 * step)
        return float(hv[2]), float(d)


def _bisect_log(fn, lo: float, hi: float, rtol: float = 1e-10, max_iter: int = 200) -> float:
    flo = fn(lo)
    for _ in range(max_iter):
        if hi / lo - 1.0 <= rtol:
            break
        mid = math.sqrt(lo * hi)
        fm = fn(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return math.sqrt(lo * hi)


def _refine(cond, y: np.ndarray, idx: int, notes: list[str], what: str) -> float:
    """Find the sign change of `cond` near grid index idx and bisect it in log y."""
    m = y.size
    lo_i, hi_i = max(idx - 1, 0), min(idx + 1, m - 1)
    vals = {}

    def c(i):
        if i not in vals:
            vals[i] = cond(float(y[i]))
        return vals[i]

    for width in (1, 2, 4, 8, 16):
        lo_i, hi_i = max(idx - width, 0), min(idx + width, m - 1)
        # walk outward from the vertex looking for a bracket
        order = sorted(range(lo_i, hi_i), key=lambda i: abs(i - idx))
        for i in order:
            if np.sign(c(i)) != np.sign(c(i + 1)):
                return _bisect_log(cond, float(y[i]), float(y[i + 1]))
    notes.append(f"{what}: no sign change of the tangency condition near the hull vertex; kept the grid value")
    return float(y[idx])


def _solve_terminal_stage(node, cfg, grid, st) -> StageValue:
    sol = T.solve_terminal(cfg, node.mu)
    x = grid.points
    regime = _TERMINAL_TO_CASE[sol.regime]
    thr = (sol.threshold,) if sol.threshold is not None else ()
    if sol.regime in (T.STOP_BELOW, T.STOP_EVERYWHERE):
        v0 = -sol.f_hat * sol.K
    else:
        v0 = 0.0
    M_vals = cfg.market.price_rate * sol.K + (sol.f_hat - sol.beta) * (cfg.market.drift - sol.rate) * x
    w_vals = sol.f_hat * sol.K - (sol.f_hat - sol.beta) * x
    return StageValue(node=node, regime=regime, thresholds=thr, grid=grid,
                      values=T.value_terminal(sol, x), asymptotic_slope=sol.asymptotic_slope,
                      value_at_zero=v0, closed_form=sol, f_hat=sol.f_hat, K=sol.K,
                      rate=sol.rate, roots=st.roots, M_values=M_vals, w_values=w_vals)


def _solve_k0_closed(node, cfg, grid, st) -> StageValue:
    L = L_coefficient(node, cfg)
    slope = st.fh + max(L, 0.0) / (st.r - cfg.market.drift)
    x = grid.points
    regime = K0_NEVER if L > 0 else K0_EVERYWHERE
    return StageValue(node=node, regime=regime, thresholds=(), grid=grid, values=slope * x,
                      asymptotic_slope=slope, value_at_zero=0.0, closed_form=None, f_hat=st.fh,
                      K=0.0, rate=st.r, roots=st.roots, M_values=L * x,
                      w_values=L * x / (st.r - cfg.market.drift),
                      notes=("closed form for K=0",))


def solve_stage(node: StateNode, children: Optional[Sequence[StageValue]], cfg: ModelConfig,
                grid: WealthGrid, force_majorant: bool = False,
                use_closed_form_children: bool = True) -> StageValue:
    st = _Stage.of(node, cfg)
    K = st.K
    if not force_majorant:
        if node.is_terminal:
            return _solve_terminal_stage(node, cfg, grid, st)
        if K == 0:
            return _solve_k0_closed(node, cfg, grid, st)

    M = assemble_M(node, children, cfg, use_closed_form_children)
    w = compute_w(node, children, cfg, use_closed_form_children)
    notes: list[str] = []
    for attempt in range(MAX_WIDEN + 1):
        res = _majorant_pass(node, cfg, grid, st, M, w, children)
        if res["widen"] is None:
            break
        down, up = res["widen"]
        if attempt == MAX_WIDEN:
            raise GridExhausted(
                f"stopping boundary of node {node.label()} still at the grid edge after {MAX_WIDEN} widenings"
            )
        notes.append(f"grid widened (down={down}, up={up})")
        grid = grid.widened(down, up)
    notes.extend(res["notes"])
    return StageValue(node=node, regime=res["regime"], thresholds=res["thresholds"], grid=grid,
                      values=res["V"], asymptotic_slope=asymptotic_slope(node, cfg),
                      value_at_zero=res["v0"], closed_form=None, f_hat=st.fh, K=K, rate=st.r,
                      roots=st.roots, M_values=res["M"], w_values=res["w"], majorant=res["maj"],
                      w_func=w, M_func=M, notes=tuple(notes), pieces=res["pieces"],
                      xscale=st.xscale)


def _majorant_pass(node, cfg, grid, st, M, w, children):
    x = grid.points
    K = st.K
    notes: list[str] = []
    M_vals = M(x)
    w_vals = w(x)
    y, h = dk_transform(st, x, w_vals)
    maj = concave_majorant(y, h, 0.0)
    regime, cnotes = classify_regime(node, M_vals, w_vals, cfg, M, grid.x_hi)
    notes += cnotes
    runs = maj.contact_runs()
    m = x.size

    geo = (not maj.contact[0], bool(runs), not maj.contact[-1])
    if K == 0:
        expected = {K0_NEVER: (True, False, True), K0_EVERYWHERE: (False, True, False)}[regime]
    else:
        expected = _GEOMETRY[regime]
    widen_down = widen_up = False
    if geo != expected:
        # the stopping boundary lies outside the grid on the side that disagrees
        if expected[1] and not geo[1]:
            widen_up = regime in STOPS_NEAR_INF or regime == CASE3
            widen_down = regime in STOPS_NEAR_ZERO
        else:
            widen_down = geo[0] != expected[0]
            widen_up = geo[2] != expected[2]
        if widen_down or widen_up:
            return {"widen": (widen_down, widen_up)}

    ob = _Obstacle(st, w)
    s_inf = maj.slope_at_infinity
    pieces = []  # (kind, y_left, y_right)
    tang: list[float] = []
    if runs:
        first, last = runs[0][0], runs[-1][1]
        if first > 0:
            def cond0(yy):
                hv, d = ob.h_and_slope(yy)
                return d - hv / yy
            y1 = _refine(cond0, y, first, notes, "origin tangency")
            tang.append(y1)
            pieces.append(("origin", 0.0, y1))
        for (a0, b0), (a1, b1) in zip(runs[:-1], runs[1:]):
            notes.append("interior bitangent taken from hull vertices")
            pieces.append(("chord", float(y[b0]), float(y[a1])))
        if last < m - 1:
            def cond_inf(yy):
                _, d = ob.h_and_slope(yy)
                return d - s_inf
            y2 = _refine(cond_inf, y, last, notes, "upper tangency")
            tang.append(y2)
            pieces.append(("infinity", y2, math.inf))
        # thresholds too close to the grid edges are not trusted
        for yt in tang:
            j = int(np.searchsorted(y, yt))
            if j <= 2:
                widen_down = True
            if j >= m - 3:
                widen_up = True
        if widen_down or widen_up:
            return {"widen": (widen_down, widen_up)}

    # W = w + phi * U(F(x)) built from the refined pieces; zero on contact
    gp, gm = st.roots.gamma_plus, st.roots.gamma_minus
    lx = np.log(x / st.xscale)
    phi = np.exp(gm * lx)
    W = np.zeros_like(x)
    if not runs:
        W = w_vals.copy()
    coeffs = []
    for kind, yl, yr in pieces:
        if kind == "origin":
            c = float(ob.h(yr)) / yr
            sel = y < yr
            W[sel] = w_vals[sel] + c * np.exp(gp * lx[sel])
            coeffs.append((kind, yl, yr, c, 0.0))
        elif kind == "infinity":
            h2 = float(ob.h(yl))
            sel = y > yl
            W[sel] = w_vals[sel] + phi[sel] * (h2 + s_inf * (y[sel] - yl))
            coeffs.append((kind, yl, yr, h2, s_inf))
        else:
            hl, hr = float(ob.h(yl)), float(ob.h(yr))
            sel = (y > yl) & (y < yr)
            W[sel] = w_vals[sel] + phi[sel] * (hl + (y[sel] - yl) * (hr - hl) / (yr - yl))
            coeffs.append((kind, yl, yr, hl, (hr - hl) / (yr - yl)))
    W = np.maximum(W, 0.0)
    V = W + st.fh * (x - K)

    xt = tuple(float(ob.x_of(t)) for t in tang)
    if regime in (CASE2, CASE4):
        thresholds = xt[:1]
    elif regime == CASE3:
        thresholds = tuple(sorted(xt[:2]))
    else:
        thresholds = ()

    if regime in STOPS_NEAR_ZERO:
        v0 = -st.fh * K
    else:
        v0 = float(M(np.array([0.0]))[0]) / st.r - st.fh * K
    maj = MajorantResult(maj.y_grid, maj.h, maj.U, maj.contact, tuple(tang), maj.vertices, s_inf)
    return {"widen": None, "regime": regime, "thresholds": thresholds, "V": V, "v0": v0,
            "M": M_vals, "w": w_vals, "maj": maj, "notes": notes, "pieces": tuple(coeffs)}


def solve_all(cfg: ModelConfig, grid: GridSpec | WealthGrid | None = None,
              use_closed_form_children: bool = True, force_majorant: bool = False) -> Solution:
    cfg = validate_config(cfg)
    tree = enumerate_states(cfg)
    if grid is None:
        grid = GridSpec()
    wg = grid.build(fee_scale(cfg)) if isinstance(grid, GridSpec) else grid
    solved: dict[int, StageValue] = {}
    for n in range(tree.N, -1, -1):
        for node in tree.stage(n):
            kids = [solved[c.index] for c, _ in node.children]
            solved[node.index] = solve_stage(node, kids, cfg, wg,
                                             force_majorant=force_majorant and not node.is_terminal,
                                             use_closed_form_children=use_closed_form_children)
            log.debug("solved %s: %s %s", node.label(), solved[node.index].regime,
                      solved[node.index].thresholds)
    return Solution(cfg, tree, tuple(solved[i] for i in range(len(tree))))


def value_at(sol: Solution, node, x):
    return sol[node](x)
