"""Numba kernels for path simulation and policy evaluation.

Random numbers come from a counter-based hash keyed by (seed, path, purpose,
position), so every policy evaluated with the same seed sees the same
Brownian path and the same mortality history (common random numbers).

The Brownian path lives on the payoff grid t_i = i*dt and is generated
top-down: a random walk over blocks of B steps, then dyadic midpoints. A block
is only refined when the Brownian bridge between its endpoints could reach
the stopping set with probability above `eps`; otherwise its running payoff is
integrated against the conditional (bridge) mean.
"""
import math
import warnings

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# an old system TBB is skipped in favour of another threading layer; nothing to act on
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)

NEVER, IMMEDIATELY, ABOVE, BELOW, INSIDE = 0, 1, 2, 3, 4

_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)

TAG_TOP = np.uint64(1)
TAG_MID = np.uint64(2)
TAG_OFF = np.uint64(3)
TAG_JUMP = np.uint64(4)
TAG_KERN = np.uint64(5)
TAG_DEATH = np.uint64(6)

_GLX, _GLW = np.polynomial.legendre.leggauss(16)


@njit(inline="always", cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def _key(a, b):
    return _mix(a ^ _mix(b * _GOLD + _ONE))


@njit(inline="always", cache=True)
def _u01(h):
    return (np.float64(h >> _S11) + 0.5) * (1.0 / 9007199254740992.0)


@njit(inline="always", cache=True)
def uniform(pk, tag, idx):
    return _u01(_key(_key(pk, tag), np.uint64(idx)))


@njit(inline="always", cache=True)
def normal(pk, tag, idx):
    h1 = _key(_key(pk, tag), np.uint64(idx))
    h2 = _mix(h1 ^ _GOLD)
    u1 = _u01(h1)
    u2 = _u01(h2)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(inline="always", cache=True)
def path_key(seed, p, antithetic):
    if antithetic:
        return _key(np.uint64(seed), np.uint64(p // 2)), 1.0 - 2.0 * (p % 2)
    return _key(np.uint64(seed), np.uint64(p)), 1.0


# --- mortality history ---------------------------------------------------------

@njit(cache=True)
def sample_mortality(pk, k0, horizon, lam, child_start, child_count, child_idx, child_cum,
                     seg_node, seg_t):
    """Fill stage nodes and their entry times; returns the number of segments."""
    k = k0
    seg_node[0] = k0
    seg_t[0] = 0.0
    t = 0.0
    j = 0
    while lam[k] > 0.0 and j + 1 < seg_node.size:
        t += -math.log(uniform(pk, TAG_JUMP, j)) / lam[k]
        if t >= horizon:
            break
        u = uniform(pk, TAG_KERN, j)
        c = child_start[k]
        nxt = child_idx[c + child_count[k] - 1]
        for q in range(child_count[k]):
            if u < child_cum[c + q]:
                nxt = child_idx[c + q]
                break
        j += 1
        k = nxt
        seg_node[j] = k
        seg_t[j] = t
    return j + 1


@njit(cache=True)
def death_time(pk, nseg, seg_node, seg_t, mu):
    theta = -math.log(uniform(pk, TAG_DEATH, 0))
    acc = 0.0
    for s in range(nseg):
        k = seg_node[s]
        t0 = seg_t[s]
        if s + 1 < nseg:
            inc = mu[k] * (seg_t[s + 1] - t0)
            if acc + inc >= theta:
                return t0 + (theta - acc) / mu[k]
            acc += inc
        else:
            return t0 + (theta - acc) / mu[k]
    return np.inf


@njit(parallel=True, cache=True)
def mortality_paths(seed, n_paths, k0, rho, mu, lam, child_start, child_count, child_idx, child_cum,
                    max_seg):
    """Death times and realised subjective annuity integrals int e^{-rho u - Lambda_u} du."""
    tau = np.empty(n_paths)
    ann = np.empty(n_paths)
    for p in prange(n_paths):
        seg_node = np.empty(max_seg, np.int64)
        seg_t = np.empty(max_seg)
        pk = _key(np.uint64(seed), np.uint64(p))
        nseg = sample_mortality(pk, k0, np.inf, lam, child_start, child_count, child_idx, child_cum,
                                seg_node, seg_t)
        tau[p] = death_time(pk, nseg, seg_node, seg_t, mu)
        a = 0.0
        logd = 0.0
        for s in range(nseg):
            k = seg_node[s]
            r = rho + mu[k]
            if s + 1 < nseg:
                L = seg_t[s + 1] - seg_t[s]
                a += math.exp(-logd) * (-math.expm1(-r * L)) / r
                logd += r * L
            else:
                a += math.exp(-logd) / r
        ann[p] = a
    return tau, ann


# --- Brownian hierarchy ----------------------------------------------------------

@njit(cache=True)
def top_walk(pk, sgn, n_top, B, dt, out):
    out[0] = 0.0
    sd = math.sqrt(B * dt)
    for j in range(1, n_top + 1):
        out[j] = out[j - 1] + sgn * sd * normal(pk, TAG_TOP, j)


@njit(inline="always", cache=True)
def _mid_id(a, lg):
    return a * 32 + lg


@njit(cache=True)
def w_at(i, pk, sgn, topW, B, lgB, dt):
    j = i // B
    if i == j * B:
        return topW[j]
    a = j * B
    m = B
    lg = lgB
    Wa = topW[j]
    Wb = topW[j + 1]
    while True:
        half = m // 2
        mid = a + half
        Wm = 0.5 * (Wa + Wb) + sgn * math.sqrt(m * dt * 0.25) * normal(pk, TAG_MID, _mid_id(a, lg))
        if i == mid:
            return Wm
        if i < mid:
            Wb = Wm
        else:
            a = mid
            Wa = Wm
        m = half
        lg -= 1


@njit(cache=True)
def fill_grid(seed, p, antithetic, n_steps, B, lgB, dt):
    """Brownian values at every grid index 0..n_steps (n_steps a multiple of B)."""
    pk, sgn = path_key(seed, p, antithetic)
    n_top = n_steps // B
    topW = np.empty(n_top + 1)
    top_walk(pk, sgn, n_top, B, dt, topW)
    W = np.empty(n_steps + 1)
    W[0] = 0.0
    for j in range(n_top):
        a0 = j * B
        W[a0] = topW[j]
        W[a0 + B] = topW[j + 1]
        m = B
        lg = lgB
        while m > 1:
            half = m // 2
            for a in range(a0, a0 + B, m):
                W[a + half] = 0.5 * (W[a] + W[a + m]) + sgn * math.sqrt(m * dt * 0.25) * normal(
                    pk, TAG_MID, _mid_id(a, lg))
            m = half
            lg -= 1
    return W


@njit(cache=True)
def bridge_point(s, t_left, W_left, t_right, W_right, pk, sgn, event):
    span = t_right - t_left
    frac = (s - t_left) / span
    sd = math.sqrt(max((s - t_left) * (t_right - s) / span, 0.0))
    return W_left + frac * (W_right - W_left) + sgn * sd * normal(pk, TAG_OFF, event)


@njit(cache=True)
def path_events(seed, p, antithetic, k0, horizon, mu, lam, child_start, child_count, child_idx,
                child_cum, max_seg):
    pk, _ = path_key(seed, p, antithetic)
    seg_node = np.empty(max_seg, np.int64)
    seg_t = np.empty(max_seg)
    nseg = sample_mortality(pk, k0, horizon, lam, child_start, child_count, child_idx, child_cum,
                            seg_node, seg_t)
    td = death_time(pk, nseg, seg_node, seg_t, mu)
    return seg_node[:nseg].copy(), seg_t[:nseg].copy(), td


# --- policy evaluation -----------------------------------------------------------

@njit(inline="always", cache=True)
def _trig(rt, b1, b2, lx):
    if rt == NEVER:
        return False
    if rt == IMMEDIATELY:
        return True
    if rt == ABOVE:
        return lx >= b1
    if rt == BELOW:
        return lx <= b1
    return lx >= b1 and lx <= b2


@njit(inline="always", cache=True)
def _cross_prob(rt, b1, b2, la, lb, s2T):
    if rt == NEVER:
        return 0.0
    if rt == IMMEDIATELY:
        return 1.0
    if rt == ABOVE:
        return math.exp(-2.0 * (b1 - la) * (b1 - lb) / s2T)
    if rt == BELOW:
        return math.exp(-2.0 * (la - b1) * (lb - b1) / s2T)
    if la < b1 and lb < b1:
        return math.exp(-2.0 * (b1 - la) * (b1 - lb) / s2T)
    if la > b2 and lb > b2:
        return math.exp(-2.0 * (la - b2) * (lb - b2) / s2T)
    return 1.0


@njit(cache=True)
def _one_path(p, seed, antithetic, lx0, k0, mu, lam, fhat, child_start, child_count, child_idx,
              child_cum, rtype, rb1, rb2, rho, alpha, nu, sigma, mdrift, Kn, price, raw, dt, B, lgB,
              n_steps, eps, topW, seg_node, seg_t, stack_a, stack_m, stack_lg, stack_wa, stack_wb):
    pk, sgn = path_key(seed, p, antithetic)
    horizon = n_steps * dt
    nseg = sample_mortality(pk, k0, horizon, lam, child_start, child_count, child_idx, child_cum,
                            seg_node, seg_t)
    td = np.inf
    if raw:
        td = death_time(pk, nseg, seg_node, seg_t, mu)
    top_walk(pk, sgn, n_steps // B, B, dt, topW)
    s2 = sigma * sigma

    pay = 0.0
    A = 0.0          # log discount accumulated so far
    W_cur = 0.0
    lx = lx0
    for sidx in range(nseg):
        k = seg_node[sidx]
        s0 = seg_t[sidx]
        if sidx + 1 < nseg:
            s1 = seg_t[sidx + 1]
            ev = 1
        else:
            s1 = horizon
            ev = 0
        if raw and td < s1:
            s1 = td
            ev = 2
        if raw:
            rate = rho
            coef = alpha
        else:
            rate = rho + mu[k]
            coef = alpha + nu * mu[k]
        rt = rtype[k]
        b1 = rb1[k]
        b2 = rb2[k]
        A0 = A - rate * s0  # discount at time t is exp(-(A0 + rate t)) inside this segment

        # entry check at the segment start
        if _trig(rt, b1, b2, lx):
            return pay + _terminal(raw, A, fhat[k], lx, Kn[k], price, rho, s0, td), s0

        i0 = int(math.ceil(s0 / dt - 1e-9))
        i1 = int(math.floor(s1 / dt + 1e-9))
        if i1 > n_steps:
            i1 = n_steps
        if i0 > i1:
            # the whole segment sits inside one grid interval
            i = int(math.floor(s0 / dt))
            Wr = w_at(i + 1, pk, sgn, topW, B, lgB, dt)
            W1 = bridge_point(s1, s0, W_cur, (i + 1) * dt, Wr, pk, sgn, sidx + 1)
            lx1 = lx0 + mdrift * s1 + sigma * W1
            pay += 0.5 * coef * (math.exp(-(A0 + rate * s0) + lx) + math.exp(-(A0 + rate * s1) + lx1)) * (s1 - s0)
            W_cur, lx = W1, lx1
        else:
            t_i0 = i0 * dt
            W_i0 = w_at(i0, pk, sgn, topW, B, lgB, dt)
            if t_i0 > s0 + 1e-12:
                lxi = lx0 + mdrift * t_i0 + sigma * W_i0
                pay += 0.5 * coef * (math.exp(-(A0 + rate * s0) + lx) + math.exp(-(A0 + rate * t_i0) + lxi)) * (t_i0 - s0)
                if _trig(rt, b1, b2, lxi):
                    return pay + _terminal(raw, A0 + rate * t_i0, fhat[k], lxi, Kn[k], price, rho, t_i0, td), t_i0
            # walk the grid range [i0, i1] through the dyadic hierarchy
            if i1 > i0:
                for jj in range(i0 // B, (i1 - 1) // B + 1):
                    sp = 0
                    stack_a[0] = jj * B
                    stack_m[0] = B
                    stack_lg[0] = lgB
                    stack_wa[0] = topW[jj]
                    stack_wb[0] = topW[jj + 1]
                    sp = 1
                    while sp > 0:
                        sp -= 1
                        a = stack_a[sp]
                        m = stack_m[sp]
                        lg = stack_lg[sp]
                        Wa = stack_wa[sp]
                        Wb = stack_wb[sp]
                        b = a + m
                        if b <= i0 or a >= i1:
                            continue
                        inside = a >= i0 and b <= i1
                        if inside:
                            ta = a * dt
                            tb = b * dt
                            la = lx0 + mdrift * ta + sigma * Wa
                            lb = lx0 + mdrift * tb + sigma * Wb
                            hit_b = _trig(rt, b1, b2, lb)
                            if m == 1:
                                pay += 0.5 * coef * (math.exp(-(A0 + rate * ta) + la) + math.exp(-(A0 + rate * tb) + lb)) * dt
                                if hit_b:
                                    return pay + _terminal(raw, A0 + rate * tb, fhat[k], lb, Kn[k], price, rho, tb, td), tb
                                continue
                            if not hit_b:
                                T = m * dt
                                if _cross_prob(rt, b1, b2, la, lb, s2 * T) < eps:
                                    # integrate the bridge mean of the running payoff
                                    acc = 0.0
                                    for q in range(_GLX.size):
                                        s = 0.5 * T * (_GLX[q] + 1.0)
                                        e = -(A0 + rate * (ta + s)) + la + (lb - la) * s / T + 0.5 * s2 * s * (T - s) / T
                                        acc += _GLW[q] * math.exp(e)
                                    pay += coef * 0.5 * T * acc
                                    continue
                        half = m // 2
                        mid = a + half
                        Wm = 0.5 * (Wa + Wb) + sgn * math.sqrt(m * dt * 0.25) * normal(pk, TAG_MID, _mid_id(a, lg))
                        stack_a[sp] = mid
                        stack_m[sp] = half
                        stack_lg[sp] = lg - 1
                        stack_wa[sp] = Wm
                        stack_wb[sp] = Wb
                        sp += 1
                        stack_a[sp] = a
                        stack_m[sp] = half
                        stack_lg[sp] = lg - 1
                        stack_wa[sp] = Wa
                        stack_wb[sp] = Wm
                        sp += 1
            t_i1 = i1 * dt
            W_i1 = w_at(i1, pk, sgn, topW, B, lgB, dt)
            lx = lx0 + mdrift * t_i1 + sigma * W_i1
            W_cur = W_i1
            if s1 > t_i1 + 1e-12:
                Wr = w_at(i1 + 1, pk, sgn, topW, B, lgB, dt) if i1 < n_steps else W_i1
                if i1 < n_steps:
                    W1 = bridge_point(s1, t_i1, W_i1, (i1 + 1) * dt, Wr, pk, sgn, sidx + 1)
                else:
                    W1 = W_i1
                lx1 = lx0 + mdrift * s1 + sigma * W1
                pay += 0.5 * coef * (math.exp(-(A0 + rate * t_i1) + lx) + math.exp(-(A0 + rate * s1) + lx1)) * (s1 - t_i1)
                W_cur, lx = W1, lx1
        A = A0 + rate * s1
        if ev == 2:
            # death before annuitization: bequest
            return pay + nu * math.exp(-rho * s1 + lx), -1.0
        if ev == 0:
            return pay, -1.0
    return pay, -1.0


@njit(inline="always", cache=True)
def _terminal(raw, A, fh, lx, K, price, rho, t, td):
    x = math.exp(lx)
    if raw:
        # annuity paid at rate (x-K)*price until death, discounted at rho
        return (x - K) * price * (math.exp(-rho * t) - math.exp(-rho * td)) / rho
    return math.exp(-A) * fh * (x - K)


@njit(parallel=True, cache=True)
def evaluate_paths(seed, n_paths, antithetic, x0, k0, mu, lam, fhat, child_start, child_count,
                   child_idx, child_cum, rtype, rb1, rb2, rho, alpha, nu, sigma, drift, Kn, price,
                   raw, dt, B, lgB, n_steps, eps, max_seg):
    pay = np.empty(n_paths)
    tau = np.empty(n_paths)
    mdrift = drift - 0.5 * sigma * sigma
    lx0 = math.log(x0) if x0 > 0 else -np.inf
    for p in prange(n_paths):
        topW = np.empty(n_steps // B + 1)
        seg_node = np.empty(max_seg, np.int64)
        seg_t = np.empty(max_seg)
        depth = lgB + 4
        stack_a = np.empty(2 * depth, np.int64)
        stack_m = np.empty(2 * depth, np.int64)
        stack_lg = np.empty(2 * depth, np.int64)
        stack_wa = np.empty(2 * depth)
        stack_wb = np.empty(2 * depth)
        v, t = _one_path(p, seed, antithetic, lx0, k0, mu, lam, fhat, child_start, child_count,
                         child_idx, child_cum, rtype, rb1, rb2, rho, alpha, nu, sigma, mdrift, Kn,
                         price, raw, dt, B, lgB, n_steps, eps, topW, seg_node, seg_t, stack_a,
                         stack_m, stack_lg, stack_wa, stack_wb)
        pay[p] = v
        tau[p] = t
    return pay, tau
