"""Smallest nonnegative concave majorant of a sampled obstacle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UnboundedValue

CONTACT_RTOL = 1e-10


@dataclass(frozen=True)
class MajorantResult:
    y_grid: np.ndarray
    h: np.ndarray
    U: np.ndarray
    contact: np.ndarray
    tangency_points: tuple[float, ...]
    vertices: np.ndarray = field(repr=False)  # hull vertex indices into the grid, -1 is the origin
    slope_at_infinity: float = 0.0

    def contact_runs(self) -> list[tuple[int, int]]:
        """Inclusive index ranges where U touches the obstacle."""
        return _runs(self.contact)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    out = []
    i, m = 0, len(mask)
    while i < m:
        if mask[i]:
            j = i
            while j + 1 < m and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def concave_majorant(y_grid, h, slope_at_infinity: float = 0.0) -> MajorantResult:
    y = np.asarray(y_grid, dtype=float)
    h = np.asarray(h, dtype=float)
    if not math.isfinite(slope_at_infinity):
        raise UnboundedValue("obstacle grows faster than linearly in the transformed scale")
    if np.any(np.diff(y) <= 0):
        raise ValueError("y_grid must be strictly increasing")
    hp = np.maximum(h, 0.0)

    # normalise so the cross products stay well scaled
    ys = y[-1]
    hs = max(hp.max(), 1e-300)
    px = np.concatenate([[0.0], y / ys])
    py = np.concatenate([[0.0], hp / hs])

    hull: list[int] = []
    for i in range(px.size):
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            if _cross(px[o], py[o], px[a], py[a], px[i], py[i]) >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    # a nonnegative concave function on [0, inf) is nondecreasing; it also must
    # dominate the ray leaving the last point with slope_at_infinity
    s_inf = max(slope_at_infinity, 0.0) * ys / hs
    while len(hull) >= 2:
        o, a = hull[-2], hull[-1]
        if (py[a] - py[o]) < s_inf * (px[a] - px[o]):
            hull.pop()
        else:
            break

    hv = np.asarray(hull)
    vx, vy = px[hv], py[hv]
    U = np.interp(px[1:], vx, vy)
    beyond = px[1:] > vx[-1]
    U[beyond] = vy[-1] + s_inf * (px[1:][beyond] - vx[-1])
    U *= hs
    contact = (U - h) <= CONTACT_RTOL * (np.abs(U) + np.abs(h)) + 1e-300
    contact &= h >= 0
    tang = []
    for a, b in _runs(contact):
        if a > 0:
            tang.append(float(y[a]))
        if b < y.size - 1:
            tang.append(float(y[b]))
    return MajorantResult(y, h, U, contact, tuple(tang), hv - 1, slope_at_infinity)
