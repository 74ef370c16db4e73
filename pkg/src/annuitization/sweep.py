"""One-parameter sensitivity sweeps of the root threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import AnnuitizationError, InvalidParam
from .model import KernelEntry, ModelConfig, TableKernel, validate_config
from .solver import CASE1, GridSpec, solve_all

PARAMETERS = ("delta_mu_hat", "p", "lambda1", "nu", "K", "sigma")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    output: Optional[str] = None

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise InvalidParam(f"unknown sweep parameter {self.parameter!r}; choose from {', '.join(PARAMETERS)}")
        if not self.values:
            raise InvalidParam("sweep needs at least one value")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidParam("sweep values must be finite")


@dataclass(frozen=True)
class SweepRow:
    value: float
    threshold: float  # inf when the root never stops
    regime: str
    thresholds: tuple[float, ...] = ()
    error: str = ""


def _with_stay_probability(cfg: ModelConfig, p: float) -> ModelConfig:
    """Set the stay probability of every stage-0 two-point kernel entry."""
    kern = cfg.pdmp.kernel
    if not isinstance(kern, TableKernel):
        raise InvalidParam("the p sweep needs a table kernel")
    if not 0 <= p <= 1:
        raise InvalidParam("p must lie in [0, 1]")
    entries = []
    for e in kern.entries:
        if e.from_stage != 0:
            entries.append(e)
            continue
        src = cfg.pdmp.mu0 if e.from_mu is None else e.from_mu
        stay = [z for z, _ in e.targets if math.isclose(z, src, rel_tol=1e-9)]
        move = [z for z, _ in e.targets if not math.isclose(z, src, rel_tol=1e-9)]
        if len(stay) > 1 or len(move) > 1 or not move:
            raise InvalidParam("the p sweep needs a stay-or-jump kernel at stage 0")
        targets = tuple((z, q) for z, q in ((src, p), (move[0], 1.0 - p)) if q > 0)
        entries.append(KernelEntry(0, e.from_mu, targets))
    return cfg.with_pdmp(kernel=TableKernel(tuple(entries)), mu_min=None, mu_max=None)


def apply(cfg: ModelConfig, parameter: str, value: float, base_mu_hat: Optional[float] = None) -> ModelConfig:
    if parameter == "delta_mu_hat":
        mh = cfg.market.mu_hat if base_mu_hat is None else base_mu_hat
        return cfg.with_market(mu_hat=mh * (1.0 + value))
    if parameter == "p":
        return _with_stay_probability(cfg, value)
    if parameter == "lambda1":
        if cfg.pdmp.N < 1:
            raise InvalidParam("lambda1 sweep needs at least one jump")
        return cfg.with_pdmp(lambdas=(value,) + tuple(cfg.pdmp.lambdas[1:]))
    return cfg.with_market(**{parameter: value})


def run_sweep(cfg: ModelConfig, spec: SweepSpec, grid: Optional[GridSpec] = None) -> list[SweepRow]:
    """Re-solve per value; failures become rows tagged FAILED and the sweep continues."""
    rows = []
    for v in spec.values:
        try:
            c = validate_config(apply(cfg, spec.parameter, v))
            root = solve_all(c, grid).root
        except AnnuitizationError as exc:
            rows.append(SweepRow(v, math.nan, "FAILED", (), f"{type(exc).__name__}: {exc}"))
            continue
        if root.thresholds:
            b = root.thresholds[0]
        else:
            b = math.inf if root.regime == CASE1 else math.nan
        rows.append(SweepRow(v, b, root.regime, root.thresholds))
    return rows


def strictly_monotone(values: Sequence[float], increasing: bool) -> bool:
    pairs = zip(values[:-1], values[1:])
    return all((b > a) if increasing else (b < a) for a, b in pairs)


def is_u_shaped(values: Sequence[float]) -> bool:
    """Strict decrease to an interior minimum, then strict increase."""
    if len(values) < 3 or not all(math.isfinite(v) for v in values):
        return False
    k = min(range(len(values)), key=lambda i: values[i])
    if k == 0 or k == len(values) - 1:
        return False
    return strictly_monotone(values[:k + 1], False) and strictly_monotone(values[k:], True)
