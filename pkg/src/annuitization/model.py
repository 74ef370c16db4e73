"""Model parameters, validation and the scalar quantities shared by every stage."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import IllPosed, InvalidDistribution, InvalidParam

# relative tolerance used to merge equal mortality values
MU_RTOL = 1e-12
PROB_TOL = 1e-9

Distribution = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class MarketParams:
    theta: float
    alpha: float
    sigma: float
    rho: float
    rho_hat: float
    mu_hat: float
    K: float
    nu: float

    @property
    def drift(self) -> float:
        return self.theta - self.alpha

    @property
    def price_rate(self) -> float:
        """rho_hat + mu_hat, the insurer's annuity pricing rate."""
        return self.rho_hat + self.mu_hat


@dataclass(frozen=True)
class KernelEntry:
    from_stage: int
    from_mu: Optional[float]  # None matches any mortality at that stage
    targets: Distribution


@dataclass(frozen=True)
class TableKernel:
    """Finite post-jump distributions looked up by (stage, current mu)."""

    entries: tuple[KernelEntry, ...]

    def __call__(self, n: int, mu: float) -> Distribution:
        wildcard = None
        for e in self.entries:
            if e.from_stage != n:
                continue
            if e.from_mu is None:
                wildcard = e
            elif math.isclose(e.from_mu, mu, rel_tol=1e-9, abs_tol=0.0):
                return e.targets
        if wildcard is not None:
            return wildcard.targets
        raise InvalidDistribution(f"kernel has no entry for stage {n}, mu={mu!r}")

    def scaled(self, factor: float) -> "TableKernel":
        out = []
        for e in self.entries:
            fm = None if e.from_mu is None else e.from_mu * factor
            out.append(KernelEntry(e.from_stage, fm, tuple((z * factor, p) for z, p in e.targets)))
        return TableKernel(tuple(out))

    def to_list(self) -> list[dict]:
        return [
            {
                "from_stage": e.from_stage,
                "from_mu": e.from_mu,
                "targets": [{"mu": z, "prob": p} for z, p in e.targets],
            }
            for e in self.entries
        ]


def two_point_kernel(stage: int, mu: float, p_stay: float, up_factor: float) -> TableKernel:
    """Mortality stays at mu with probability p_stay, else jumps to up_factor*mu."""
    targets = ((mu, p_stay), (up_factor * mu, 1.0 - p_stay))
    targets = tuple((z, p) for z, p in targets if p > 0)
    return TableKernel((KernelEntry(stage, mu, targets),))


@dataclass(frozen=True)
class PdmpSpec:
    N: int
    lambdas: tuple[float, ...]
    mu0: float
    kernel: Callable[[int, float], Sequence[tuple[float, float]]] = field(compare=False)
    mu_min: Optional[float] = None
    mu_max: Optional[float] = None
    # optional fee per stage 0..N overriding market.K (fees that change after a shock)
    stage_fees: Optional[tuple[float, ...]] = None

    def lam(self, n: int) -> float:
        """Intensity of the jump out of stage n, i.e. lambda_{n+1}."""
        return self.lambdas[n] if n < self.N else 0.0


@dataclass(frozen=True)
class ModelConfig:
    market: MarketParams
    pdmp: PdmpSpec

    def with_market(self, **changes) -> "ModelConfig":
        return replace(self, market=replace(self.market, **changes))

    def with_pdmp(self, **changes) -> "ModelConfig":
        return replace(self, pdmp=replace(self.pdmp, **changes))


def _kernel_dist(pdmp: PdmpSpec, n: int, mu: float) -> Distribution:
    dist = tuple((float(z), float(p)) for z, p in pdmp.kernel(n, mu))
    if not dist:
        raise InvalidDistribution(f"empty kernel distribution at stage {n}")
    for z, p in dist:
        if not (math.isfinite(z) and math.isfinite(p)):
            raise InvalidDistribution("non-finite kernel entry")
        if p <= 0:
            raise InvalidDistribution(f"kernel probability {p} is not positive")
        if z <= 0:
            raise InvalidParam(f"post-jump mortality {z} must be positive")
    total = sum(p for _, p in dist)
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidDistribution(f"kernel probabilities at stage {n} sum to {total:.12g}, not 1")
    return dist


def merge_mu(values: Sequence[float]) -> list[float]:
    """Sorted unique mortality values, merging those equal up to MU_RTOL."""
    out: list[float] = []
    for v in sorted(values):
        if out and abs(v - out[-1]) <= MU_RTOL * max(abs(v), abs(out[-1])):
            continue
        out.append(v)
    return out


def reachable_mu(pdmp: PdmpSpec, cap: int = 100_000) -> list[list[float]]:
    """Distinct reachable mortality values per stage."""
    stages = [[pdmp.mu0]]
    count = 1
    for n in range(pdmp.N):
        nxt = []
        for mu in stages[-1]:
            nxt.extend(z for z, _ in _kernel_dist(pdmp, n, mu))
        stages.append(merge_mu(nxt))
        count += len(stages[-1])
        if count > cap:
            from .errors import TreeTooLarge

            raise TreeTooLarge(f"more than {cap} reachable states")
    return stages


def validate_config(cfg: ModelConfig) -> ModelConfig:
    """Check every invariant and return the config with mu_min/mu_max taken from the tree."""
    m, d = cfg.market, cfg.pdmp
    for name in ("theta", "alpha", "sigma", "rho", "rho_hat", "mu_hat", "K", "nu"):
        if not math.isfinite(getattr(m, name)):
            raise InvalidParam(f"{name} must be finite")
    if m.sigma <= 0:
        raise InvalidParam("sigma must be positive")
    if m.rho <= 0:
        raise InvalidParam("rho must be positive")
    if m.alpha < 0:
        raise InvalidParam("alpha must be nonnegative")
    if not 0 <= m.nu <= 1:
        raise InvalidParam("nu must lie in [0, 1]")
    if m.rho_hat <= 0 or m.mu_hat <= 0:
        raise InvalidParam("rho_hat and mu_hat must be positive")
    if not isinstance(d.N, int) or d.N < 0:
        raise InvalidParam("N must be a nonnegative integer")
    if len(d.lambdas) != d.N:
        raise InvalidParam(f"expected {d.N} jump intensities, got {len(d.lambdas)}")
    if any((not math.isfinite(l)) or l < 0 for l in d.lambdas):
        raise InvalidParam("jump intensities must be finite and nonnegative")
    if not (math.isfinite(d.mu0) and d.mu0 > 0):
        raise InvalidParam("mu0 must be positive")

    if d.stage_fees is not None:
        if len(d.stage_fees) != d.N + 1:
            raise InvalidParam(f"stage_fees needs {d.N + 1} entries")
        if not all(math.isfinite(k) for k in d.stage_fees):
            raise InvalidParam("stage fees must be finite")

    stages = reachable_mu(d)
    all_mu = [mu for s in stages for mu in s]
    mu_min, mu_max = min(all_mu), max(all_mu)
    slack = m.theta - m.alpha - m.rho - mu_min
    if slack >= 0:
        raise IllPosed(
            "well-posedness assumption violated: theta - alpha - rho - mu_min = "
            f"{slack:.6g} >= 0, the value function is infinite"
        )
    if d.mu_min == mu_min and d.mu_max == mu_max:
        return cfg
    return cfg.with_pdmp(mu_min=mu_min, mu_max=mu_max)


def fee(cfg: ModelConfig, n: int) -> float:
    """Annuitization fee charged at stage n."""
    if cfg.pdmp.stage_fees is not None:
        return cfg.pdmp.stage_fees[n]
    return cfg.market.K


def fee_scale(cfg: ModelConfig) -> float:
    fees = cfg.pdmp.stage_fees or (cfg.market.K,)
    return max(max(abs(k) for k in fees), 1.0)


def effective_rate(cfg: ModelConfig, n: int, mu: float) -> float:
    """r_n(mu) = rho + mu + lambda_{n+1}."""
    return cfg.market.rho + mu + cfg.pdmp.lam(n)


def beta(cfg: ModelConfig, n: int, mu: float) -> float:
    m = cfg.market
    return (m.alpha + m.nu * mu) / (effective_rate(cfg, n, mu) + m.alpha - m.theta)


# --- serialization -----------------------------------------------------------

MARKET_KEYS = ("theta", "alpha", "sigma", "rho", "rho_hat", "mu_hat", "K", "nu")


def config_from_dict(data: dict) -> ModelConfig:
    try:
        market = MarketParams(**{k: float(data[k]) for k in MARKET_KEYS})
        N = int(data["N"])
        lambdas = tuple(float(v) for v in data.get("lambdas", []))
        mu0 = float(data["mu0"])
        entries = []
        for e in data.get("kernel", []):
            fm = e.get("from_mu")
            entries.append(
                KernelEntry(
                    int(e["from_stage"]),
                    None if fm is None else float(fm),
                    tuple((float(t["mu"]), float(t["prob"])) for t in e["targets"]),
                )
            )
        fees = data.get("stage_fees")
        fees = None if fees is None else tuple(float(v) for v in fees)
    except KeyError as exc:
        raise InvalidParam(f"missing config field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidParam(f"malformed config: {exc}") from None
    return ModelConfig(market, PdmpSpec(N, lambdas, mu0, TableKernel(tuple(entries)), stage_fees=fees))


def config_to_dict(cfg: ModelConfig) -> dict:
    out = {k: getattr(cfg.market, k) for k in MARKET_KEYS}
    out["N"] = cfg.pdmp.N
    out["lambdas"] = list(cfg.pdmp.lambdas)
    out["mu0"] = cfg.pdmp.mu0
    kernel = cfg.pdmp.kernel
    out["kernel"] = kernel.to_list() if isinstance(kernel, TableKernel) else []
    if cfg.pdmp.stage_fees is not None:
        out["stage_fees"] = list(cfg.pdmp.stage_fees)
    return out


def load_config(path: str | Path) -> ModelConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))
