import pytest

from annuitization.model import MarketParams, ModelConfig, PdmpSpec, two_point_kernel, validate_config
from annuitization.montecarlo import SimConfig
from annuitization.scenarios import MU0, NEGATIVE_FEE, POSITIVE_FEE, health_shock_config
from annuitization.solver import solve_all

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def report(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[criterion])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def small_config(K=1500.0, nu=0.35, N=1, sigma=0.152952, **kw) -> ModelConfig:
    m = dict(theta=0.087858, alpha=0.0615, sigma=sigma, rho=0.0404, rho_hat=0.0606, mu_hat=0.061667,
             K=K, nu=nu)
    m.update(kw)
    if N == 0:
        return ModelConfig(MarketParams(**m), PdmpSpec(0, (), MU0, two_point_kernel(0, MU0, 1.0, 1.0)))
    return ModelConfig(MarketParams(**m), PdmpSpec(1, (0.1,), MU0, two_point_kernel(0, MU0, 0.2, 2.0)))


@pytest.fixture(scope="session")
def pos_cfg():
    return validate_config(health_shock_config(**POSITIVE_FEE))


@pytest.fixture(scope="session")
def neg_cfg():
    return validate_config(health_shock_config(**NEGATIVE_FEE))


@pytest.fixture(scope="session")
def pos_sol(pos_cfg):
    return solve_all(pos_cfg)


@pytest.fixture(scope="session")
def neg_sol(neg_cfg):
    return solve_all(neg_cfg)


@pytest.fixture(scope="session")
def sim():
    return SimConfig(n_paths=100_000)


@pytest.fixture(scope="session")
def quick_sim():
    return SimConfig(n_paths=20_000)
