"""Optimal annuitization under health shocks: stage solver, Monte Carlo oracle and checks."""
from .errors import (AnnuitizationError, ConfigError, GridExhausted, IllPosed, InvalidDistribution,
                     InvalidParam, NoRoot, NonIntegrable, QuadratureFailure, SolverError, TreeTooLarge)
from .model import (KernelEntry, MarketParams, ModelConfig, PdmpSpec, TableKernel, config_from_dict,
                    config_to_dict, load_config, two_point_kernel, validate_config)
from .mortality import annuity_factor, calibrate, enumerate_states, life_expectancy, moneys_worth
from .solver import GridSpec, Solution, make_grid, solve_all, value_at
from .terminal import solve_terminal

__version__ = "0.1.0"
