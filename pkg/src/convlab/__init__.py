"""Convergence trading under Markov regime switching.

Log-utility optimal portfolios for a two-asset convergence trade whose
pricing errors mean-revert around regime-dependent levels driven by a
hidden Markov chain: closed-form strategies, a Wonham-type filter,
value-function ODE/PDE solvers and reproducible numerical experiments.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    GeneratorMatrix,
    ModelParams,
    ParameterError,
    RegimeTable,
    averaged_params,
    derive_constants,
    load_params,
    stationary_distribution,
    validate_params,
)
from .simulate import (  # noqa: F401
    ChainPath,
    PathBundle,
    PolicyHandle,
    make_grid,
    simulate_chain,
    simulate_paths,
    simulate_wealth,
)
from .filtering import FilterPath, kolmogorov_baseline, run_filter  # noqa: F401
from .strategy import (  # noqa: F401
    PortfolioWeights,
    full_info_policy,
    markowitz_oracle,
    optimal_beta_neutral_full,
    optimal_beta_neutral_partial,
    optimal_delta_neutral_full,
    optimal_delta_neutral_partial,
    optimal_full,
    optimal_partial,
    partial_info_policy,
)
from .value import (  # noqa: F401
    loss_of_utility,
    mc_expected_log_utility,
    solve_full_ode,
    solve_partial_pde,
    value_full,
    value_partial,
)
from .experiments import EXPERIMENTS, named_config, run_experiment  # noqa: F401
