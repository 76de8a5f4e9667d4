"""Fleet-wide Gaussian-process policy iteration.

Multi-output GP transition models with a sparse coregionalized kernel that
shares data between correlated fleet members, analytic policy evaluation and
improvement over a support-point value GP, deterministic fleet benchmark
environments, and an experiment harness with single/joint/fleet baselines.
"""

from .gp import (
    FactorizationError,
    FittedGp,
    GpDataset,
    PosteriorStats,
    SeKernelParams,
    gp_posterior,
    gram_matrix,
    log_marginal_likelihood,
    optimize_hyperparameters,
    se_kernel,
)
from .fleet import (
    FleetDataset,
    FleetGp,
    FleetKernelParams,
    build_g_matrix,
    correlation_matrix,
    fit_fleet_hyperparameters,
    fleet_kernel,
    fleet_posterior,
)
from .blockarrow import BlockArrowFactor, block_arrow_solve
from .gprl import (
    BoxActions,
    DiscreteActions,
    GaussianState,
    Policy,
    RewardSpec,
    SupportSet,
    ValueModel,
    expected_reward,
    expected_value_row,
    latin_hypercube,
    policy_evaluation,
    policy_improvement,
    policy_iteration,
    propagate,
)
from .envs import CartPole, MountainCar, Transition, WindFarmRow, make_environment, sample_batch
from .transition import (
    FleetTransitionModel,
    SeTransitionModel,
    fit_fleet_transition_model,
    fit_single_transition_model,
)

__version__ = "0.1.0"
