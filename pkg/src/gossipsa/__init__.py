"""Distributed stochastic approximation over randomized gossip networks."""
from .analysis import (
    CltPrediction,
    CovarianceEstimate,
    MomentReport,
    averaged_covariance,
    clt_check,
    disagreement_rate_check,
    efficiency_from_fisher,
    efficiency_report,
    empirical_covariance,
    optimal_gain,
    predict_clt,
    solve_lyapunov,
    solve_lyapunov_critical,
)
from .engine import (
    BoxInit,
    EnsembleResult,
    ExplicitInit,
    NearStarInit,
    RunOptions,
    RunRecord,
    StepSchedule,
    consensus_mean,
    disagreement,
    iterate,
    iterate_with_gain,
    replica_seeds,
    run_ensemble,
    run_trajectory,
)
from .errors import ConfigurationError, DivergenceError, PreconditionError, SingularityError
from .gossip import (
    Broadcast,
    Dropout,
    GossipScheme,
    Identity,
    NetworkGraph,
    Pairwise,
    VanishingRate,
    contraction_coefficient,
    expected_matrix,
    sample_gossip,
    validate_scheme,
    vanishing_rate_feasibility,
)
from .problems import LocalizationProblem, ProblemModel, QuadraticGaussianProblem, uniform_layout

__version__ = "0.1.0"
