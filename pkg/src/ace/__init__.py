"""Active learning for causal effect estimation with GP surrogates.

Core pieces: per-arm Gaussian-process regression (`gp`), the two-arm
potential-outcome model and weighted estimands (`surrogate`), treatment
probability models (`propensity`), selection criteria (`acquisition`),
the simulation harness (`simulation`), result persistence (`results`),
and turn-based advisory sessions (`session`).  An HTTP service wrapping
all of it lives in `ace.service`; the `ace` CLI is a thin client.
"""

__version__ = "0.1.0"

from .gp import (
    FitConfig,
    FitResult,
    FittedGP,
    GPHyperParams,
    KernelSpec,
    PosteriorSummary,
    TrainingSet,
    fit_mle,
    kernel_matrix,
    log_marginal_likelihood,
    posterior_at,
    posterior_cross_cov,
)
from .surrogate import (
    Observation,
    TestSet,
    TwoArmModel,
    WeightSpec,
    estimate_qoi,
    qoi_posterior_variance,
    weights,
)
from .propensity import KnownPropensity, LogisticPropensity, PropensityModel, fit_logistic
from .acquisition import (
    Pool,
    UcbConfig,
    expected_variance_reduction,
    select_alc,
    select_alc_e,
    select_greedy,
    select_random,
    select_scenario1,
    select_scenario2a,
    select_scenario2b,
    select_scenario3,
    sigma_te,
    ucb_score,
    variance_reduction,
)
from .simulation import (
    GroundTruth,
    ReplicationResult,
    ScenarioConfig,
    aggregate,
    franke_ground_truth,
    franke_ite,
    franke_mu,
    make_test_set,
    monte_carlo_truth,
    run_many,
    run_replication,
    sample_outcome,
    plugin_truth,
    true_propensity,
)
from .session import AdvisorySession, apply_request

__all__ = [name for name in dir() if not name.startswith("_")]
