"""Bayesian optimal designs for frequentist model averaging estimation."""

from .criterion import CriterionProblem, PriorAtom, PriorSpec, bias_nu, phi_bayes, phi_local, variance_tau2
from .errors import (
    AllStartsFailedError,
    DegenerateEffectError,
    DomainError,
    MavDesignError,
    NoCrossingError,
    SingularInformationError,
    ValidationError,
)
from .models import (
    LOGISTIC4,
    SIGMOID_EMAX,
    AveragingScheme,
    Candidate,
    CandidateSubset,
    Design,
    DesignSpace,
    Misspecification,
    ModelFamily,
    ParamVector,
    build_candidate,
    get_family,
    normalize_design,
    register_family,
)
from .optimizer import OptimizerOptions, OptimResult, evaluate_and_compare, optimize_design
from .rounding import efficient_round
from .scenario import Scenario, load_design, load_scenario
from .sensitivity import check_optimality, d_pi
from .simulation import TruthSpec, fit_mle, gen_data, run_mse_study, select_aic, smooth_aic_weights
from .targets import AUC, ED, PointMean, eval_target

__version__ = "0.1.0"
