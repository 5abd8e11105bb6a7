"""mlde: numerical engine for martingale tail probabilities under
moment-growth (Bernstein-type) conditions -- conjugate tilting, rare-event
importance sampling, exact lattice oracles, and closed-form bound evaluators.
"""

from .bounds import (
    BoundEnvelope,
    berry_esseen_bound,
    bolthausen_bound,
    corollary1_envelope,
    dominance_check,
    gaussian_tail,
    mdp_rate,
    mills_bounds,
    theorem1_upper,
    theorem2_lower,
    theorems_envelope,
)
from .conditions import (
    BernsteinCertificate,
    ConditionReport,
    certify,
    check_factorial_moment,
    check_sakhanenko,
    cramer_to_bernstein,
    minimal_bernstein_H,
    sakhanenko_K_from_H,
)
from .errors import ConfigError, DomainError, InfeasibleError, UnsupportedKindError
from .model import (
    IncrementDistribution,
    MartingaleSpec,
    Path,
    conditional_moment,
    parse_spec_config,
    format_spec_config,
    quadratic_characteristic,
    sample_path,
    sample_paths,
)
from .montecarlo import (
    RateCurve,
    TailEstimate,
    clt_rate_curve,
    conjugate_clt_check,
    crude_tail_estimate,
    exact_tail,
    fit_constant,
    lattice_ks,
    mdp_diagnostic,
    ratio_experiment,
    saddlepoint_lambda,
    tilted_tail_estimate,
)
from .tilting import (
    TiltReport,
    TiltedModel,
    check_lemma1,
    check_lemma2_lemma3,
    conjugate_decomposition,
    cumulant_process,
    drift_process,
    solve_lambda_bar,
    solve_lambda_under,
    step_cumulant,
    step_drift,
    tilted_step_variance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
