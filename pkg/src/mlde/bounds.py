"""Closed-form bound evaluators: Gaussian tails, Mill's-ratio brackets, the
two-sided tail-ratio envelopes, the normal-approximation rate bound and its
bounded-increment comparison, and the moderate-deviation rate value.

Everything here is a deterministic pure function; out-of-range inputs are
flagged on the envelope objects rather than raised, so experiment sweeps can
plot exactly where the theory applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

# Range constants are artifact choices, not derived values: the upper-bound
# envelope is stated for x <= alpha/epsilon with any alpha in (0,1); the
# lower-bound side holds for x <= alpha0/epsilon with some small absolute
# alpha0 that is never pinned numerically.
DEFAULT_ALPHA = 0.9
DEFAULT_ALPHA0 = 0.1


@dataclass(frozen=True)
class BoundEnvelope:
    x: float
    lower_ratio: float
    upper_ratio: float
    valid: bool
    range_note: str = ""


def gaussian_tail(x: float) -> float:
    """1 - Phi(x) via the complementary error function (>= 12 significant
    digits on the tested range)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def mills_bounds(x: float):
    """Closed-form brackets: e^(-x^2/2)/(sqrt(2 pi)(1+x)) <= 1-Phi(x)
    <= e^(-x^2/2)/(sqrt(pi)(1+x)) for x >= 0."""
    if x < 0:
        raise DomainError("mills_bounds requires x >= 0")
    core = math.exp(-0.5 * x * x) / (1.0 + x)
    return core / math.sqrt(2.0 * math.pi), core / math.sqrt(math.pi)


def _slack_term(x: float, epsilon: float, delta: float) -> float:
    return (1.0 + x) * (epsilon * abs(math.log(epsilon)) + delta)


def _safe_exp(v: float) -> float:
    # far-out-of-range x would overflow; the evaluators flag rather than throw
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


def theorem1_upper(
    x: float, epsilon: float, delta: float, c_alpha: float = 1.0
) -> float:
    """Upper envelope for P(X_n > x) / (1 - Phi(x)):

        exp(c (x^3 eps + x^2 delta^2)) * (1 + c (1+x)(eps|log eps| + delta))
    """
    _check_params(epsilon, delta)
    return _safe_exp(c_alpha * (x**3 * epsilon + x**2 * delta**2)) * (
        1.0 + c_alpha * _slack_term(x, epsilon, delta)
    )


def theorem2_lower(
    x: float, epsilon: float, delta: float, c_alpha0: float = 1.0
) -> float:
    """Lower envelope for the same ratio:

        exp(-c (x^3 eps + x^2 delta^2 + (1+x)(eps|log eps| + delta)))
    """
    _check_params(epsilon, delta)
    return math.exp(
        -c_alpha0
        * (x**3 * epsilon + x**2 * delta**2 + _slack_term(x, epsilon, delta))
    )


def ratio_bound_expression(x: float, epsilon: float, delta: float) -> float:
    """The constant-free budget x^3 eps + x^2 delta^2 + (1+x)(eps|log eps| + delta)
    bounding |log ratio| up to an absolute constant."""
    return x**3 * epsilon + x**2 * delta**2 + _slack_term(x, epsilon, delta)


def theorems_envelope(
    x: float,
    epsilon: float,
    delta: float,
    c_alpha: float = 1.0,
    c_alpha0: float = 1.0,
    alpha: float = DEFAULT_ALPHA,
    alpha0: float = DEFAULT_ALPHA0,
) -> BoundEnvelope:
    """Two-sided envelope with validity flags for the stated ranges
    (x <= alpha/epsilon for the upper side, x <= alpha0/epsilon and
    delta <= alpha0 for the lower side)."""
    upper = theorem1_upper(x, epsilon, delta, c_alpha)
    lower = theorem2_lower(x, epsilon, delta, c_alpha0)
    notes = []
    if x > alpha / epsilon:
        notes.append(f"x > alpha/epsilon = {alpha / epsilon:.6g}")
    if x > alpha0 / epsilon:
        notes.append(f"x > alpha0/epsilon = {alpha0 / epsilon:.6g}")
    if delta > alpha0:
        notes.append(f"delta > alpha0 = {alpha0:.6g}")
    return BoundEnvelope(
        x=x,
        lower_ratio=lower,
        upper_ratio=upper,
        valid=not notes,
        range_note="; ".join(notes),
    )


def corollary1_envelope(
    x: float,
    epsilon: float,
    delta: float,
    c_alpha0: float = 1.0,
    alpha0: float = DEFAULT_ALPHA0,
) -> BoundEnvelope:
    """Multiplicative expansion envelope taking the bounded slack factors at
    their +/-1 extremes:

        lower = e^(-c x^3 eps) (1 - c(1+x)(eps|log eps| + delta))
        upper = e^(+c x^3 eps) (1 + c(1+x)(eps|log eps| + delta))

    The lower side is clamped at 0 (with a note) once the subtracted slack
    exceeds 1.  Valid for x <= alpha0 * min(1/(eps|log eps|), 1/delta).
    """
    _check_params(epsilon, delta)
    slack = c_alpha0 * _slack_term(x, epsilon, delta)
    cubic = c_alpha0 * x**3 * epsilon
    lower = math.exp(-cubic) * (1.0 - slack)
    notes = []
    if slack > 1.0:
        lower = 0.0
        notes.append("slack term exceeds 1; lower side clamped at 0")
    limit = alpha0 * min(
        1.0 / (epsilon * abs(math.log(epsilon))),
        1.0 / delta if delta > 0 else math.inf,
    )
    if x > limit:
        notes.append(f"x > range limit {limit:.6g}")
    return BoundEnvelope(
        x=x,
        lower_ratio=lower,
        upper_ratio=_safe_exp(cubic) * (1.0 + slack),
        valid=not notes,
        range_note="; ".join(notes),
    )


def berry_esseen_bound(epsilon: float, delta: float, c: float = 1.0) -> float:
    """Rate bound c * (eps |log eps| + delta) on sup_x |P(X_n <= x) - Phi(x)|."""
    _check_params(epsilon, delta)
    return c * (epsilon * abs(math.log(epsilon)) + delta)


def conjugate_rate_bound(lam: float, epsilon: float, delta: float, c: float = 1.0) -> float:
    """Rate bound c * (lam*eps + eps|log eps| + delta) for the recentred
    martingale under the tilted measure."""
    _check_params(epsilon, delta)
    return c * (lam * epsilon + epsilon * abs(math.log(epsilon)) + delta)


def _bolthausen_precondition(epsilon: float, n: int) -> None:
    floor = math.sqrt(3.0 / (4.0 * n))
    if epsilon < floor:
        raise DomainError(
            f"precondition-violated: epsilon = {epsilon:.6g} < sqrt(3/(4n)) = {floor:.6g}"
        )
    if epsilon > 0.5:
        raise DomainError("precondition-violated: epsilon > 1/2")


def bolthausen_bound(epsilon: float, delta: float, n: int, c1: float = 1.0) -> float:
    """Bounded-increment rate bound c1 * (eps^3 n log n + delta), stated for
    eps in [sqrt(3/(4n)), 1/2]."""
    _bolthausen_precondition(epsilon, n)
    return c1 * (epsilon**3 * n * math.log(n) + delta)


def dominance_check(epsilon: float, n: int) -> bool:
    """Whether eps^3 n log n >= (3/4) eps |log eps| (so the eps|log eps| rate
    implies the bounded-increment one); same preconditions as bolthausen_bound."""
    _bolthausen_precondition(epsilon, n)
    return epsilon**3 * n * math.log(n) >= 0.75 * epsilon * abs(math.log(epsilon))


def mdp_rate(x: float) -> float:
    """Limit value of (1/a_n^2) log P(X_n > a_n x): -x^2/2."""
    if x < 0:
        raise DomainError("mdp_rate requires x >= 0")
    return -0.5 * x * x


def regime_tag(x: float, n: int, alpha1: float = 1.0, alpha2: float = 0.5) -> str:
    """Range classifier for envelope sweeps at the normalized scale
    eps ~ 1/sqrt(n):

      sqrt_log      x <= alpha1 * sqrt(log n)   (additive-expansion zone)
      sixth_root    x <= n^(1/6)                (relative-remainder zone)
      sqrt_n        x <= alpha2 * sqrt(n)       (log-ratio zone)
      outside       beyond all stated ranges

    alpha1/alpha2 are artifact defaults; the theory fixes neither.
    """
    if x <= alpha1 * math.sqrt(math.log(n)):
        return "sqrt_log"
    if x <= n ** (1.0 / 6.0):
        return "sixth_root"
    if x <= alpha2 * math.sqrt(n):
        return "sqrt_n"
    return "outside"


def _check_params(epsilon: float, delta: float) -> None:
    if not 0.0 < epsilon <= 0.5:
        raise DomainError(f"epsilon = {epsilon!r} outside (0, 1/2]")
    if not 0.0 <= delta <= 0.5:
        raise DomainError(f"delta = {delta!r} outside [0, 1/2]")
