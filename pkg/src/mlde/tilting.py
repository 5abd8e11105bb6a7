"""Conjugate-measure machinery.

Per-step log moment generating functions ("cumulants"), tilted means and
variances, the cumulant and drift processes of a whole spec, the conjugate
decomposition X_n = Y_n + B_n along a realized path, the closed-form tilt
parameter solvers, and exact residual checks of the moment/drift/cumulant
inequalities that drive the ratio bounds.

All exponential sums are evaluated max-shifted so that large lambda * value
products never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import conditions
from .errors import DomainError
from .model import IncrementDistribution, MartingaleSpec, Path


# -- one-step quantities -----------------------------------------------------

def _table_logexp(values: np.ndarray, probs: np.ndarray, lam: float):
    """Shifted terms of E e^(lam*eta) for a finite table.

    Returns (shift, terms) with E e^(lam*eta) = e^shift * sum(terms).
    """
    a = lam * values + np.log(probs)
    shift = float(np.max(a))
    return shift, np.exp(a - shift)


def step_cumulant(dist: IncrementDistribution, lam: float) -> float:
    """log E e^(lam * eta), exact per kind."""
    if dist.kind == "gaussian":
        return 0.5 * lam * lam * dist.sigma2
    if dist.kind == "scaled_rademacher":
        z = abs(lam * dist.scale)
        # log cosh(z), stable for large z
        return z + math.log1p(math.exp(-2.0 * z)) - math.log(2.0)
    values, probs = dist.table()
    shift, terms = _table_logexp(values, probs, lam)
    return shift + math.log(float(np.sum(terms)))


def step_drift(dist: IncrementDistribution, lam: float) -> float:
    """Tilted mean E(eta e^(lam eta)) / E(e^(lam eta))."""
    if dist.kind == "gaussian":
        return lam * dist.sigma2
    if dist.kind == "scaled_rademacher":
        return dist.scale * math.tanh(lam * dist.scale)
    values, probs = dist.table()
    _, terms = _table_logexp(values, probs, lam)
    return float(np.dot(values, terms) / np.sum(terms))


def tilted_step_variance(dist: IncrementDistribution, lam: float) -> float:
    """Variance of the tilted one-step law."""
    if dist.kind == "gaussian":
        return dist.sigma2
    values, probs = dist.table()
    _, terms = _table_logexp(values, probs, lam)
    den = float(np.sum(terms))
    mean = float(np.dot(values, terms)) / den
    second = float(np.dot(values * values, terms)) / den
    return second - mean * mean


def tilted_table(dist: IncrementDistribution, lam: float):
    """(values, probs) of the tilted law of a finitely supported dist."""
    values, probs = dist.table()
    _, terms = _table_logexp(values, probs, lam)
    return values, terms / float(np.sum(terms))


@dataclass(frozen=True)
class TiltedModel:
    """A spec together with a tilt parameter; exposes the per-step tilted laws."""

    base: MartingaleSpec
    lam: float

    def step_law(self, step_dist: IncrementDistribution = None):
        """("table", values, probs) or ("gaussian", mean, sigma2).

        step_dist defaults to the iid one-step law; pass a branch law for
        variance_switching specs.
        """
        d = step_dist if step_dist is not None else self.base.step_distribution
        if d.kind == "gaussian":
            return ("gaussian", self.lam * d.sigma2, d.sigma2)
        values, probs = tilted_table(d, self.lam)
        return ("table", values, probs)


# -- whole-spec processes ----------------------------------------------------

def cumulant_process(spec: MartingaleSpec, lam: float) -> float:
    """Psi_n(lam) = sum_i log E(e^(lam xi_i) | F_{i-1}).

    Deterministic for both supported rules: iid trivially, and for
    variance_switching because each pair visits both branch laws exactly once
    regardless of the realized sign.
    """
    if spec.rule == "iid":
        d = spec.step_distribution
        if d.kind == "gaussian":
            # n * (lam^2 sigma_step^2 / 2) with the product n * sigma_step^2
            # taken exactly, so normalized specs give lam^2/2 to the bit
            return 0.5 * lam * lam * spec.total_variance()
        return spec.n * step_cumulant(d, lam)
    hi, lo = spec.branch_distributions
    return (spec.n // 2) * (step_cumulant(hi, lam) + step_cumulant(lo, lam))


def drift_process(spec: MartingaleSpec, lam: float) -> float:
    """B_n(lam) = sum_i of the tilted conditional means; deterministic here
    for the same pairing reason as cumulant_process."""
    if spec.rule == "iid":
        d = spec.step_distribution
        if d.kind == "gaussian":
            return lam * spec.total_variance()
        return spec.n * step_drift(d, lam)
    hi, lo = spec.branch_distributions
    return (spec.n // 2) * (step_drift(hi, lam) + step_drift(lo, lam))


def conjugate_decomposition(path: Path, spec: MartingaleSpec, lam: float):
    """Split X_n = y_n + b_n with b_n the drift accumulated along the
    realized history; the identity holds exactly by construction."""
    if spec.rule == "iid":
        b_n = drift_process(spec, lam)
    else:
        base_var = spec.dist.variance
        drifts = [
            step_drift(spec.dist.scaled(math.sqrt(v / base_var)), lam)
            for v in path.predictable_variances
        ]
        b_n = math.fsum(drifts)
    x_n = float(path.partial_sums[-1])
    return x_n - b_n, b_n


# -- tilt-parameter solvers ----------------------------------------------------

def solve_lambda_bar(x: float, epsilon: float, delta: float, c_alpha: float) -> float:
    """Largest root of lam + lam*delta^2 + c_alpha*lam^2*epsilon = x,
    in the closed form 2x / (sqrt((1+delta^2)^2 + 4 c_alpha x epsilon) + 1 + delta^2).

    Satisfies c0*x <= result <= x on the admissible range.
    """
    if x < 0:
        raise DomainError("x must be >= 0")
    if epsilon <= 0 or c_alpha < 0:
        raise DomainError("epsilon must be > 0 and c_alpha >= 0")
    one = 1.0 + delta * delta
    return 2.0 * x / (math.sqrt(one * one + 4.0 * c_alpha * x * epsilon) + one)


def solve_lambda_under(x: float, epsilon: float, delta: float, c_half: float) -> float:
    """Smallest root of lam - lam*delta^2 - c_half*lam^2*epsilon = x,
    in the closed form 2x / (1 - delta^2 + sqrt((1-delta^2)^2 - 4 c_half x epsilon)).

    Raises DomainError when the discriminant is <= 0, i.e. x is past the
    range where the lower-bound construction applies.  Satisfies
    x <= result <= 2x on that range.
    """
    if x < 0:
        raise DomainError("x must be >= 0")
    if epsilon <= 0 or c_half < 0:
        raise DomainError("epsilon must be > 0 and c_half >= 0")
    one = 1.0 - delta * delta
    disc = one * one - 4.0 * c_half * x * epsilon
    if disc <= 0.0:
        raise DomainError(
            f"out-of-range: discriminant {disc:.6g} <= 0 at x = {x:.6g}"
        )
    return 2.0 * x / (one + math.sqrt(disc))


# -- inequality checks -------------------------------------------------------

@dataclass(frozen=True)
class MomentBoundReport:
    holds: bool
    binding_k: int
    max_ratio: float
    detail: str


def check_lemma1(
    dist: IncrementDistribution, epsilon: float, k_max: int = conditions.DEFAULT_K_MAX
) -> MomentBoundReport:
    """Exact check of the two conditional-moment bound families for a law
    satisfying the growth condition at scale epsilon:

        |E xi^k| <= 6 k! epsilon^k          for k >= 2,
        E|xi|^k  <= k! epsilon^(k-2) E xi^2 for k >= 2,

    plus the k = 2 consequence E xi^2 <= 12 epsilon^2.
    """
    m2 = dist.moment(2)
    worst_k, worst = 2, 0.0
    for k in range(2, k_max + 1):
        r1 = abs(dist.moment(k)) / (6.0 * math.factorial(k) * epsilon**k)
        r2 = dist.abs_moment(k) / (math.factorial(k) * epsilon ** (k - 2) * m2)
        r = max(r1, r2)
        if r > worst:
            worst_k, worst = k, r
    r_var = m2 / (12.0 * epsilon * epsilon)
    worst = max(worst, r_var)
    holds = worst <= 1.0 + 1e-12  # equality binds at the minimal epsilon
    return MomentBoundReport(
        holds=holds,
        binding_k=worst_k,
        max_ratio=worst,
        detail=f"max ratio {worst:.6g} at k = {worst_k}; var ratio {r_var:.6g}",
    )


@dataclass(frozen=True)
class TiltReport:
    """One tilt parameter's exact drift/cumulant values and the residuals of
    the two-sided drift and cumulant bounds at the supplied constant, together
    with the smallest constants that would make each bound hold."""

    lam: float
    psi_n: float
    b_n: float
    lemma2_residual: float
    lemma3_residual: float
    fitted_c2: float
    fitted_c3: float


def check_lemma2_lemma3(
    spec: MartingaleSpec,
    lambda_grid,
    alpha: float,
    c_alpha: float = 1.0,
    certificate=None,
):
    """Exact B_n and Psi_n across a lambda grid with residuals of

        |B_n(lam) - lam|        <= lam delta^2 + c lam^2 epsilon
        |Psi_n(lam) - lam^2/2|  <= c lam^3 epsilon + lam^2 delta^2 / 2

    at the given c, and per-row minimal constants.  Grid points must satisfy
    0 <= lam <= alpha/epsilon.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    cert = certificate if certificate is not None else conditions.certify(spec)
    eps, delta = cert.epsilon, cert.delta
    reports = []
    for lam in lambda_grid:
        lam = float(lam)
        if lam < 0.0 or lam > alpha / eps * (1.0 + 1e-12):
            raise DomainError(f"lambda = {lam:.6g} outside [0, alpha/epsilon]")
        b_n = drift_process(spec, lam)
        psi = cumulant_process(spec, lam)
        dev2 = abs(b_n - lam)
        dev3 = abs(psi - 0.5 * lam * lam)
        res2 = dev2 - (lam * delta**2 + c_alpha * lam**2 * eps)
        res3 = dev3 - (c_alpha * lam**3 * eps + 0.5 * lam**2 * delta**2)
        if lam > 0.0:
            c2 = max(0.0, dev2 - lam * delta**2) / (lam**2 * eps)
            c3 = max(0.0, dev3 - 0.5 * lam**2 * delta**2) / (lam**3 * eps)
        else:
            c2 = c3 = 0.0
        reports.append(
            TiltReport(
                lam=lam,
                psi_n=psi,
                b_n=b_n,
                lemma2_residual=res2,
                lemma3_residual=res3,
                fitted_c2=c2,
                fitted_c3=c3,
            )
        )
    return reports


def fitted_drift_cumulant_constants(reports) -> tuple:
    """Smallest constants making both bounds hold across a grid of reports."""
    c2 = max((r.fitted_c2 for r in reports), default=0.0)
    c3 = max((r.fitted_c3 for r in reports), default=0.0)
    return c2, c3
