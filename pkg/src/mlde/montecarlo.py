"""Tail-probability estimation and rate experiments.

Estimators
----------
* crude: fraction of sampled paths ending above the threshold.
* tilted: importance sampling under the exponentially tilted path law; each
  path carries the weight exp(-lam * X_n + Psi_n(lam)) with Psi_n evaluated
  along its realized history, which makes the weighted indicator an unbiased
  estimator of P(X_n > x).
* exact oracles: binomial closed form for iid two-point laws, full branch
  enumeration for small finite models, and the closed-form normal tail for
  iid gaussian specs.

Sampling uses the sufficient statistic where one exists (binomial /
multinomial counts for iid lattice laws, a single normal draw for iid
gaussian), and a vectorized step loop for history-dependent specs.  Paths
are drawn in fixed-size blocks with counter-based sub-streams and all
reductions run in a fixed pairwise order, so estimates are bit-identical
for any worker count at a fixed seed.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from . import bounds, conditions, tilting
from .errors import ConfigError, DomainError
from .model import BLOCK, IncrementDistribution, MartingaleSpec, block_rng

ENUM_LIMIT = 1 << 24  # largest branch-combination count the enumerator accepts
_ENUM_CHUNK = 1 << 16


# -- result containers --------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    x: float
    p_hat: float
    std_err: float
    n_samples: int
    method: str  # crude | tilted | exact_enum | exact_binomial | exact_gaussian
    seed: int
    lambda_used: float = 0.0

    def __post_init__(self):
        # a weighted estimate may poke above 1 by sampling noise; anything
        # beyond that indicates a broken weight computation
        if self.p_hat < 0.0 or self.p_hat > 1.0 + max(1e-9, 5.0 * self.std_err):
            raise ValueError(f"p_hat = {self.p_hat!r} outside [0, 1]")
        if self.std_err < 0.0:
            raise ValueError("std_err must be >= 0")


@dataclass(frozen=True)
class RateRow:
    n: int
    epsilon: float
    delta: float
    ks_distance: float
    bound_value: float
    fitted_c: float


@dataclass(frozen=True)
class RateCurve:
    lam: float
    rows: tuple


@dataclass(frozen=True)
class RatioRow:
    x: float
    p_hat: float
    std_err: float
    gaussian_tail: float
    ratio: float
    log_ratio: float
    theorem1_upper: float
    theorem2_lower: float
    valid: bool
    feasible: bool
    regime: str
    within_envelope_at_fitted_c: bool


@dataclass(frozen=True)
class RatioExperiment:
    rows: tuple
    fitted_c_star: float
    certificate: conditions.BernsteinCertificate


@dataclass(frozen=True)
class MdpRow:
    n: int
    a_n: float
    lam: float
    p_hat: float
    std_err: float
    p_exact: float
    value: float
    err_band: float
    target: float
    feasible: bool
    a_eps: float


# -- deterministic parallel plumbing ------------------------------------------

def resolve_workers(workers=None) -> int:
    if workers is None:
        workers = os.environ.get("MLDE_THREADS", "1")
    try:
        workers = int(workers)
    except (TypeError, ValueError):
        raise ConfigError(f"bad worker count {workers!r}")
    return max(1, workers)


def _map_blocks(fn, n_blocks: int, workers: int):
    if workers <= 1 or n_blocks <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _pairwise(parts):
    """Fixed-shape pairwise tree sum; independent of how parts were produced."""
    parts = list(parts)
    while len(parts) > 1:
        parts = [
            parts[i] + parts[i + 1] if i + 1 < len(parts) else parts[i]
            for i in range(0, len(parts), 2)
        ]
    return parts[0]


# -- tilted path-functional sampling ------------------------------------------

def _tilted_two_point(d: IncrementDistribution, lam: float):
    """(low value, high value, tilted P(high), per-step log normalizer)."""
    values, probs = d.table()
    order = np.argsort(values)
    v_lo, v_hi = float(values[order[0]]), float(values[order[1]])
    a = lam * values[order] + np.log(probs[order])
    shift = float(np.max(a))
    e = np.exp(a - shift)
    z = float(e[0] + e[1])
    return v_lo, v_hi, float(e[1] / z), shift + math.log(z)


def _stat_block(spec: MartingaleSpec, lam: float, rng, m: int):
    """(X_n, Psi_n) for m paths under the lam-tilted law.

    Psi_n is a scalar for iid specs (it is deterministic) and a per-path
    array for history-dependent ones.
    """
    n = spec.n
    if spec.rule == "iid":
        d = spec.step_distribution
        if d.kind == "gaussian":
            v = spec.total_variance()
            xn = lam * v + math.sqrt(v) * rng.standard_normal(m)
            return xn, 0.5 * lam * lam * v
        values, probs = d.table()
        if len(values) == 2:
            v_lo, v_hi, p_hi, log_z = _tilted_two_point(d, lam)
            k = rng.binomial(n, p_hi, size=m)
            xn = n * v_lo + k * (v_hi - v_lo)
            return xn, n * log_z
        t_values, t_probs = tilting.tilted_table(d, lam)
        counts = rng.multinomial(n, t_probs, size=m)
        xn = counts @ t_values
        return xn, n * tilting.step_cumulant(d, lam)

    # variance_switching: the branch in force depends on the realized sign
    hi, lo = spec.branch_distributions
    xn = np.zeros(m)
    psi = np.zeros(m)
    if spec.dist.kind == "gaussian":
        z = rng.standard_normal((m, n))
        sig = (math.sqrt(hi.sigma2), math.sqrt(lo.sigma2))
        var = (hi.sigma2, lo.sigma2)
        for j in range(0, n, 2):
            first_hi = xn >= 0.0
            for t, mask in ((j, first_hi), (j + 1, ~first_hi)):
                s = np.where(mask, sig[0], sig[1])
                v = np.where(mask, var[0], var[1])
                xn = xn + lam * v + s * z[:, t]
                psi += 0.5 * lam * lam * v
        return xn, psi

    u = rng.random((m, n))
    vals_h, probs_h = tilting.tilted_table(hi, lam)
    vals_l, probs_l = tilting.tilted_table(lo, lam)
    cum_h = np.cumsum(probs_h)
    cum_l = np.cumsum(probs_l)
    cum_h[-1] = cum_l[-1] = 1.0
    psi_h = tilting.step_cumulant(hi, lam)
    psi_l = tilting.step_cumulant(lo, lam)
    for j in range(0, n, 2):
        first_hi = xn >= 0.0
        for t, mask in ((j, first_hi), (j + 1, ~first_hi)):
            pick_h = vals_h[np.searchsorted(cum_h, u[:, t], side="right")]
            pick_l = vals_l[np.searchsorted(cum_l, u[:, t], side="right")]
            xn = xn + np.where(mask, pick_h, pick_l)
            psi += np.where(mask, psi_h, psi_l)
    return xn, psi


def _weighted_tail(spec, x, lam, n_samples, seed, workers):
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    n_blocks = (n_samples + BLOCK - 1) // BLOCK

    def one(b):
        m = BLOCK if b < n_blocks - 1 else n_samples - (n_blocks - 1) * BLOCK
        rng = block_rng(seed, b)
        xn, psi = _stat_block(spec, lam, rng, m)
        hit = xn > x
        z = np.zeros(m)
        if np.any(hit):
            p_hit = psi[hit] if isinstance(psi, np.ndarray) else psi
            z[hit] = np.exp(p_hit - lam * xn[hit])
        return np.array([float(np.sum(z)), float(np.dot(z, z))])

    s1, s2 = _pairwise(_map_blocks(one, n_blocks, resolve_workers(workers)))
    p = float(s1) / n_samples
    var = max(float(s2) / n_samples - p * p, 0.0)
    return p, math.sqrt(var / n_samples)


def crude_tail_estimate(
    spec: MartingaleSpec, x: float, n_samples: int, seed: int, workers=None
) -> TailEstimate:
    """Plain-Monte-Carlo P(X_n > x) with the binomial standard error.

    Internally runs the weighted estimator at lam = 0, where every weight is
    exactly 1, so the two estimators coincide bit for bit there.
    """
    if n_samples < 100:
        raise ConfigError("n_samples must be >= 100")
    p, se = _weighted_tail(spec, x, 0.0, n_samples, seed, workers)
    return TailEstimate(x=x, p_hat=p, std_err=se, n_samples=n_samples,
                        method="crude", seed=seed, lambda_used=0.0)


def tilted_tail_estimate(
    spec: MartingaleSpec, x: float, lam: float, n_samples: int, seed: int, workers=None
) -> TailEstimate:
    """Importance-sampling estimate of P(X_n > x) under the lam-tilted law."""
    if lam < 0:
        raise DomainError("lam must be >= 0")
    if n_samples < 100:
        raise ConfigError("n_samples must be >= 100")
    p, se = _weighted_tail(spec, x, lam, n_samples, seed, workers)
    return TailEstimate(x=x, p_hat=p, std_err=se, n_samples=n_samples,
                        method="tilted", seed=seed, lambda_used=lam)


def normalization_check(spec, lam, n_samples, seed, workers=None):
    """Tilted-sample mean of the weight alone (indicator dropped); should be
    1 within sampling error by the change-of-measure identity."""
    p, se = _weighted_tail(spec, -math.inf, lam, n_samples, seed, workers)
    return p, se


def saddlepoint_lambda(spec: MartingaleSpec, x: float, tol: float = 1e-10) -> float:
    """The tilt making the drift process hit x, by bisection on the exact
    (monotone) drift."""
    if x < 0:
        raise DomainError("x must be >= 0")
    if x == 0.0:
        return 0.0
    sup = _drift_supremum(spec)
    if x >= sup * (1.0 - 1e-12):
        raise DomainError(
            f"threshold {x:.6g} at or beyond the maximal reachable drift {sup:.6g}"
        )
    hi = 1.0
    for _ in range(200):
        if tilting.drift_process(spec, hi) >= x:
            break
        hi *= 2.0
    else:
        raise DomainError("drift never reaches the threshold")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if tilting.drift_process(spec, mid) < x:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _drift_supremum(spec) -> float:
    if spec.rule == "iid":
        d = spec.step_distribution
        if d.kind == "gaussian":
            return math.inf
        values, _ = d.table()
        return spec.n * float(np.max(values))
    if spec.dist.kind == "gaussian":
        return math.inf
    hi, lo = spec.branch_distributions
    return (spec.n // 2) * (float(np.max(hi.table()[0])) + float(np.max(lo.table()[0])))


# -- exact oracles -------------------------------------------------------------

def _binomial_tail(n, v_lo, v_hi, p_hi, x):
    """P(sum > x) for n iid draws from a two-point law, strict inequality."""
    t = (x - n * v_lo) / (v_hi - v_lo)
    k_min = math.floor(t) + 1
    if k_min > n:
        return 0.0
    if k_min <= 0:
        return 1.0
    return float(binom.sf(k_min - 1, n, p_hi))


def _check_enum_size(m_atoms: int, n: int) -> int:
    total = m_atoms**n
    if total > ENUM_LIMIT:
        raise DomainError(
            f"too-large: {m_atoms}^{n} branch combinations exceed {ENUM_LIMIT}"
        )
    return total


def _enum_tail_iid(spec, x) -> float:
    d = spec.step_distribution
    values, probs = d.table()
    m_atoms = len(values)
    total = _check_enum_size(m_atoms, spec.n)
    p = 0.0
    for start in range(0, total, _ENUM_CHUNK):
        idx = np.arange(start, min(start + _ENUM_CHUNK, total), dtype=np.int64)
        ii = idx.copy()
        sums = np.zeros(len(idx))
        w = np.ones(len(idx))
        for _ in range(spec.n):
            digit = ii % m_atoms
            ii //= m_atoms
            sums += values[digit]
            w *= probs[digit]
        p += float(np.sum(w[sums > x]))
    return min(p, 1.0)


def _enum_tail_varswitch(spec, x) -> float:
    if spec.dist.kind == "gaussian":
        raise DomainError("exact enumeration needs finitely supported increments")
    base_values, base_probs = spec.dist.table()
    m_atoms = len(base_values)
    n = spec.n
    total = _check_enum_size(m_atoms, n)
    hi, lo = spec.branch_distributions
    base_var = spec.dist.variance
    c_hi = math.sqrt(hi.variance / base_var)
    c_lo = math.sqrt(lo.variance / base_var)
    p = 0.0
    for start in range(0, total, _ENUM_CHUNK):
        idx = np.arange(start, min(start + _ENUM_CHUNK, total), dtype=np.int64)
        ii = idx.copy()
        dig = np.empty((len(idx), n), dtype=np.int64)
        for t in range(n):
            dig[:, t] = ii % m_atoms
            ii //= m_atoms
        draws = base_values[dig]
        # branch choice never changes the draw's probability, only its scale
        w = np.prod(base_probs[dig], axis=1)
        run = np.zeros(len(idx))
        for j in range(0, n, 2):
            first_hi = run >= 0.0
            for t, mask in ((j, first_hi), (j + 1, ~first_hi)):
                run = run + draws[:, t] * np.where(mask, c_hi, c_lo)
        p += float(np.sum(w[run > x]))
    return min(p, 1.0)


def exact_tail(spec: MartingaleSpec, x: float, method: str = "auto") -> TailEstimate:
    """Exact P(X_n > x): binomial closed form (iid two-point), closed-form
    normal tail (iid gaussian), or full enumeration (finite models with at
    most 2^24 branch combinations)."""
    if spec.rule == "iid":
        d = spec.step_distribution
        if d.kind == "gaussian":
            if method not in ("auto", "exact_gaussian"):
                raise DomainError(f"method {method!r} unavailable for gaussian laws")
            p = bounds.gaussian_tail(x / math.sqrt(spec.total_variance()))
            tag = "exact_gaussian"
        else:
            values, probs = d.table()
            two_point = len(values) == 2
            if method == "exact_binomial" or (method == "auto" and two_point):
                if not two_point:
                    raise DomainError("binomial closed form needs a two-point law")
                v_lo, v_hi, p_hi, _ = _tilted_two_point(d, 0.0)
                p = _binomial_tail(spec.n, v_lo, v_hi, p_hi, x)
                tag = "exact_binomial"
            elif method in ("auto", "exact_enum"):
                p = _enum_tail_iid(spec, x)
                tag = "exact_enum"
            else:
                raise ConfigError(f"unknown exact method {method!r}")
    else:
        if method not in ("auto", "exact_enum"):
            raise DomainError("variance_switching oracles use enumeration only")
        p = _enum_tail_varswitch(spec, x)
        tag = "exact_enum"
    return TailEstimate(x=x, p_hat=p, std_err=0.0, n_samples=0, method=tag,
                        seed=0, lambda_used=0.0)


# -- exact distribution-distance machinery ------------------------------------

def lattice_ks(values, probs) -> float:
    """sup_x |F(x) - Phi(x)| for a discrete law: the supremum is attained at
    an atom, from the left or the right, so it equals
    max_a max(|F(a) - Phi(a)|, |F(a-) - Phi(a)|)."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    uniq, inverse = np.unique(values, return_inverse=True)
    mass = np.zeros(len(uniq))
    np.add.at(mass, inverse, probs)
    cdf = np.cumsum(mass)
    return _ks_from_cdf(uniq, cdf)


def _ks_from_cdf(atoms, cdf) -> float:
    left = np.concatenate([[0.0], cdf[:-1]])
    phi = np.array([1.0 - bounds.gaussian_tail(a) for a in atoms])
    return float(np.max(np.maximum(np.abs(cdf - phi), np.abs(left - phi))))


def _recentred_lattice_ks(spec, lam: float) -> float:
    """Exact KS distance to the standard normal of X_n - B_n(lam) under the
    lam-tilted law, for iid lattice (and gaussian) specs."""
    d = spec.step_distribution
    shift = tilting.drift_process(spec, lam)
    if d.kind == "gaussian":
        return 0.0  # exactly normal at every tilt
    values, _ = d.table()
    if len(values) == 2:
        v_lo, v_hi, p_hi, _ = _tilted_two_point(d, lam)
        k = np.arange(spec.n + 1)
        atoms = spec.n * v_lo + k * (v_hi - v_lo) - shift
        cdf = binom.cdf(k, spec.n, p_hi)
        return _ks_from_cdf(atoms, cdf)
    t_values, t_probs = tilting.tilted_table(d, lam)
    total = _check_enum_size(len(t_values), spec.n)
    sums = np.zeros(total)
    w = np.ones(total)
    ii = np.arange(total, dtype=np.int64)
    for _ in range(spec.n):
        digit = ii % len(t_values)
        ii //= len(t_values)
        sums += t_values[digit]
        w *= t_probs[digit]
    return lattice_ks(sums - shift, w)


def conjugate_clt_check(model_family, lam: float, n_list,
                        k_max: int = conditions.DEFAULT_K_MAX) -> RateCurve:
    """Exact KS of the recentred martingale under the tilted law against the
    normal limit, with the rate budget lam*eps + eps|log eps| + delta and the
    per-n fitted constant.  lam = 0 reduces to the plain rate curve."""
    rows = []
    for n in n_list:
        spec = model_family(int(n))
        if spec.rule != "iid":
            raise DomainError("rate curves need iid specs (tilted law stays iid)")
        cert = conditions.certify(spec, k_max)
        ks = _recentred_lattice_ks(spec, lam)
        budget = bounds.conjugate_rate_bound(lam, cert.epsilon, cert.delta)
        rows.append(
            RateRow(
                n=int(n),
                epsilon=cert.epsilon,
                delta=cert.delta,
                ks_distance=ks,
                bound_value=budget,
                fitted_c=ks / budget,
            )
        )
    return RateCurve(lam=lam, rows=tuple(rows))


def clt_rate_curve(model_family, n_list,
                   k_max: int = conditions.DEFAULT_K_MAX) -> RateCurve:
    """Exact KS distance of X_n to the normal limit across n, with the
    eps|log eps| + delta budget and per-n fitted constants."""
    return conjugate_clt_check(model_family, 0.0, n_list, k_max)


# -- experiments ----------------------------------------------------------------

def fit_constant(observed) -> float:
    """Smallest c with value <= c * budget across rows: max of value/budget."""
    observed = list(observed)
    if not observed:
        raise ValueError("empty-input")
    worst = 0.0
    for value, budget in observed:
        if budget <= 0.0:
            raise ValueError(f"nonpositive bound expression {budget!r}")
        worst = max(worst, value / budget)
    return worst


def _estimate_for(spec, x, method, lam_policy, samples, seed, workers,
                  cert, c_alpha):
    if method in ("auto", "exact", "exact_enum", "exact_binomial", "exact_gaussian"):
        m = "auto" if method in ("auto", "exact") else method
        return exact_tail(spec, x, method=m)
    if method == "crude":
        return crude_tail_estimate(spec, x, samples, seed, workers)
    if method == "tilted":
        lam = resolve_tilt(spec, x, lam_policy, cert, c_alpha)
        return tilted_tail_estimate(spec, x, lam, samples, seed, workers)
    raise ConfigError(f"unknown method {method!r}")


def resolve_tilt(spec, x, lam_policy, cert=None, c_alpha: float = 1.0):
    if isinstance(lam_policy, (int, float)):
        return float(lam_policy)
    if lam_policy == "saddlepoint":
        return saddlepoint_lambda(spec, x)
    if lam_policy == "paper":
        if cert is None:
            cert = conditions.certify(spec)
        return tilting.solve_lambda_bar(x, cert.epsilon, cert.delta, c_alpha)
    raise ConfigError(f"unknown lambda policy {lam_policy!r}")


def ratio_experiment(
    spec: MartingaleSpec,
    x_grid,
    method: str = "auto",
    samples: int = 0,
    seed: int = 0,
    lam_policy="saddlepoint",
    c_alpha: float = 1.0,
    c_alpha0: float = 1.0,
    alpha: float = bounds.DEFAULT_ALPHA,
    alpha0: float = bounds.DEFAULT_ALPHA0,
    workers=None,
    k_max: int = conditions.DEFAULT_K_MAX,
) -> RatioExperiment:
    """Tail/normal-tail ratio across a threshold grid, against the two-sided
    envelopes, with the smallest constant c* making
    |log ratio| <= c* (x^3 eps + x^2 delta^2 + (1+x)(eps|log eps| + delta))
    hold over all feasible rows."""
    cert = conditions.certify(spec, k_max)
    eps, delta = cert.epsilon, cert.delta
    raw = []
    pairs = []
    for x in x_grid:
        x = float(x)
        est = _estimate_for(spec, x, method, lam_policy, samples, seed, workers,
                            cert, c_alpha)
        tail = bounds.gaussian_tail(x)
        # both probabilities must be representable for the ratio to carry
        # information; far-tail underflow marks the row infeasible
        feasible = est.p_hat > 0.0 and tail > 0.0
        if feasible:
            ratio = est.p_hat / tail
            log_ratio = math.log(ratio)
        else:
            ratio = math.inf if est.p_hat > 0.0 else math.nan
            log_ratio = math.nan
        budget = bounds.ratio_bound_expression(x, eps, delta)
        if feasible:
            pairs.append((abs(log_ratio), budget))
        env = bounds.theorems_envelope(x, eps, delta, c_alpha, c_alpha0, alpha, alpha0)
        raw.append((x, est, tail, ratio, log_ratio, env, budget, feasible))
    c_star = fit_constant(pairs) if pairs else 0.0
    rows = []
    for x, est, tail, ratio, log_ratio, env, budget, feasible in raw:
        within = feasible and abs(log_ratio) <= c_star * budget * (1.0 + 1e-12)
        rows.append(
            RatioRow(
                x=x,
                p_hat=est.p_hat,
                std_err=est.std_err,
                gaussian_tail=tail,
                ratio=ratio,
                log_ratio=log_ratio,
                theorem1_upper=env.upper_ratio,
                theorem2_lower=env.lower_ratio,
                valid=env.valid,
                feasible=feasible,
                regime=bounds.regime_tag(x, spec.n),
                within_envelope_at_fitted_c=within,
            )
        )
    return RatioExperiment(rows=tuple(rows), fitted_c_star=c_star, certificate=cert)


def mdp_diagnostic(
    model_family,
    a_rule,
    x: float,
    n_list,
    samples: int,
    seed: int,
    lam_policy="saddlepoint",
    workers=None,
    k_max: int = conditions.DEFAULT_K_MAX,
):
    """Rows of (1/a_n^2) log p_hat for P(X_n > a_n x) against the limit
    -x^2/2, with a first-order error band std_err/(p_hat a_n^2).

    p_hat = 0 rows are reported infeasible rather than mapped to -inf.
    Where a closed-form oracle exists the exact probability is recorded
    alongside for cross-checking.
    """
    rows = []
    target = bounds.mdp_rate(x)
    for n in n_list:
        n = int(n)
        spec = model_family(n)
        cert = conditions.certify(spec, k_max)
        a_n = float(a_rule(n))
        threshold = a_n * x
        if spec.rule == "iid" and spec.step_distribution.kind == "gaussian":
            est = exact_tail(spec, threshold)
            lam = 0.0
        else:
            lam = resolve_tilt(spec, threshold, lam_policy, cert)
            est = tilted_tail_estimate(spec, threshold, lam, samples, seed, workers)
        p_exact = math.nan
        if spec.rule == "iid" and spec.step_distribution.kind != "gaussian":
            values, _ = spec.step_distribution.table()
            if len(values) == 2:
                p_exact = exact_tail(spec, threshold, method="exact_binomial").p_hat
        feasible = est.p_hat > 0.0
        value = math.log(est.p_hat) / a_n**2 if feasible else math.nan
        band = est.std_err / (est.p_hat * a_n**2) if feasible else math.nan
        rows.append(
            MdpRow(
                n=n,
                a_n=a_n,
                lam=lam,
                p_hat=est.p_hat,
                std_err=est.std_err,
                p_exact=p_exact,
                value=value,
                err_band=band,
                target=target,
                feasible=feasible,
                a_eps=a_n * cert.epsilon,
            )
        )
    return rows
