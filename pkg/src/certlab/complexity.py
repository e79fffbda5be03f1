"""Copy-complexity functionals for certifying a fixed state sigma.

All functionals carry unit constants: they are meant for scaling
comparisons, not absolute copy counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from certlab import kernels
from certlab.bucketing import LowerBucketing, lower_bucketing, upper_bucketing
from certlab.errors import EmptySum, NoMultiBuckets
from certlab.linalg import DensityMatrix, Spectrum, as_array, half_norm

ZERO_EIG_TOL = 1e-12
BISECTION_ITERS = 200
RESIDUAL_RTOL = 1e-12
# alpha <= C eps / sum(...) follows from 2 floor(d/2) >= 2d/3 and
# 2^-(2(j+1)/3) >= 2^-2/3 lambda^(2/3); C = (3/2) 2^(2/3).
ALPHA_BOUND_C = 1.5 * 2.0 ** (2.0 / 3.0)


# --------------------------------------------------------------------------
# tuned perturbation magnitudes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TunedPerturbation:
    eps: float
    eps_j: dict[int, float]
    d_j: dict[int, int]
    alpha: float
    cap_active: dict[int, bool]
    saturated: bool
    residual: float


def _cap(j: int) -> float:
    return 2.0 ** (-j - 1)


def _slope(j: int, dj: int) -> float:
    return dj ** (1.0 / 3.0) * 2.0 ** (-2.0 * (j + 1) / 3.0)


def tune_perturbations(bucketing: LowerBucketing, eps: float | None = None) -> TunedPerturbation:
    """Choose eps_j = min(2^-(j+1), alpha d_j^(1/3) 2^(-2(j+1)/3)) with total trace norm eps.

    alpha comes from bisection on the nondecreasing piecewise-linear
    shortfall, followed by an exact solve on the final linear piece.
    """
    eps = bucketing.eps if eps is None else float(eps)
    multi = [j for j in bucketing.J if bucketing.d_j[j] > 1]
    if not multi:
        raise NoMultiBuckets("every bucket is a singleton; no perturbation is possible")
    weight = {j: 2 * (bucketing.d_j[j] // 2) for j in multi}
    cap = {j: _cap(j) for j in multi}
    slope = {j: _slope(j, bucketing.d_j[j]) for j in multi}

    def magnitudes(alpha):
        return {j: min(cap[j], alpha * slope[j]) for j in multi}

    def shortfall(alpha):
        mags = magnitudes(alpha)
        return math.fsum(weight[j] * mags[j] for j in multi) - eps

    alpha_max = max(cap[j] / slope[j] for j in multi)
    if shortfall(alpha_max) < 0:
        mags = magnitudes(alpha_max)
        return TunedPerturbation(eps, mags, {j: bucketing.d_j[j] for j in multi}, alpha_max,
                                 {j: True for j in multi}, True, shortfall(alpha_max))
    lo, hi = 0.0, alpha_max
    alpha = hi
    for _ in range(BISECTION_ITERS):
        alpha = 0.5 * (lo + hi)
        g = shortfall(alpha)
        if abs(g) <= RESIDUAL_RTOL * eps:
            break
        if g < 0:
            lo = alpha
        else:
            hi = alpha
    # exact solve on the linear piece containing alpha
    capped = [j for j in multi if alpha * slope[j] >= cap[j]]
    free = [j for j in multi if j not in capped]
    if free:
        exact = (eps - math.fsum(weight[j] * cap[j] for j in capped)) / math.fsum(weight[j] * slope[j] for j in free)
        consistent = all(exact * slope[j] <= cap[j] for j in free) and all(exact * slope[j] >= cap[j] for j in capped)
        if consistent and abs(shortfall(exact)) <= abs(shortfall(alpha)):
            alpha = exact
    mags = magnitudes(alpha)
    return TunedPerturbation(
        eps=eps,
        eps_j=mags,
        d_j={j: bucketing.d_j[j] for j in multi},
        alpha=alpha,
        cap_active={j: alpha * slope[j] >= cap[j] for j in multi},
        saturated=False,
        residual=shortfall(alpha),
    )


def lower_tuned_functional(tuned: TunedPerturbation) -> float:
    """(sum_j eps_j^4 4^j)^(-1/2)."""
    terms = [e**4 * 4.0**j for j, e in tuned.eps_j.items() if tuned.d_j.get(j, 2) > 1]
    total = math.fsum(terms)
    if not terms or total <= 0:
        raise EmptySum("no nonzero perturbation magnitudes")
    return 1.0 / math.sqrt(total)


def alpha_bound(bucketing: LowerBucketing, tuned: TunedPerturbation) -> float:
    """C eps / sum over J' buckets with d_j > 1 of max lambda^(2/3) d_j^(4/3)."""
    total = 0.0
    for j in bucketing.J_prime:
        dj = bucketing.d_j[j]
        if dj > 1:
            top = max(bucketing.values[i] for i in bucketing.buckets[j])
            total += top ** (2.0 / 3.0) * dj ** (4.0 / 3.0)
    return math.inf if total == 0 else ALPHA_BOUND_C * tuned.eps / total


# --------------------------------------------------------------------------
# other functionals
# --------------------------------------------------------------------------

def trimmed_distribution(q, eps: float) -> np.ndarray:
    """Drop the smallest entries up to mass eps, then the largest survivor."""
    vals = np.sort(np.asarray(q, dtype=float))
    cut = kernels.prefix_cutoff(vals, eps)
    return vals[cut:-1] if vals.size - cut > 0 else vals[:0]


def classical_functional(q, eps: float) -> float:
    """|| q trimmed ||_(2/3) / eps^2."""
    rest = trimmed_distribution(q, eps)
    if rest.size == 0:
        return 0.0
    return float(np.sum(rest ** (2.0 / 3.0)) ** 1.5) / (eps * eps)


def nearly_mixed_functional(values, eps: float) -> float | None:
    """d^(5/2) / (||sigma^-1||_2 eps^2) when lambda_min >= 2 eps / d, else None."""
    lam = np.asarray(values, dtype=float)
    d = lam.size
    if lam.min() < 2.0 * eps / d or lam.min() <= 0:
        return None
    inv_norm = math.sqrt(float(np.sum(1.0 / lam**2)))
    return d**2.5 / (inv_norm * eps * eps)


@dataclass(frozen=True)
class UpperReport:
    value: float
    quasinorm: float
    m: int
    d_star: int
    bucket_sum: float
    bucket_sum_bound: float


def _spectrum_values(sigma) -> np.ndarray:
    if isinstance(sigma, Spectrum):
        return sigma.array()
    arr = np.asarray(sigma.matrix if isinstance(sigma, DensityMatrix) else sigma)
    if arr.ndim == 1:
        return arr.astype(float)
    return np.clip(np.linalg.eigvalsh(as_array(arr)), 0.0, None)[::-1]


def upper_report(sigma, eps: float) -> UpperReport:
    """||sigma*||_(1/2) / eps^2 with the dyadic bucket-sum diagnostic."""
    ub = upper_bucketing(_spectrum_values(sigma), eps)
    q = half_norm(ub.sigma_star.values)
    bucket_sum = math.fsum(len(s) ** 2 * 2.0 ** (-j) for j, s in ub.buckets.items())
    return UpperReport(q / (eps * eps), q, ub.m, ub.d_star, bucket_sum, 2.0 * q)


@dataclass(frozen=True)
class RegimeFlags:
    branch: str
    best_source: str
    singleton_dominant: bool
    tuned_available: bool
    tuned_saturated: bool
    corner_applicable: bool
    nearly_mixed_applicable: bool
    sigma_prime_ratio: float


@dataclass(frozen=True)
class ComplexityReport:
    eps: float
    dim: int
    lower_tuned: float | None
    lower_classical: float
    lower_corner: float | None
    lower_nearly_mixed: float | None
    lower_best: float
    upper: float
    quasinorm_sigma: float
    quasinorm_sigma_star: float
    quasinorm_sigma_prime: float
    regime_flags: RegimeFlags


def lower_report(sigma, eps: float) -> ComplexityReport:
    """Evaluate every applicable lower-bound functional and the upper functional."""
    full = _spectrum_values(sigma)
    d = full.size
    lam = full[full > ZERO_EIG_TOL]
    lb = lower_bucketing(lam, eps)
    q_star = half_norm(lb.sigma_star.values)
    q_prime = half_norm(lb.sigma_prime.values)
    periph = set(lb.S_periph)
    singles = math.fsum(math.sqrt(lam[i]) for i in lb.S_sing if i not in periph)
    singleton_dominant = singles > 0.5 * math.sqrt(q_prime)

    tuned_value, saturated = None, False
    try:
        tuned = tune_perturbations(lb, eps)
        saturated = tuned.saturated
        if not saturated:
            tuned_value = lower_tuned_functional(tuned)
    except (NoMultiBuckets, EmptySum):
        pass
    classical = classical_functional(full, eps)
    corner = 1.0 / (eps * eps) if float(full.max()) >= 0.5 else None
    nearly = nearly_mixed_functional(full, eps)

    ratio = q_prime / q_star if q_star > 0 else 0.0
    if ratio >= 0.5:
        branch = "singleton" if singleton_dominant else "tuned"
    else:
        branch = "corner"
    candidates = {"classical": classical}
    for name, val in (("tuned", tuned_value), ("corner", corner), ("nearly_mixed", nearly)):
        if val is not None:
            candidates[name] = val
    best_source = max(candidates, key=lambda k: candidates[k])
    flags = RegimeFlags(
        branch=branch,
        best_source=best_source,
        singleton_dominant=bool(singleton_dominant),
        tuned_available=tuned_value is not None,
        tuned_saturated=bool(saturated),
        corner_applicable=corner is not None,
        nearly_mixed_applicable=nearly is not None,
        sigma_prime_ratio=float(ratio),
    )
    return ComplexityReport(
        eps=float(eps),
        dim=int(d),
        lower_tuned=tuned_value,
        lower_classical=classical,
        lower_corner=corner,
        lower_nearly_mixed=nearly,
        lower_best=float(candidates[best_source]),
        upper=upper_report(full, eps).value,
        quasinorm_sigma=half_norm(full),
        quasinorm_sigma_star=q_star,
        quasinorm_sigma_prime=q_prime,
        regime_flags=flags,
    )
