"""Dyadic bucketing with mass removal, for the lower bound and for the certifier.

Indices are 0-based positions in the input spectrum. Bucket ``j`` holds the
indices whose eigenvalue lies in ``(2^-(j+1), 2^-j]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from certlab import kernels
from certlab.errors import (
    EpsOutOfRange,
    InputError,
    PreconditionViolated,
    UnknownBucket,
    ZeroEigenvalue,
)
from certlab.linalg import DensityMatrix, Spectrum, as_array, half_norm

LOWER_TAIL_FACTOR = 12.0  # lower scheme removes mass at most 12 eps
UPPER_TAIL_DIVISOR = 20.0  # upper scheme removes mass at most eps^2 / 20
LOWER_EPS_LIMIT = 1.0 / 12.0


def bucket_index(value: float) -> int:
    """The j with ``2^-(j+1) < value <= 2^-j``, computed exactly from the exponent."""
    if not value > 0:
        raise ZeroEigenvalue(f"bucket index undefined for {value!r}", value)
    mant, exp = math.frexp(value)  # value = mant * 2^exp, mant in [0.5, 1)
    return 1 - exp if mant == 0.5 else -exp


def _values(spectrum) -> np.ndarray:
    if isinstance(spectrum, Spectrum):
        return spectrum.array()
    return np.asarray(spectrum, dtype=float)


def _group(indices: Sequence[int], vals: np.ndarray) -> dict[int, tuple[int, ...]]:
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(bucket_index(float(vals[i])), []).append(int(i))
    return {j: tuple(sorted(groups[j])) for j in sorted(groups)}


def _zeroed(vals: np.ndarray, removed) -> Spectrum:
    out = vals.copy()
    out[list(removed)] = 0.0
    return Spectrum(tuple(out), "unspecified", mass=math.fsum(out))


# --------------------------------------------------------------------------
# lower scheme
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LowerBucketing:
    eps: float
    values: tuple[float, ...]
    buckets: dict[int, tuple[int, ...]]
    J: tuple[int, ...]
    d_j: dict[int, int]
    sort_permutation: tuple[int, ...]
    d_prime: int
    S_tail: tuple[int, ...]
    S_sing: tuple[int, ...]
    S_many: tuple[int, ...]
    i_max: int
    S_periph: tuple[int, ...]
    sigma_star: Spectrum
    sigma_prime: Spectrum
    J_star: tuple[int, ...]
    J_prime: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    def bucket_of(self, i: int) -> int:
        return bucket_index(self.values[i])

    def tail_mass(self) -> float:
        return math.fsum(self.values[i] for i in self.S_tail)


def lower_bucketing(spectrum, eps: float) -> LowerBucketing:
    """Bucket a strictly positive spectrum and strip up to 12 eps of small mass.

    Indices are sorted by ``lambda_i / d_j(i)`` (ties by index) and the longest
    prefix with mass at most ``12 eps`` becomes the tail. ``i_max`` is the
    largest entry that survives the tail, so ``sigma_prime`` is exactly
    ``sigma_star`` with ``i_max`` zeroed and ``S_periph`` lists the zeroed
    entries of ``sigma_prime``.
    """
    eps = float(eps)
    if not 0 < eps < LOWER_EPS_LIMIT:
        raise EpsOutOfRange(f"lower scheme needs 0 < eps < 1/12, got {eps!r}", eps)
    vals = _values(spectrum)
    if vals.size == 0:
        raise InputError("empty spectrum")
    if np.any(vals <= 0):
        raise ZeroEigenvalue(f"lower scheme needs strictly positive eigenvalues (min {vals.min()!r})",
                             float(vals.min()))
    d = vals.size
    buckets = _group(range(d), vals)
    d_j = {j: len(s) for j, s in buckets.items()}
    key = np.array([vals[i] / d_j[bucket_index(float(vals[i]))] for i in range(d)])
    order = tuple(int(i) for i in np.lexsort((np.arange(d), key)))
    d_prime = min(d - 1, kernels.prefix_cutoff(vals[list(order)], LOWER_TAIL_FACTOR * eps))
    tail = tuple(sorted(order[:d_prime]))
    tail_set = set(tail)
    survivors = [i for i in range(d) if i not in tail_set]
    # largest surviving entry; among equal values the last one in sort order
    i_max = max(survivors, key=lambda i: (vals[i], order.index(i)))
    sing = tuple(i for i in range(d) if d_j[bucket_index(float(vals[i]))] == 1)
    many = tuple(i for i in range(d) if d_j[bucket_index(float(vals[i]))] > 1)
    periph = tuple(sorted(tail_set | {i_max}))
    J_star = tuple(sorted({bucket_index(float(vals[i])) for i in survivors}))
    J_prime = tuple(sorted({bucket_index(float(vals[i])) for i in survivors if i != i_max}))
    return LowerBucketing(
        eps=eps,
        values=tuple(float(v) for v in vals),
        buckets=buckets,
        J=tuple(buckets),
        d_j=d_j,
        sort_permutation=order,
        d_prime=int(d_prime),
        S_tail=tail,
        S_sing=sing,
        S_many=many,
        i_max=int(i_max),
        S_periph=periph,
        sigma_star=_zeroed(vals, tail),
        sigma_prime=_zeroed(vals, periph),
        J_star=J_star,
        J_prime=J_prime,
    )


@dataclass(frozen=True)
class BucketCount:
    count_disjoint_from_tail: int
    bound: float


def bucket_count_bound(bucketing: LowerBucketing, eps: float | None = None) -> BucketCount:
    eps = bucketing.eps if eps is None else float(eps)
    tail = set(bucketing.S_tail)
    count = sum(1 for s in bucketing.buckets.values() if tail.isdisjoint(s))
    d = bucketing.dim
    return BucketCount(count, float(math.ceil(math.log2(d * d / eps)) + 2))


# --------------------------------------------------------------------------
# upper scheme
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UpperBucketing:
    eps: float
    values: tuple[float, ...]
    ascending_order: tuple[int, ...]
    d_star: int
    S_tail: tuple[int, ...]
    buckets: dict[int, tuple[int, ...]]
    J: tuple[int, ...]
    m: int
    sigma_star: Spectrum

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def d_j(self) -> dict[int, int]:
        return {j: len(s) for j, s in self.buckets.items()}

    def tail_mass(self) -> float:
        return math.fsum(self.values[i] for i in self.S_tail)


def upper_bucketing(spectrum, eps: float) -> UpperBucketing:
    """Strip the smallest eigenvalues up to total mass eps^2/20, then bucket the rest.

    Zero eigenvalues have no mass, so they always end up in the tail.
    """
    eps = float(eps)
    if not 0 < eps < 1:
        raise EpsOutOfRange(f"upper scheme needs 0 < eps < 1, got {eps!r}", eps)
    vals = _values(spectrum)
    if vals.size == 0:
        raise InputError("empty spectrum")
    if np.any(vals < 0):
        raise InputError(f"negative eigenvalue {vals.min()!r}")
    d = vals.size
    order = tuple(int(i) for i in np.lexsort((np.arange(d), vals)))
    d_star = kernels.prefix_cutoff(vals[list(order)], eps * eps / UPPER_TAIL_DIVISOR)
    tail = tuple(sorted(order[:d_star]))
    rest = [i for i in range(d) if i not in set(tail)]
    buckets = _group(rest, vals)
    return UpperBucketing(
        eps=eps,
        values=tuple(float(v) for v in vals),
        ascending_order=order,
        d_star=int(d_star),
        S_tail=tail,
        buckets=buckets,
        J=tuple(buckets),
        m=len(buckets),
        sigma_star=_zeroed(vals, tail),
    )


def upper_bucket_count_limit(dim: int, eps: float) -> int:
    """Largest possible ``m``: every surviving value is at least eps^2 / (20 d)."""
    return int(math.floor(math.log2(UPPER_TAIL_DIVISOR * dim / (eps * eps)))) + 1


# --------------------------------------------------------------------------
# thresholds used by the certifier
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdTable:
    eps: float
    m: int
    tail_reject: float
    case2_far: float
    case3_far: float
    trace_est_err_case2: float
    trace_close_case2: float
    small_block_case2: float
    trace_est_err_case3: float
    trace_close_case3: float
    small_block_case3: float

    @classmethod
    def from_eps_m(cls, eps: float, m: int) -> "ThresholdTable":
        if not eps > 0 or int(m) < 1:
            raise InputError(f"thresholds need eps > 0 and m >= 1, got eps={eps!r}, m={m!r}")
        unit = eps / (m * m)
        return cls(
            eps=float(eps),
            m=int(m),
            tail_reject=0.125 * eps * eps,
            case2_far=0.05 * unit,
            case3_far=0.2 * unit,
            trace_est_err_case2=0.005 * unit,
            trace_close_case2=0.01 * unit,
            small_block_case2=0.02 * unit,
            trace_est_err_case3=0.025 * unit,
            trace_close_case3=0.05 * unit,
            small_block_case3=0.1 * unit,
        )


# --------------------------------------------------------------------------
# sorted-sequences fact
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SortedSequencesResult:
    holds: bool
    s: int
    a: int
    b: int


def sorted_sequences_property(u, v, dvals, eps_prime: float) -> SortedSequencesResult:
    """Merge a doubling sequence ``u`` with a weighted sequence ``v`` and test the fact.

    ``s`` is the longest prefix of the merged order whose weighted mass is at
    most ``3 eps'``; ``a`` and ``b`` count the ``u`` and ``v`` entries inside
    it. The conclusion is ``b == len(v)`` or the first ``b + 1`` weighted
    ``v`` entries exceed ``eps'``.
    """
    u = [float(x) for x in u]
    v = [float(x) for x in v]
    dvals = [int(x) for x in dvals]
    if len(v) != len(dvals):
        raise PreconditionViolated(f"v has {len(v)} entries but dvals has {len(dvals)}")
    if any(x <= 0 for x in u):
        raise PreconditionViolated("u must be positive")
    for a, b in zip(u, u[1:]):
        if not b >= 2 * a:
            raise PreconditionViolated(f"u is not doubling: {b!r} < 2 * {a!r}", b / a)
    if any(b < a for a, b in zip(v, v[1:])):
        raise PreconditionViolated("v must be nondecreasing")
    if any(x < 0 for x in v) or any(x < 1 for x in dvals):
        raise PreconditionViolated("v must be nonnegative and dvals at least 1")
    if not eps_prime > 0:
        raise PreconditionViolated(f"eps_prime must be positive, got {eps_prime!r}")
    merged = [(x, 0, i, 1) for i, x in enumerate(u)] + [(x, 1, i, dvals[i]) for i, x in enumerate(v)]
    merged.sort(key=lambda t: (t[0], t[1], t[2]))
    total, s, a, b = 0.0, 0, 0, 0
    for value, which, _, weight in merged:
        total += value * weight
        if total > 3 * eps_prime:
            break
        s += 1
        if which == 0:
            a += 1
        else:
            b += 1
    holds = b == len(v) or math.fsum(v[i] * dvals[i] for i in range(b + 1)) > eps_prime
    return SortedSequencesResult(bool(holds), s, a, b)


# --------------------------------------------------------------------------
# block views
# --------------------------------------------------------------------------

Selector = Union[str, tuple]
Bucketing = Union[LowerBucketing, UpperBucketing]


@dataclass(frozen=True, eq=False)
class HermitianBlockView:
    """A masked copy of a parent matrix.

    ``row_set`` x ``col_set`` is kept, plus its transpose when ``symmetric``;
    every other entry is zero. Normalized views are divided by their trace.
    """

    parent: DensityMatrix | np.ndarray
    row_set: tuple[int, ...]
    col_set: tuple[int, ...]
    symmetric: bool = False
    normalized: bool = False

    def mask(self) -> np.ndarray:
        d = as_array(self.parent).shape[0]
        mk = np.zeros((d, d), dtype=bool)
        if self.row_set and self.col_set:
            mk[np.ix_(self.row_set, self.col_set)] = True
            if self.symmetric:
                mk[np.ix_(self.col_set, self.row_set)] = True
        return mk

    def is_principal(self) -> bool:
        return set(self.row_set) == set(self.col_set)

    def raw(self) -> np.ndarray:
        return np.where(self.mask(), as_array(self.parent), 0)

    def trace(self) -> float:
        return float(np.real(np.trace(self.raw())))

    def matrix(self) -> np.ndarray:
        m = self.raw()
        if self.normalized:
            tr = float(np.real(np.trace(m)))
            if tr <= 0:
                raise InputError("cannot normalize a block with zero trace")
            m = m / tr
        return m

    def as_normalized(self) -> "HermitianBlockView":
        if not self.is_principal():
            raise InputError("only principal blocks can be normalized")
        return HermitianBlockView(self.parent, self.row_set, self.col_set, self.symmetric, True)

    def compressed(self) -> np.ndarray:
        """The principal block as a small |rows| x |rows| matrix."""
        if not self.is_principal():
            raise InputError("only principal blocks can be compressed")
        idx = list(self.row_set)
        m = as_array(self.parent)[np.ix_(idx, idx)]
        if self.normalized:
            m = m / float(np.real(np.trace(m)))
        return m


def _bucket(bucketing: Bucketing, j) -> tuple[int, ...]:
    try:
        return bucketing.buckets[int(j)]
    except (KeyError, TypeError, ValueError):
        raise UnknownBucket(f"no bucket {j!r}; buckets are {list(bucketing.buckets)}") from None


def extract_block(rho, selector: Selector, bucketing: Bucketing) -> HermitianBlockView:
    """Masked block of ``rho`` named by ``selector``.

    Selectors: ``("diag", j)``, ``("offdiag", j, k)``, ``"junk_diag"``,
    ``"junk_off"``, ``("principal", j, k)``.
    """
    d = as_array(rho).shape[0]
    if isinstance(selector, str):
        kind, args = selector, ()
    else:
        kind, args = selector[0], tuple(selector[1:])
    tail = tuple(bucketing.S_tail)
    rest = tuple(i for i in range(d) if i not in set(tail))
    if kind == "diag" and len(args) == 1:
        s = _bucket(bucketing, args[0])
        return HermitianBlockView(rho, s, s)
    if kind == "offdiag" and len(args) == 2:
        a, b = _bucket(bucketing, args[0]), _bucket(bucketing, args[1])
        if args[0] == args[1]:
            raise InputError("offdiag needs two different buckets")
        return HermitianBlockView(rho, a, b, symmetric=True)
    if kind == "principal" and len(args) == 2:
        s = tuple(sorted(set(_bucket(bucketing, args[0])) | set(_bucket(bucketing, args[1]))))
        return HermitianBlockView(rho, s, s)
    if kind == "junk_diag" and not args:
        return HermitianBlockView(rho, tail, tail)
    if kind == "junk_off" and not args:
        return HermitianBlockView(rho, tail, rest, symmetric=True)
    raise InputError(f"unknown block selector {selector!r}")


def quasinorms(bucketing: LowerBucketing) -> dict[str, float]:
    return {
        "sigma": half_norm(bucketing.values),
        "sigma_star": half_norm(bucketing.sigma_star.values),
        "sigma_prime": half_norm(bucketing.sigma_prime.values),
    }
