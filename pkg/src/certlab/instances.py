"""Hard-instance generators and the perturbation families built from them.

Generators are pure: they take explicit unitaries (or sign vectors), never
sample on their own. Families wrap a generator together with the law of its
parameter so divergence estimators can draw members in batches.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from certlab import kernels
from certlab.bucketing import LowerBucketing, UpperBucketing
from certlab.errors import (
    BadDim,
    CertificateViolation,
    EigTooSmall,
    FarnessDeficit,
    InputError,
    MagnitudeTooLarge,
    OddDim,
    SpectrumOutOfRegime,
    ValidationError,
)
from certlab.haar import HaarSample, as_generator, sample_haar_batch
from certlab.linalg import (
    DEFAULT_TOL,
    DensityMatrix,
    Spectrum,
    as_array,
    fidelity,
    trace_norm,
    validate_density,
)

KINDS = (
    "quantum_paninski",
    "nearly_mixed",
    "bucketed_block",
    "rotation_pair",
    "two_by_two_sign",
    "classical_paninski",
)
CORNER_EPS_LIMIT = 1.0 / (2.0 * math.sqrt(2.0))
FARNESS_RTOL = 1e-9


# --------------------------------------------------------------------------
# signed diagonal
# --------------------------------------------------------------------------

def signed_diagonal(dim: int, magnitude: float) -> np.ndarray:
    """(-m, +m, -m, +m, ...), with a trailing 0 when ``dim`` is odd."""
    if int(dim) < 1:
        raise BadDim(f"dimension must be at least 1, got {dim!r}")
    if magnitude < 0:
        raise InputError(f"magnitude must be nonnegative, got {magnitude!r}")
    out = np.empty(dim)
    out[0::2] = -magnitude
    out[1::2] = magnitude
    if dim % 2:
        out[-1] = 0.0
    return out


def _unitary(u) -> np.ndarray:
    return np.asarray(u.matrix if isinstance(u, HaarSample) else u, dtype=complex)


def _conj(u: np.ndarray, diag: np.ndarray) -> np.ndarray:
    return kernels.conjugate_diag(u[None], diag)[0]


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def quantum_paninski(d: int, eps: float, U) -> DensityMatrix:
    """I/d + (eps/d) U S U^H with S = diag(-1, +1, ...); trace norm distance exactly eps."""
    if d % 2:
        raise OddDim(f"quantum Paninski instance needs even d, got {d}; use nearly_mixed")
    if not 0 < eps <= 1:
        raise InputError(f"eps must lie in (0, 1], got {eps!r}")
    u = _unitary(U)
    delta = _conj(u, signed_diagonal(d, eps / d))
    return validate_density(np.eye(d) / d + delta)


def nearly_mixed(sigma, eps: float, U) -> DensityMatrix:
    """sigma + U S U^H with S the signed diagonal of magnitude 2 eps / d."""
    s = as_array(sigma)
    d = s.shape[0]
    if d < 2:
        raise BadDim("nearly-mixed instance needs d >= 2")
    if not 0 < eps <= 0.5:
        raise InputError(f"eps must lie in (0, 1/2], got {eps!r}")
    delta_mag = 2.0 * eps / d
    lam_min = float(np.linalg.eigvalsh(s)[0])
    if lam_min < delta_mag:
        raise EigTooSmall(f"min eigenvalue {lam_min:.6g} is below 2 eps / d = {delta_mag:.6g}", lam_min)
    return validate_density(s + _conj(_unitary(U), signed_diagonal(d, delta_mag)))


def _check_bucket_magnitudes(bucketing, eps_j: Mapping[int, float], eps: float) -> float:
    total = 0.0
    for j, e in eps_j.items():
        if j not in bucketing.buckets:
            raise InputError(f"bucket {j} does not exist")
        if e < 0:
            raise InputError(f"eps_{j} is negative ({e!r})")
        cap = 2.0 ** (-j - 1)
        if e > cap * (1 + 1e-12):
            raise MagnitudeTooLarge(f"eps_{j} = {e!r} exceeds the bucket floor 2^-(j+1) = {cap!r}", e)
        total += e * 2 * (len(bucketing.buckets[j]) // 2)
    if total < eps * (1 - FARNESS_RTOL):
        raise FarnessDeficit(f"perturbations reach trace norm {total!r} < eps = {eps!r}", total)
    return total


def bucketed_block(sigma, bucketing, eps_j: Mapping[int, float], unitaries: Mapping[int, object],
                   eps: float) -> DensityMatrix:
    """diag(lambda) plus an independent signed-diagonal Haar perturbation inside each bucket."""
    lam = np.asarray(sigma.values if isinstance(sigma, Spectrum) else sigma, dtype=float)
    if lam.ndim != 1 or tuple(lam) != tuple(bucketing.values):
        raise InputError("sigma must be the eigenvalue list the bucketing was built from")
    _check_bucket_magnitudes(bucketing, eps_j, eps)
    out = np.diag(lam).astype(complex)
    for j, e in eps_j.items():
        idx = list(bucketing.buckets[j])
        if len(idx) < 2 or e == 0:
            continue
        u = _unitary(unitaries[j])
        if u.shape != (len(idx), len(idx)):
            raise BadDim(f"unitary for bucket {j} has shape {u.shape}, expected {(len(idx),) * 2}")
        out[np.ix_(idx, idx)] += _conj(u, signed_diagonal(len(idx), e))
    return validate_density(out)


def descending_frame(sigma) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order (ties by index) and matching eigenvectors.

    Diagonal inputs use the standard basis exactly, so results stay exact.
    """
    m = as_array(sigma)
    d = m.shape[0]
    if not np.any(m - np.diag(np.diag(m))):
        w = np.real(np.diag(m)).copy()
        vecs = np.eye(d, dtype=complex)
    else:
        w, vecs = np.linalg.eigh(m)
    order = np.lexsort((np.arange(d), -w))
    return w[order], vecs[:, order]


def _givens(d: int, sin: float) -> np.ndarray:
    cos = math.sqrt(max(0.0, 1.0 - sin * sin))
    r = np.eye(d, dtype=complex)
    r[0, 0], r[0, 1], r[1, 0], r[1, 1] = cos, -sin, sin, cos
    return r


def rotation_fidelity(l1: float, l2: float, eps: float) -> float:
    """Closed-form fidelity between sigma and its top-two rotation."""
    root = math.sqrt(max(0.0, (l1 + l2) ** 2 - 4 * eps * eps * (l1 - l2) ** 2)) + 1 - l1 - l2
    return root * root


def rotation_instance(sigma, eps: float) -> DensityMatrix:
    """Rotate the top two eigenvectors of sigma by a real Givens rotation with sine 2 eps."""
    w, vecs = descending_frame(sigma)
    if w.size < 2:
        raise SpectrumOutOfRegime("rotation needs at least two eigenvalues")
    l1, l2 = float(w[0]), float(w[1])
    if not (l1 >= 0.5 and l2 <= 0.25 and 0 <= eps < CORNER_EPS_LIMIT):
        raise SpectrumOutOfRegime(
            f"need lambda1 >= 1/2, lambda2 <= 1/4, 0 <= eps < 1/(2 sqrt 2); got {l1:.6g}, {l2:.6g}, {eps!r}"
        )
    r = _givens(w.size, 2.0 * eps)
    inner = r @ np.diag(w).astype(complex) @ r.conj().T
    out = validate_density(vecs @ inner @ vecs.conj().T)
    far = trace_norm(as_array(sigma) - out.matrix)
    fid = fidelity(sigma, out)
    if far < eps - 1e-9 or fid < (1 - 4 * eps * eps) ** 2 - 1e-9:
        raise CertificateViolation(f"rotation certificate failed: distance {far!r}, fidelity {fid!r}")
    return out


def two_by_two_tau(eps: float, u: int) -> np.ndarray:
    return np.array([[-eps * eps, u * eps / 2], [u * eps / 2, eps * eps]], dtype=complex)


def two_by_two_sign(sigma, eps: float, u: int) -> DensityMatrix:
    """sigma + (tau_u (+) 0) in sigma's eigenbasis, tau_u = [[-e^2, u e/2], [u e/2, e^2]]."""
    if u not in (1, -1):
        raise InputError(f"u must be +1 or -1, got {u!r}")
    w, vecs = descending_frame(sigma)
    if w.size < 2:
        raise SpectrumOutOfRegime("sign instance needs at least two eigenvalues")
    if not (float(w[1]) > 0.25 and 0 <= eps < CORNER_EPS_LIMIT):
        raise SpectrumOutOfRegime(
            f"need lambda2 > 1/4 and 0 <= eps < 1/(2 sqrt 2); got lambda2={float(w[1]):.6g}, eps={eps!r}"
        )
    pert = np.zeros((w.size, w.size), dtype=complex)
    pert[:2, :2] = two_by_two_tau(eps, u)
    return validate_density(as_array(sigma) + vecs @ pert @ vecs.conj().T)


def classical_paninski(d: int, eps: float, theta) -> np.ndarray:
    """Uniform distribution with paired shifts ((1 + t eps)/d, (1 - t eps)/d)."""
    if d % 2:
        raise OddDim(f"Paninski construction needs even d, got {d}")
    th = np.asarray(theta, dtype=float)
    if th.shape != (d // 2,) or not np.all(np.abs(th) == 1):
        raise InputError(f"theta must be a +-1 vector of length {d // 2}")
    if not 0 <= eps <= 1:
        raise InputError(f"eps must lie in [0, 1], got {eps!r}")
    p = np.empty(d)
    p[0::2] = (1 + th * eps) / d
    p[1::2] = (1 - th * eps) / d
    return p


# --------------------------------------------------------------------------
# families
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HaarBlock:
    """One independent Haar unitary acting on ``indices`` with signed diagonal ``diag``."""

    indices: tuple[int, ...]
    diag: np.ndarray


@dataclass(frozen=True, eq=False)
class PerturbationFamily:
    """Law of alternatives {rho_theta} around a base state.

    Exactly one of ``deltas`` (finite support, with ``weights``) and
    ``haar_blocks`` (Haar support) is set. Perturbations for Haar kinds are
    built in the basis given by the columns of ``frame`` (identity if None).
    """

    kind: str
    base: DensityMatrix
    eps: float
    params: dict = field(default_factory=dict)
    deltas: tuple[np.ndarray, ...] | None = None
    weights: tuple[float, ...] | None = None
    labels: tuple = ()
    haar_blocks: tuple[HaarBlock, ...] | None = None
    frame: np.ndarray | None = None
    mean_zero: bool = True
    distributions: np.ndarray | None = None  # classical kinds: one row per theta

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown family kind {self.kind!r}")
        if (self.deltas is None) == (self.haar_blocks is None):
            raise InputError("a family needs exactly one of finite support or Haar blocks")
        if self.deltas is not None:
            w = self.weights if self.weights is not None else (1.0 / len(self.deltas),) * len(self.deltas)
            if len(w) != len(self.deltas) or abs(math.fsum(w) - 1) > 1e-12:
                raise InputError("weights must match the support and sum to 1")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def finite(self) -> bool:
        return self.deltas is not None

    def members(self) -> list[tuple[float, np.ndarray]]:
        """(weight, rho_theta) for every support point of a finite family."""
        if not self.finite:
            raise InputError(f"{self.kind} family has Haar support")
        return [(w, self.base.matrix + dl) for w, dl in zip(self.weights, self.deltas)]

    def sample_deltas(self, count: int, rng) -> np.ndarray:
        """``count`` independent draws of rho_theta - sigma, shape (count, d, d)."""
        gen = as_generator(rng)
        d = self.dim
        if self.finite:
            pick = gen.choice(len(self.deltas), size=count, p=np.asarray(self.weights))
            return np.stack(self.deltas)[pick]
        out = np.zeros((count, d, d), dtype=complex)
        for blk in self.haar_blocks:
            idx = np.asarray(blk.indices)
            u = sample_haar_batch(idx.size, count, gen)
            out[:, idx[:, None], idx[None, :]] += kernels.conjugate_diag(u, blk.diag)
        if self.frame is not None:
            out = self.frame[None] @ out @ self.frame.conj().T[None]
        return out

    def sample_states(self, count: int, rng) -> np.ndarray:
        return self.base.matrix[None] + self.sample_deltas(count, rng)

    def discretize(self, k: int, rng) -> "PerturbationFamily":
        """A finite family of ``k`` equally weighted draws from this one."""
        deltas = self.sample_deltas(k, rng)
        return PerturbationFamily(
            kind=self.kind,
            base=self.base,
            eps=self.eps,
            params={**self.params, "discretized_from": "haar" if not self.finite else "finite", "k": k},
            deltas=tuple(dl.copy() for dl in deltas),
            weights=(1.0 / k,) * k,
            labels=tuple(range(k)),
            mean_zero=False,
        )


def quantum_paninski_family(d: int, eps: float) -> PerturbationFamily:
    if d % 2:
        raise OddDim(f"quantum Paninski family needs even d, got {d}")
    if not 0 < eps <= 1:
        raise InputError(f"eps must lie in (0, 1], got {eps!r}")
    return PerturbationFamily(
        kind="quantum_paninski",
        base=DensityMatrix(np.eye(d, dtype=complex) / d),
        eps=float(eps),
        params={"magnitude": eps / d},
        haar_blocks=(HaarBlock(tuple(range(d)), signed_diagonal(d, eps / d)),),
    )


def nearly_mixed_family(sigma: DensityMatrix, eps: float) -> PerturbationFamily:
    d = sigma.dim
    nearly_mixed(sigma, eps, np.eye(d))  # precondition check
    delta = 2.0 * eps / d
    return PerturbationFamily(
        kind="nearly_mixed",
        base=sigma,
        eps=float(eps),
        params={"delta": delta},
        haar_blocks=(HaarBlock(tuple(range(d)), signed_diagonal(d, delta)),),
    )


def bucketed_block_family(sigma, bucketing: LowerBucketing | UpperBucketing,
                          eps_j: Mapping[int, float], eps: float) -> PerturbationFamily:
    lam = np.asarray(sigma.values if isinstance(sigma, Spectrum) else sigma, dtype=float)
    if tuple(lam) != tuple(bucketing.values):
        raise InputError("sigma must be the eigenvalue list the bucketing was built from")
    _check_bucket_magnitudes(bucketing, eps_j, eps)
    blocks = tuple(
        HaarBlock(tuple(bucketing.buckets[j]), signed_diagonal(len(bucketing.buckets[j]), e))
        for j, e in sorted(eps_j.items())
        if len(bucketing.buckets[j]) > 1 and e > 0
    )
    return PerturbationFamily(
        kind="bucketed_block",
        base=DensityMatrix(np.diag(lam).astype(complex)),
        eps=float(eps),
        params={"eps_j": dict(eps_j)},
        haar_blocks=blocks,
    )


def rotation_pair_family(sigma: DensityMatrix, eps: float) -> PerturbationFamily:
    alt = rotation_instance(sigma, eps)
    return PerturbationFamily(
        kind="rotation_pair",
        base=sigma,
        eps=float(eps),
        params={"sin": 2 * eps},
        deltas=(alt.matrix - sigma.matrix,),
        weights=(1.0,),
        labels=("rotated",),
        mean_zero=False,
    )


def two_by_two_sign_family(sigma: DensityMatrix, eps: float) -> PerturbationFamily:
    members = [two_by_two_sign(sigma, eps, u) for u in (1, -1)]
    return PerturbationFamily(
        kind="two_by_two_sign",
        base=sigma,
        eps=float(eps),
        params={},
        deltas=tuple(m.matrix - sigma.matrix for m in members),
        weights=(0.5, 0.5),
        labels=(1, -1),
        # both members shift the diagonal by diag(-eps^2, eps^2)
        mean_zero=False,
    )


def classical_paninski_family(d: int, eps: float, thetas: Sequence[Sequence[int]] | None = None
                              ) -> PerturbationFamily:
    """Paninski distributions embedded as diagonal states; all sign vectors by default."""
    if d % 2:
        raise OddDim(f"Paninski construction needs even d, got {d}")
    if thetas is None:
        thetas = list(itertools.product((1, -1), repeat=d // 2))
    dists = np.array([classical_paninski(d, eps, th) for th in thetas])
    u = np.full(d, 1.0 / d)
    return PerturbationFamily(
        kind="classical_paninski",
        base=DensityMatrix(np.diag(u).astype(complex)),
        eps=float(eps),
        params={"base_distribution": u},
        deltas=tuple(np.diag(p - u).astype(complex) for p in dists),
        weights=(1.0 / len(dists),) * len(dists),
        labels=tuple(tuple(int(t) for t in th) for th in thetas),
        mean_zero=len(thetas) == 2 ** (d // 2),
        distributions=dists,
    )


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyReport:
    kind: str
    passed: bool
    checked: int
    min_farness: float
    farness_margin: float
    mean_deviation: float | None
    violations: tuple[str, ...]


def validate_family(family: PerturbationFamily, n_samples: int = 1000, rng=0,
                    tol: float = DEFAULT_TOL) -> FamilyReport:
    """Check validity, farness and (where claimed) mean zero of a family.

    Finite families are checked member by member and their mean exactly;
    Haar families on ``n_samples`` draws, with a 5-standard-error mean test.
    """
    violations: list[str] = []
    if family.kind == "bucketed_block":
        for j, e in family.params.get("eps_j", {}).items():
            if e > 2.0 ** (-j - 1) * (1 + 1e-12):
                violations.append(f"magnitude_cap: eps_{j}={e!r} > 2^-(j+1)")
    deltas = np.stack(family.deltas) if family.finite else family.sample_deltas(n_samples, rng)
    weights = np.asarray(family.weights) if family.finite else None
    base = family.base.matrix
    farness = []
    for k, dl in enumerate(deltas):
        try:
            validate_density(base + dl, tol)
        except ValidationError as exc:
            violations.append(f"invalid_member[{k}]: {type(exc).__name__}: {exc}")
        farness.append(trace_norm(dl))
    farness = np.asarray(farness)
    min_far = float(farness.min())
    if min_far < family.eps - tol:
        violations.append(f"farness: min trace norm {min_far!r} < eps={family.eps!r}")
    mean_dev = None
    if family.mean_zero:
        if family.finite:
            mean = np.tensordot(weights, deltas, axes=1)
            mean_dev = float(np.max(np.abs(mean)))
            if mean_dev > 1e-12:
                violations.append(f"mean_zero: max |E delta| = {mean_dev!r}")
        else:
            mean = deltas.mean(axis=0)
            se = deltas.std(axis=0, ddof=1) / math.sqrt(len(deltas))
            # entries that never move must be exactly zero on average
            z = np.where(se > 0, np.abs(mean) / np.where(se > 0, se, 1.0),
                         np.where(np.abs(mean) > 1e-12, np.inf, 0.0))
            mean_dev = float(np.max(z))
            if mean_dev > 5.0:
                violations.append(f"mean_zero: max |mean|/se = {mean_dev!r} > 5")
    return FamilyReport(
        kind=family.kind,
        passed=not violations,
        checked=len(deltas),
        min_farness=min_far,
        farness_margin=min_far - family.eps,
        mean_deviation=mean_dev,
        violations=tuple(violations[:20]),
    )
