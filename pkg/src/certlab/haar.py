"""Reproducible Haar-random unitaries and statistical checks of Haar facts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from certlab import kernels
from certlab.errors import BadDim, InputError, NonTraceless

MIN_MGF_SAMPLES = 10_000
# batch size for streaming Monte Carlo; fixed so results never depend on memory
CHUNK = 4096


@dataclass(frozen=True)
class RngSeed:
    """A (seed, stream) pair; equal pairs always give equal random streams."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InputError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if int(self.stream_id) < 0:
            raise InputError(f"stream_id must be nonnegative, got {self.stream_id!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, k: int) -> "RngSeed":
        """A child stream, distinct from every other ``(seed, stream_id)``."""
        return RngSeed(self.seed, self.stream_id * 1_000_003 + k + 1)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSeed):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngSeed(int(rng)).generator()
    raise InputError(f"cannot build a random generator from {type(rng).__name__}")


@dataclass(frozen=True, eq=False)
class HaarSample:
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def unitarity_defect(self) -> float:
        u = self.matrix
        return float(np.max(np.abs(u.conj().T @ u - np.eye(self.dim))))


def sample_haar_batch(dim: int, count: int, rng) -> np.ndarray:
    """``count`` independent Haar unitaries as a ``(count, dim, dim)`` array.

    Complex Ginibre matrix, QR, then each column multiplied by the phase of
    the matching diagonal entry of R. Without that last step the law of Q
    depends on the LAPACK sign convention and is not Haar.
    """
    if int(dim) < 1:
        raise BadDim(f"dimension must be at least 1, got {dim!r}")
    gen = as_generator(rng)
    shape = (int(count), int(dim), int(dim))
    z = (gen.standard_normal(shape) + 1j * gen.standard_normal(shape)) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=1, axis2=2)
    mag = np.abs(diag)
    phase = np.where(mag > 0, diag / np.where(mag > 0, mag, 1.0), 1.0)
    return q * phase[:, None, :]


def sample_haar(dim: int, rng) -> HaarSample:
    return HaarSample(int(dim), sample_haar_batch(dim, 1, rng)[0].copy())


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


@dataclass(frozen=True)
class MgfCheck:
    empirical_mgf: float
    bound: float
    std_error: float
    lipschitz: float
    samples: int
    passed: bool


def mgf_lipschitz(dim: int, sigma_diag, t: float) -> float:
    """Lipschitz constant of U -> t tr(U^H S U S) in Frobenius norm.

    Uses 2|t| sqrt(d) ||S||_op^2, which dominates the sharper
    2|t| ||S||_op ||S||_2 and equals it for unit-modulus entries.
    """
    s = np.asarray(sigma_diag, dtype=float)
    return 2.0 * abs(t) * math.sqrt(dim) * float(np.max(np.abs(s))) ** 2


def verify_mgf_bound(dim: int, sigma_diag, t: float, n_samples: int, rng) -> MgfCheck:
    """Monte Carlo check of E exp(t tr(U^H S U S)) <= exp(3 L^2 / d).

    The check is one-sided: it passes when the empirical mean minus three
    standard errors does not exceed the bound.
    """
    s = np.asarray(sigma_diag, dtype=float)
    if s.shape != (dim,):
        raise BadDim(f"diagonal has length {s.size}, expected {dim}")
    if abs(float(np.sum(s))) > 1e-12 * max(1.0, float(np.sum(np.abs(s)))):
        raise NonTraceless(f"diagonal must be traceless, sums to {float(np.sum(s))!r}", float(np.sum(s)))
    if n_samples < MIN_MGF_SAMPLES:
        raise InputError(f"need at least {MIN_MGF_SAMPLES} samples, got {n_samples}")
    lip = mgf_lipschitz(dim, s, t)
    bound = math.exp(3.0 * lip * lip / dim)
    gen = as_generator(rng)
    vals = np.empty(n_samples)
    for start in range(0, n_samples, CHUNK):
        stop = min(n_samples, start + CHUNK)
        u = sample_haar_batch(dim, stop - start, gen)
        vals[start:stop] = kernels.haar_quadratic(u, s)
    expo = np.exp(t * vals)
    mean, se = _mean_and_se(expo)
    return MgfCheck(mean, bound, se, lip, n_samples, bool(mean - 3.0 * se <= bound))


def conjugation_mean(sigma_diag, n_samples: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Entrywise mean and standard error of U S U^H over Haar U."""
    s = np.asarray(sigma_diag, dtype=float)
    d = s.size
    gen = as_generator(rng)
    total = np.zeros((d, d), dtype=complex)
    total_sq = np.zeros((d, d))
    for start in range(0, n_samples, CHUNK):
        stop = min(n_samples, start + CHUNK)
        m = kernels.conjugate_diag(sample_haar_batch(d, stop - start, gen), s)
        total += m.sum(axis=0)
        # variance of real and imaginary parts pooled
        total_sq += (np.abs(m) ** 2).sum(axis=0)
    mean = total / n_samples
    var = (total_sq / n_samples - np.abs(mean) ** 2) * n_samples / max(1, n_samples - 1)
    return mean, np.sqrt(np.clip(var, 0.0, None) / n_samples)


def quadratic_mean(sigma_diag, n_samples: int, rng) -> tuple[float, float]:
    """Mean and standard error of tr(U^H S U S) over Haar U."""
    s = np.asarray(sigma_diag, dtype=float)
    gen = as_generator(rng)
    vals = np.concatenate(
        [
            kernels.haar_quadratic(sample_haar_batch(s.size, min(CHUNK, n_samples - a), gen), s)
            for a in range(0, n_samples, CHUNK)
        ]
    )
    return _mean_and_se(vals)
