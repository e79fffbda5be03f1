"""Chi-square divergences of n-copy mixtures, through the pairwise kernel and by brute force.

The mixture divergence ``D(E rho_theta^n || sigma^n)`` equals
``E (1 + Z(theta, theta'))^n - 1`` with
``Z = tr(sigma^-1 (rho_theta - sigma)(rho_theta' - sigma))``. The kernel side
is computed here in exact or Monte Carlo mode, and the tensor side by
building both n-copy states explicitly, so the two can check each other.

Z is complex when sigma does not commute with the perturbations. Swapping
theta and theta' conjugates it, so expectations of real-analytic functions of
Z are real. Powers and exponentials are therefore taken of the complex Z and
only their averages are reduced to the real part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from certlab import kernels
from certlab.errors import InfiniteSupport, InputError, SingularSigma, TooLarge, ZeroMassCell
from certlab.haar import CHUNK, as_generator
from certlab.instances import PerturbationFamily
from certlab.linalg import DEFAULT_TOL, as_array, kron_power, quantum_chi2, trace_distance

MAX_TENSOR_DIM = 512
MAX_CLASSICAL_OUTCOMES = 4096
DEFAULT_SAMPLES = 100_000
# eigenvalues of sigma^(x)n can be legitimately tiny, so the n-copy oracle
# only treats numerically-zero directions as kernel
TENSOR_KERNEL_TOL = 1e-13

EXACT = "exact"
MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    mode: str
    n_copies: float
    samples: int | None = None
    std_error: float | None = None


class _Frame:
    """sigma's eigenbasis restricted to its support, with the inverse eigenvalues."""

    def __init__(self, sigma, tol: float = DEFAULT_TOL):
        m = as_array(sigma)
        if not np.any(m - np.diag(np.diag(m))):
            w = np.real(np.diag(m)).copy()
            self.vecs = None
        else:
            w, self.vecs = np.linalg.eigh(m)
        self.support = w > tol
        self.singular = not bool(np.all(self.support))
        self.inv = 1.0 / w[self.support]
        self.tol = tol

    def restrict(self, deltas: np.ndarray) -> np.ndarray:
        """Rotate perturbations into the frame and drop sigma's kernel.

        Raises SingularSigma when a member puts weight on the kernel.
        """
        x = deltas
        if self.vecs is not None:
            x = self.vecs.conj().T[None] @ x @ self.vecs[None]
        if not self.singular:
            return x
        ker = ~self.support
        leak = x[:, ker][:, :, ker]
        worst = float(np.max(np.abs(np.linalg.eigvalsh(leak)))) if leak.size else 0.0
        if worst > self.tol:
            raise SingularSigma(f"a family member has weight {worst:.3g} outside the support of sigma", worst)
        sup = self.support
        return np.ascontiguousarray(x[:, sup][:, :, sup])

    def pair_z(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return kernels.pair_kernel(self.restrict(a), self.restrict(b), self.inv)


def _sigma_of(family: PerturbationFamily, sigma):
    return family.base if sigma is None else sigma


def kernel_Z(rho_a, rho_b, sigma) -> complex:
    """tr(sigma^-1 (rho_a - sigma)(rho_b - sigma)) on the support of sigma."""
    s = as_array(sigma)
    a, b = as_array(rho_a) - s, as_array(rho_b) - s
    frame = _Frame(s)
    return complex(frame.pair_z(a[None], b[None])[0])


def _check_n(n) -> None:
    if n < 0:
        raise InputError(f"number of copies must be nonnegative, got {n!r}")


def kernel_matrix(family: PerturbationFamily, sigma=None) -> np.ndarray:
    """Complex Z over all ordered pairs of support points of a finite family."""
    if not family.finite:
        raise InfiniteSupport(f"{family.kind} family has Haar support; discretize it first")
    frame = _Frame(_sigma_of(family, sigma))
    x = frame.restrict(np.stack(family.deltas))
    return np.einsum("a,iab,kba->ik", frame.inv.astype(complex), x, x)


def sample_pair_kernels(family: PerturbationFamily, sigma, samples: int, rng) -> np.ndarray:
    """Complex Z for ``samples`` independent pairs (theta, theta'), streamed in fixed-size chunks."""
    if samples < 1:
        raise InputError(f"need at least one sample, got {samples}")
    frame = _Frame(_sigma_of(family, sigma))
    gen = as_generator(rng)
    out = np.empty(samples, dtype=complex)
    for start in range(0, samples, CHUNK):
        stop = min(samples, start + CHUNK)
        a = family.sample_deltas(stop - start, gen)
        b = family.sample_deltas(stop - start, gen)
        out[start:stop] = frame.pair_z(a, b)
    return out


def _mc(values: np.ndarray, n) -> DivergenceEstimate:
    values = np.real(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return DivergenceEstimate(mean - 1.0, MONTE_CARLO, n, int(values.size), se)


def chi2_kernel(family: PerturbationFamily, sigma=None, n: int = 1, mode: str = EXACT,
                samples: int = DEFAULT_SAMPLES, rng=0) -> DivergenceEstimate:
    """E (1 + Z)^n - 1, over all support pairs or over sampled pairs."""
    _check_n(n)
    if mode == EXACT:
        z = kernel_matrix(family, sigma)
        w = np.asarray(family.weights)
        val = float(np.real(w @ (1.0 + z) ** n @ w)) - 1.0
        return DivergenceEstimate(val, EXACT, n)
    if mode != MONTE_CARLO:
        raise InputError(f"unknown mode {mode!r}")
    z = sample_pair_kernels(family, sigma, samples, rng)
    return _mc((1.0 + z) ** n, n)


def chi2_exp_upper(family: PerturbationFamily, sigma=None, n: float = 1, samples: int = DEFAULT_SAMPLES,
                   rng=0, mode: str = MONTE_CARLO) -> DivergenceEstimate:
    """E exp(n Z) - 1, which dominates the kernel form pair by pair whenever Z is real."""
    _check_n(n)
    if mode == EXACT:
        z = kernel_matrix(family, sigma)
        w = np.asarray(family.weights)
        return DivergenceEstimate(float(np.real(w @ np.exp(n * z) @ w)) - 1.0, EXACT, n)
    z = sample_pair_kernels(family, sigma, samples, rng)
    return _mc(np.exp(n * z), n)


def chi2_exp_upper_curve(family: PerturbationFamily, sigma=None, ns=(1,), samples: int = DEFAULT_SAMPLES,
                         rng=0) -> list[DivergenceEstimate]:
    """E exp(n Z) - 1 for every n in ``ns`` from one shared set of sampled pairs."""
    for n in ns:
        _check_n(n)
    z = sample_pair_kernels(family, sigma, samples, rng)
    return [_mc(np.exp(n * z), n) for n in ns]


def paired_estimates(family: PerturbationFamily, sigma, n: int, samples: int, rng
                     ) -> tuple[DivergenceEstimate, DivergenceEstimate, np.ndarray]:
    """Kernel and exponential estimates from one shared set of sampled pairs."""
    z = sample_pair_kernels(family, sigma, samples, rng)
    return _mc((1.0 + z) ** n, n), _mc(np.exp(n * z), n), z


def _mixture_power(family: PerturbationFamily, sigma, n: int) -> tuple[np.ndarray, np.ndarray]:
    if not family.finite:
        raise InfiniteSupport(f"{family.kind} family has Haar support; discretize it first")
    s = as_array(_sigma_of(family, sigma))
    d = s.shape[0]
    if d**n > MAX_TENSOR_DIM:
        raise TooLarge(f"d^n = {d**n} exceeds {MAX_TENSOR_DIM}", float(d**n))
    mix = sum(w * kron_power(rho, n) for w, rho in family.members())
    return mix, kron_power(s, n)


def chi2_tensor_exact(family: PerturbationFamily, sigma=None, n: int = 1) -> DivergenceEstimate:
    """Chi-square divergence of the explicit n-copy mixture from sigma^(x)n."""
    _check_n(n)
    mix, ref = _mixture_power(family, sigma, n)
    return DivergenceEstimate(float(quantum_chi2(mix, ref, tol=TENSOR_KERNEL_TOL)), EXACT, n)


def helstrom_success(family: PerturbationFamily, sigma=None, n: int = 1) -> float:
    """Optimal probability of telling the n-copy mixture from sigma^(x)n."""
    _check_n(n)
    mix, ref = _mixture_power(family, sigma, n)
    return 0.5 + 0.5 * trace_distance(mix, ref)


# --------------------------------------------------------------------------
# classical
# --------------------------------------------------------------------------

def _classical_parts(family, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(family, PerturbationFamily):
        if family.distributions is None:
            raise InputError(f"{family.kind} family has no classical distributions")
        dists, weights = family.distributions, np.asarray(family.weights)
        if u is None:
            u = family.params["base_distribution"]
    else:
        dists = np.atleast_2d(np.asarray(family, dtype=float))
        weights = np.full(len(dists), 1.0 / len(dists))
    base = np.asarray(u, dtype=float)
    if np.any(base <= 0):
        raise ZeroMassCell(f"base distribution has a zero cell (min {base.min()!r})", float(base.min()))
    return dists, weights, base


def classical_kernel_matrix(family, u=None) -> np.ndarray:
    dists, _, base = _classical_parts(family, u)
    centered = dists - base
    return (centered / base) @ centered.T


def classical_chi2(family, u=None, n: int = 1, mode: str = EXACT, samples: int = DEFAULT_SAMPLES,
                   rng=0) -> DivergenceEstimate:
    """E (1 + H)^n - 1 with H = sum_x (p_theta - u)(p_theta' - u) / u."""
    _check_n(n)
    dists, weights, base = _classical_parts(family, u)
    if mode == EXACT:
        h = classical_kernel_matrix(family, base)
        return DivergenceEstimate(float(weights @ (1.0 + h) ** n @ weights) - 1.0, EXACT, n)
    gen = as_generator(rng)
    i = gen.choice(len(dists), size=samples, p=weights)
    k = gen.choice(len(dists), size=samples, p=weights)
    centered = dists - base
    h = np.einsum("kx,kx->k", centered[i] / base, centered[k])
    return _mc((1.0 + h) ** n, n)


def classical_chi2_bruteforce(family, u=None, n: int = 1) -> float:
    """Sum over all d^n outcome sequences of (P - U)^2 / U."""
    _check_n(n)
    dists, weights, base = _classical_parts(family, u)
    d = base.size
    if d**n > MAX_CLASSICAL_OUTCOMES:
        raise TooLarge(f"d^n = {d**n} exceeds {MAX_CLASSICAL_OUTCOMES}", float(d**n))

    def power(vec):
        out = np.ones(1)
        for _ in range(n):
            out = np.kron(out, vec)
        return out

    mix = sum(w * power(p) for w, p in zip(weights, dists))
    ref = power(base)
    return float(np.sum((mix - ref) ** 2 / ref))


# --------------------------------------------------------------------------
# closed-form bounds
# --------------------------------------------------------------------------

def mixedness_bound(d: int, eps: float, n: float) -> float:
    """exp(12 n^2 eps^4 / d^2) - 1."""
    return math.expm1(12.0 * n * n * eps**4 / (d * d))


def inverse_hs_norm(sigma) -> float:
    w = np.linalg.eigvalsh(as_array(sigma))
    if w[0] <= 0:
        raise SingularSigma("sigma is singular", float(w[0]))
    return float(math.sqrt(np.sum(1.0 / w**2)))


def nearly_mixed_bound(sigma, eps: float, n: float) -> float:
    """exp(48 n^2 ||sigma^-1||_2^2 delta^4 / d) - 1 with delta = 2 eps / d."""
    d = as_array(sigma).shape[0]
    delta = 2.0 * eps / d
    return math.expm1(48.0 * n * n * inverse_hs_norm(sigma) ** 2 * delta**4 / d)


def nearly_mixed_critical_n(sigma, eps: float) -> float:
    """The copy count 0.02 sqrt(d) / (||sigma^-1||_2 delta^2) at which the bound is about 0.02."""
    d = as_array(sigma).shape[0]
    delta = 2.0 * eps / d
    return 0.02 * math.sqrt(d) / (inverse_hs_norm(sigma) * delta * delta)
