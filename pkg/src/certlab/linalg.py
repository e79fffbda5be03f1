"""Validated density matrices plus the distance, divergence and norm functionals.

Everything here is a deterministic function of exact inputs. Matrices are
numpy ``complex128`` arrays; validated states are wrapped in
:class:`DensityMatrix`, which freezes its array so it can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from certlab.errors import (
    BadTrace,
    DimMismatch,
    InvariantViolation,
    NonPositiveP,
    NotHermitian,
    NotPSD,
    NotSquare,
    OutsideBlochBall,
)

DEFAULT_TOL = 1e-9

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A Hermitian, positive semidefinite, unit-trace matrix.

    Construct through :func:`validate_density`; the constructor itself
    trusts its input. The wrapped array is read-only.
    """

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues, clamped at zero."""
        w = np.linalg.eigvalsh(self.matrix)
        return np.clip(w, 0.0, None)

    def spectrum(self) -> "Spectrum":
        return Spectrum(tuple(float(x) for x in self.eigenvalues[::-1]), "descending")

    def is_diagonal(self) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return not np.any(off)

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return self.matrix.shape == other.matrix.shape and bool(
            np.array_equal(self.matrix, other.matrix)
        )

    __hash__ = None


ORDER_TAGS = ("descending", "lower-scheme-order", "unspecified")


@dataclass(frozen=True)
class Spectrum:
    """A list of nonnegative eigenvalues with an ordering label.

    ``mass`` is the total the values must add up to: 1 for a state, less for
    the zeroed-out spectra produced by the bucketing schemes.
    """

    values: tuple[float, ...]
    order_tag: str = "unspecified"
    mass: float = 1.0

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if self.order_tag not in ORDER_TAGS:
            raise InvariantViolation(f"order_tag must be one of {ORDER_TAGS}, got {self.order_tag!r}")
        if not vals:
            raise InvariantViolation("spectrum is empty")
        low = min(vals)
        if low < 0 or not all(math.isfinite(v) for v in vals):
            raise InvariantViolation(f"spectrum has a negative or non-finite value ({low!r})", low)
        total = math.fsum(vals)
        if abs(total - self.mass) > DEFAULT_TOL:
            raise InvariantViolation(
                f"spectrum sums to {total!r}, expected {self.mass!r}", abs(total - self.mass)
            )

    @property
    def dim(self) -> int:
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    @classmethod
    def from_values(cls, values: Sequence[float], order_tag: str = "unspecified") -> "Spectrum":
        """Build a unit-mass spectrum, sorting into descending order if asked."""
        vals = [float(v) for v in values]
        if order_tag == "descending":
            vals = sorted(vals, reverse=True)
        return cls(tuple(vals), order_tag)


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        r2 = self.x * self.x + self.y * self.y + self.z * self.z
        if r2 > 1 + 1e-12:
            raise OutsideBlochBall(f"Bloch vector has squared length {r2!r} > 1", r2)

    def array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def as_array(x) -> np.ndarray:
    """Return the complex matrix behind a DensityMatrix or array-like."""
    if isinstance(x, DensityMatrix):
        return x.matrix
    return np.asarray(x, dtype=complex)


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape} vs {b.shape}")


def hermitian_part(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Principal square root of a psd matrix.

    Eigenvalues below the rounding floor ``d * eps_machine * max|w|`` are
    set to zero; their square roots would be pure noise of order 1e-8.
    """
    w, v = np.linalg.eigh(hermitian_part(m))
    floor = w.size * np.finfo(float).eps * float(np.max(np.abs(w), initial=0.0))
    w = np.sqrt(np.where(w > floor, w, 0.0))
    return (v * w) @ v.conj().T


def kron_power(m: np.ndarray, n: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for _ in range(n):
        out = np.kron(out, m)
    return out


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(np.eye(dim, dtype=complex) / dim)


def diagonal_state(values: Sequence[float], tol: float = DEFAULT_TOL) -> DensityMatrix:
    return validate_density(np.diag(np.asarray(values, dtype=float)).astype(complex), tol)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def validate_density(raw, tol: float = DEFAULT_TOL) -> DensityMatrix:
    """Check a raw matrix against the density-matrix invariants.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero. When clamping is not
    needed the (symmetrized) input is kept entry for entry.
    """
    m = np.array(raw, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise NotSquare(f"matrix must be square and nonempty, got shape {m.shape}")
    asym = float(np.max(np.abs(m - m.conj().T)))
    if asym > tol:
        raise NotHermitian(f"matrix is not Hermitian: max |M - M^H| = {asym:.3g}", asym)
    m = hermitian_part(m)
    w, v = np.linalg.eigh(m)
    if w[0] < -tol:
        raise NotPSD(f"matrix is not psd: min eigenvalue {w[0]:.6g}", float(w[0]))
    tr = float(np.real(np.trace(m)))
    if abs(tr - 1.0) > tol:
        raise BadTrace(f"trace is {tr:.12g}, expected 1", abs(tr - 1.0))
    if w[0] < 0:
        m = (v * np.clip(w, 0.0, None)) @ v.conj().T
        m = hermitian_part(m)
    return DensityMatrix(m)


# --------------------------------------------------------------------------
# functionals
# --------------------------------------------------------------------------

def trace_norm(m) -> float:
    """Schatten-1 norm of a Hermitian matrix."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(hermitian_part(as_array(m))))))


def trace_distance(rho, sigma) -> float:
    a, b = as_array(rho), as_array(sigma)
    _check_same_dim(a, b)
    return 0.5 * trace_norm(a - b)


def schatten(m, p: float) -> float:
    """Schatten-p (quasi)norm of a Hermitian matrix.

    A one-dimensional input is taken to be the list of eigenvalues already.
    """
    if not p > 0:
        raise NonPositiveP(f"Schatten exponent must be positive, got {p!r}", p)
    if isinstance(m, Spectrum):
        arr = m.array()
    elif isinstance(m, DensityMatrix):
        arr = m.matrix
    else:
        arr = np.asarray(m)
    if arr.ndim == 1:
        mu = np.abs(arr.astype(float))
    else:
        mu = np.abs(np.linalg.eigvalsh(hermitian_part(arr.astype(complex))))
    if mu.size == 0:
        return 0.0
    if p == 1:
        return float(np.sum(mu))
    return float(np.sum(mu**p) ** (1.0 / p))


def half_norm(values) -> float:
    """The 1/2-quasinorm (sum of square roots, squared) of nonnegative values."""
    vals = np.asarray(values, dtype=float)
    return float(np.sum(np.sqrt(np.clip(vals, 0.0, None))) ** 2)


def fidelity(rho, sigma) -> float:
    """(tr |sqrt(rho) sqrt(sigma)|)^2."""
    a, b = as_array(rho), as_array(sigma)
    _check_same_dim(a, b)
    s = np.linalg.svd(psd_sqrt(a) @ psd_sqrt(b), compute_uv=False)
    return float(min(1.0, np.sum(s) ** 2))


def bloch_to_density(b: BlochVector) -> DensityMatrix:
    m = 0.5 * (np.eye(2, dtype=complex) + b.x * _PAULI[0] + b.y * _PAULI[1] + b.z * _PAULI[2])
    return validate_density(m)


def density_to_bloch(rho) -> BlochVector:
    m = as_array(rho)
    if m.shape != (2, 2):
        raise DimMismatch(f"Bloch vectors need a qubit state, got shape {m.shape}")
    comps = [float(np.real(np.trace(m @ p))) for p in _PAULI]
    return BlochVector(*comps)


def fidelity_qubit(a: BlochVector, b: BlochVector) -> float:
    av, bv = a.array(), b.array()
    # 1 - |r|^2 within rounding of zero is a pure state; its square root would be noise
    floor = 4.0 * np.finfo(float).eps
    gaps = [g if g > floor else 0.0 for g in (1.0 - av @ av, 1.0 - bv @ bv)]
    rad = gaps[0] * gaps[1]
    return float(0.5 * (1.0 + av @ bv + math.sqrt(rad)))


def quantum_chi2(rho, sigma, tol: float = DEFAULT_TOL) -> float:
    """tr(sigma^-1 (rho - sigma)^2), infinite when rho leaks into ker(sigma).

    For singular sigma the divergence is evaluated on the image of sigma,
    provided the compression of rho onto ker(sigma) has operator norm at
    most ``tol``.
    """
    a, b = as_array(rho), as_array(sigma)
    _check_same_dim(a, b)
    w, v = np.linalg.eigh(hermitian_part(b))
    support = w > tol
    a_frame = v.conj().T @ a @ v
    if not np.all(support):
        ker = ~support
        leak = a_frame[np.ix_(ker, ker)]
        if np.max(np.abs(np.linalg.eigvalsh(hermitian_part(leak)))) > tol:
            return math.inf
        a_frame = a_frame[np.ix_(support, support)]
        w = w[support]
    diff = a_frame - np.diag(w)
    # sum_i (1/w_i) sum_k |diff_ik|^2, which is manifestly nonnegative
    return float(np.sum(np.sum(np.abs(diff) ** 2, axis=1) / w))


# --------------------------------------------------------------------------
# JSON schema shared by every command
# --------------------------------------------------------------------------

def density_to_json(rho) -> dict:
    m = as_array(rho)
    return {
        "dim": int(m.shape[0]),
        "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in m],
    }


def density_from_json(obj: dict, tol: float = DEFAULT_TOL) -> DensityMatrix:
    from certlab.errors import ParseError

    try:
        dim = int(obj["dim"])
        rows = obj["matrix"]
        m = np.array([[complex(e[0], e[1]) for e in row] for row in rows], dtype=complex)
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ParseError(f"malformed density-matrix object: {exc}") from exc
    if m.shape != (dim, dim):
        raise ParseError(f"field 'matrix' has shape {m.shape}, but 'dim' is {dim}")
    return validate_density(m, tol)
