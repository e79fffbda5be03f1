"""A frozen corpus of hypothesis states, far alternatives and a batch runner for the certifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from certlab.certifier import EQUAL, FAR, CertifierConfig, HSOracleSpec, case_conditions, certify
from certlab.errors import CertificateViolation, FarnessDeficit
from certlab.haar import RngSeed, sample_haar_batch
from certlab.linalg import half_norm, trace_norm
from certlab.bucketing import upper_bucketing

FAR_FAMILIES = ("spectral_shift", "haar_mixture", "unitary_rotation")
CELLS = ("equal",) + FAR_FAMILIES
CORPUS_SEED = 20240601
DEFAULT_EPS = 0.25
DEFAULT_DELTA = 0.1
# far alternatives sit at twice the certification distance
FARNESS_FACTOR = 2.0
FARNESS_ATOL = 1e-9
DEGENERACY_TOL = 1e-12


@dataclass(frozen=True)
class CorpusState:
    name: str
    sigma: np.ndarray
    index: int

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


def _normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x / x.sum()


def _spectra(dim: int, gen: np.random.Generator) -> dict[str, np.ndarray]:
    d = dim
    half = np.zeros(d)
    half[: d // 2] = 1.0
    rank3 = np.zeros(d)
    rank3[:3] = 1.0
    two_scale = np.full(d, 1.0)
    two_scale[-1] = 1.0 / d
    nearly_pure = np.full(d, 0.02 / (d - 1))
    nearly_pure[0] = 0.98
    return {
        "pure": np.eye(d)[0],
        "flat": np.full(d, 1.0 / d),
        "flat_half": _normalize(half),
        "geometric": _normalize(0.5 ** np.arange(d)),
        "two_scale": _normalize(two_scale),
        "dirichlet": _normalize(gen.dirichlet(np.ones(d))),
        "flat_rank3": _normalize(rank3),
        "nearly_pure": _normalize(nearly_pure),
    }


# (dimension, spectrum, rotated) for the 20 frozen states
_LAYOUT = (
    (4, "pure", False), (4, "flat", False), (4, "flat_half", False), (4, "geometric", False),
    (4, "dirichlet", True), (4, "nearly_pure", False),
    (8, "pure", True), (8, "flat", False), (8, "flat_half", True), (8, "geometric", False),
    (8, "two_scale", False), (8, "dirichlet", False), (8, "flat_rank3", True),
    (16, "pure", False), (16, "flat", False), (16, "flat_half", False), (16, "geometric", True),
    (16, "two_scale", False), (16, "dirichlet", True), (16, "nearly_pure", False),
)


def corpus_states(seed: int = CORPUS_SEED) -> list[CorpusState]:
    """Twenty hypothesis states over d in {4, 8, 16}, some in a Haar-rotated basis."""
    out = []
    for k, (d, kind, rotated) in enumerate(_LAYOUT):
        gen = RngSeed(seed, k).generator()
        values = _spectra(d, gen)[kind]
        sigma = np.diag(values).astype(complex)
        if rotated:
            u = sample_haar_batch(d, 1, gen)[0]
            sigma = u @ sigma @ u.conj().T
            sigma = 0.5 * (sigma + sigma.conj().T)
        out.append(CorpusState(f"d{d}_{kind}{'_rot' if rotated else ''}", sigma, k))
    return out


# --------------------------------------------------------------------------
# far families
# --------------------------------------------------------------------------

def _mix_toward(sigma: np.ndarray, target: np.ndarray, distance: float) -> np.ndarray:
    gap = trace_norm(target - sigma)
    t = distance / gap
    if t > 1.0:
        raise FarnessDeficit(f"target is only {gap:.3g} away, need {distance:.3g}", gap)
    return (1.0 - t) * sigma + t * target


def spectral_shift(sigma: np.ndarray, distance: float) -> np.ndarray:
    """Move weight onto sigma's least-weighted eigenvector."""
    w, v = np.linalg.eigh(sigma)
    e = v[:, 0]
    return _mix_toward(sigma, np.outer(e, e.conj()), distance)


def haar_mixture(sigma: np.ndarray, distance: float, gen: np.random.Generator) -> np.ndarray:
    """Mix in a Haar-random pure state, redrawn until it is far enough away."""
    d = sigma.shape[0]
    for _ in range(100):
        psi = sample_haar_batch(d, 1, gen)[0][:, 0]
        target = np.outer(psi, psi.conj())
        if trace_norm(target - sigma) >= distance:
            return _mix_toward(sigma, target, distance)
    raise FarnessDeficit("no Haar pure state far enough from sigma", distance)


def _degenerate_perturbation(sigma: np.ndarray, distance: float, gen: np.random.Generator) -> np.ndarray:
    """Paninski-style signed perturbation inside sigma's heaviest degenerate eigenspace."""
    w, v = np.linalg.eigh(sigma)
    clusters: list[list[int]] = []
    for i in range(w.size):
        if clusters and abs(w[i] - w[clusters[-1][0]]) <= DEGENERACY_TOL:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    best = max(clusters, key=lambda c: 2 * (len(c) // 2) * w[c[0]])
    k = 2 * (len(best) // 2)
    if k == 0 or k * w[best[0]] < distance:
        raise FarnessDeficit("no degenerate eigenspace can absorb the requested perturbation", distance)
    basis = v[:, best[:k]] @ sample_haar_batch(k, 1, gen)[0]
    signs = np.tile([-1.0, 1.0], k // 2) * (distance / k)
    out = sigma + (basis * signs) @ basis.conj().T
    return 0.5 * (out + out.conj().T)


def unitary_rotation(sigma: np.ndarray, distance: float, gen: np.random.Generator) -> np.ndarray:
    """Conjugate by exp(i theta H) for a random Hermitian H, theta set by bisection.

    When the unitary orbit of sigma never gets far enough (sigma proportional
    to the identity, or too little spread in its spectrum), the state gets a
    Paninski-style perturbation in a Haar-random basis of a degenerate
    eigenspace instead.
    """
    d = sigma.shape[0]
    g = gen.standard_normal((d, d)) + 1j * gen.standard_normal((d, d))
    h = 0.5 * (g + g.conj().T)

    def rotated(theta):
        u = expm(1j * theta * h)
        return u @ sigma @ u.conj().T

    def gap(theta):
        return trace_norm(rotated(theta) - sigma)

    grid = np.linspace(0.0, math.pi, 257)[1:]
    hit = next((th for th in grid if gap(th) >= distance), None)
    if hit is None:
        return _degenerate_perturbation(sigma, distance, gen)
    lo, hi = 0.0, float(hit)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) >= distance:
            hi = mid
        else:
            lo = mid
    out = rotated(hi)
    return 0.5 * (out + out.conj().T)


def far_instance(state: CorpusState, family: str, eps: float, seed: int = CORPUS_SEED) -> np.ndarray:
    """The frozen far alternative of ``family`` for ``state`` at distance twice eps."""
    distance = FARNESS_FACTOR * eps
    index = FAR_FAMILIES.index(family)
    gen = RngSeed(seed, 1000 + 10 * state.index + index).generator()
    if family == "spectral_shift":
        rho = spectral_shift(state.sigma, distance)
    elif family == "haar_mixture":
        rho = haar_mixture(state.sigma, distance, gen)
    else:
        rho = unitary_rotation(state.sigma, distance, gen)
    achieved = trace_norm(rho - state.sigma)
    if achieved < distance - FARNESS_ATOL:
        raise CertificateViolation(f"{family} instance reached {achieved!r}, wanted {distance!r}", achieved)
    return rho


# --------------------------------------------------------------------------
# batch runner
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CellResult:
    state: str
    dim: int
    cell: str
    runs: int
    correct: int
    mean_copies: float
    quasinorm_star: float
    m: int
    repetitions: int
    trichotomy: bool | None

    @property
    def accuracy(self) -> float:
        return self.correct / self.runs


def run_cell(state: CorpusState, cell: str, runs: int, eps: float = DEFAULT_EPS,
             delta: float = DEFAULT_DELTA, oracle: HSOracleSpec | None = None, seed: int = 0) -> CellResult:
    """Certify one corpus cell ``runs`` times with consecutive seeds."""
    oracle = oracle or HSOracleSpec()
    if cell == "equal":
        rho, expected, trich = state.sigma, EQUAL, None
    else:
        rho, expected = far_instance(state, cell, eps), FAR
        trich = case_conditions(rho, state.sigma, eps).any_holds
    correct, copies, m, reps = 0, [], 0, 0
    for k in range(runs):
        cfg = CertifierConfig(eps=eps, delta=delta, oracle=oracle, seed=RngSeed(seed, k))
        res = certify(rho, state.sigma, cfg)
        correct += res.verdict == expected
        copies.append(res.ledger.total)
        m, reps = res.m, res.repetitions
    q = half_norm(upper_bucketing(np.linalg.eigvalsh(state.sigma).clip(0, None), eps).sigma_star.values)
    return CellResult(state.name, state.dim, cell, runs, correct, float(np.mean(copies)), q, m, reps, trich)


def run_corpus(runs: int = 100, eps: float = DEFAULT_EPS, delta: float = DEFAULT_DELTA,
               oracle: HSOracleSpec | None = None, seed: int = 0, states=None) -> list[CellResult]:
    states = corpus_states() if states is None else states
    return [run_cell(s, c, runs, eps, delta, oracle, seed) for s in states for c in CELLS]


def normalized_copies(result: CellResult) -> float:
    """Mean copies on equal runs with the polylogarithmic bucket factors divided out."""
    return result.mean_copies / (result.m ** 4 * result.repetitions)


def ledger_slope(results: list[CellResult]) -> float:
    """Least-squares log-log slope of normalized copies against the tail-trimmed half-norm."""
    eq = [r for r in results if r.cell == "equal"]
    x = np.log([r.quasinorm_star for r in eq])
    y = np.log([normalized_copies(r) for r in eq])
    return float(np.polyfit(x, y, 1)[0])
