"""The verification battery: every checkable fact of the library as one pass/fail row.

Each check reduces to a single inequality ``statistic <= limit`` routed
through :meth:`CheckContext.le`. Naming a check in ``fault`` flips that
inequality, which is the negative control for the harness itself.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from certlab.bucketing import (bucket_count_bound, lower_bucketing, sorted_sequences_property,
                               upper_bucketing)
from certlab.complexity import classical_functional, lower_report
from certlab.divergence import (chi2_exp_upper, chi2_kernel, chi2_tensor_exact, classical_chi2,
                                classical_chi2_bruteforce, mixedness_bound, nearly_mixed_bound)
from certlab.haar import RngSeed, conjugation_mean, sample_haar_batch, verify_mgf_bound
from certlab.instances import (classical_paninski_family, nearly_mixed_family, quantum_paninski,
                               quantum_paninski_family, rotation_fidelity, rotation_instance,
                               signed_diagonal, two_by_two_sign_family, validate_family)
from certlab.linalg import (DensityMatrix, bloch_to_density, BlochVector, fidelity, fidelity_qubit,
                            quantum_chi2, trace_distance, trace_norm)

LEVELS = ("quick", "full")
DEFAULT_SEED = 12345


@dataclass(frozen=True)
class LevelLimits:
    mc_samples: int
    tensor_dim: int
    draws: int


LIMITS = {
    "quick": LevelLimits(mc_samples=10_000, tensor_dim=128, draws=1_000),
    "full": LevelLimits(mc_samples=100_000, tensor_dim=512, draws=10_000),
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    module: str
    passed: bool
    statistic: float
    limit: float
    error: str | None = None
    # wall time varies run to run, so it is left out of serialized reports
    seconds: float = field(default=0.0, metadata={"volatile": True})


@dataclass(frozen=True)
class SuiteResult:
    level: str
    seed: int
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def table(self) -> str:
        width = max(len(c.name) for c in self.checks)
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"{mark}  {c.module:<11} {c.name:<{width}}  {c.statistic:.6g} <= {c.limit:.6g}"
                         f"  ({c.seconds:.2f}s)" + (f"  {c.error}" if c.error else ""))
        return "\n".join(lines)


class CheckContext:
    def __init__(self, seed: int, limits: LevelLimits, faulty: bool, stream_base: int = 0):
        self.seed = seed
        self.limits = limits
        self.faulty = faulty
        self._streams = stream_base

    def rng(self) -> np.random.Generator:
        self._streams += 1
        return RngSeed(self.seed, self._streams).generator()

    def le(self, statistic: float, limit: float) -> bool:
        return statistic > limit if self.faulty else statistic <= limit


def _random_state(d: int, gen: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = rank or d
    g = gen.standard_normal((d, r)) + 1j * gen.standard_normal((d, r))
    m = g @ g.conj().T
    return m / np.trace(m).real


def _random_spectrum(d: int, gen: np.random.Generator) -> np.ndarray:
    x = gen.dirichlet(np.full(d, gen.choice([0.2, 1.0, 5.0])))
    return np.sort(x)[::-1]


# --------------------------------------------------------------------------
# core linear algebra
# --------------------------------------------------------------------------

def check_trace_distance_triangle(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for _ in range(min(ctx.limits.draws, 500)):
        d = int(gen.integers(2, 6))
        a, b, c = (_random_state(d, gen) for _ in range(3))
        worst = max(worst, trace_distance(a, c) - trace_distance(a, b) - trace_distance(b, c))
    return worst, 1e-12


def check_fuchs_van_de_graaf(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for _ in range(min(ctx.limits.draws, 500)):
        d = int(gen.integers(2, 6))
        a, b = _random_state(d, gen), _random_state(d, gen, rank=1 + int(gen.integers(d)))
        f, t = fidelity(a, b), trace_distance(a, b)
        worst = max(worst, 1 - math.sqrt(f) - t, t - math.sqrt(max(0.0, 1 - f)))
    return worst, 1e-9


def check_chi2_dominates_trace_norm(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for _ in range(min(ctx.limits.draws, 500)):
        d = int(gen.integers(2, 6))
        a, b = _random_state(d, gen), _random_state(d, gen)
        worst = max(worst, trace_norm(a - b) ** 2 - quantum_chi2(a, b))
    return worst, 1e-9


def check_qubit_fidelity_closed_form(ctx):
    gen = ctx.rng()
    worst = 0.0
    for _ in range(min(ctx.limits.draws, 500)):
        vecs = []
        for _ in range(2):
            v = gen.standard_normal(3)
            v *= gen.uniform(0, 1) / np.linalg.norm(v)
            vecs.append(BlochVector(*v))
        exact = fidelity(bloch_to_density(vecs[0]), bloch_to_density(vecs[1]))
        worst = max(worst, abs(exact - fidelity_qubit(*vecs)))
    return worst, 1e-9


# --------------------------------------------------------------------------
# Haar
# --------------------------------------------------------------------------

def check_haar_unitarity(ctx):
    gen = ctx.rng()
    u = sample_haar_batch(16, 256, gen)
    defect = np.max(np.abs(np.conj(np.swapaxes(u, 1, 2)) @ u - np.eye(16)))
    return float(defect), 1e-12


def check_haar_first_moment(ctx):
    s = np.array([0.5, 0.3, 0.15, 0.05])
    mean, se = conjugation_mean(s, ctx.limits.mc_samples, ctx.rng())
    target = np.eye(4) * s.sum() / 4
    z = np.abs(mean - target) / np.maximum(se, 1e-300)
    return float(np.max(z)), 5.0


def check_haar_mgf_bound(ctx):
    worst = -math.inf
    for d, t in ((4, 0.5), (8, 0.3), (16, 0.2)):
        res = verify_mgf_bound(d, signed_diagonal(d, 1.0), t, ctx.limits.mc_samples, ctx.rng())
        worst = max(worst, res.empirical_mgf - 3.0 * res.std_error - res.bound)
    return worst, 0.0


# --------------------------------------------------------------------------
# bucketing
# --------------------------------------------------------------------------

def check_bucket_count_bound(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for _ in range(ctx.limits.draws):
        d = int(gen.integers(2, 65))
        eps = float(gen.uniform(0.001, 1 / 12))
        lb = lower_bucketing(_random_spectrum(d, gen), eps)
        bc = bucket_count_bound(lb)
        worst = max(worst, bc.count_disjoint_from_tail - bc.bound)
    return worst, 0.0


def check_sorted_sequences(ctx):
    gen = ctx.rng()
    failures = 0
    for _ in range(ctx.limits.draws):
        k = int(gen.integers(1, 8))
        u = list(np.cumprod(gen.uniform(2.0, 3.0, k)) * gen.uniform(1e-4, 1e-2))
        v = sorted(gen.uniform(0, 0.05, int(gen.integers(1, 8))))
        dv = list(gen.integers(1, 5, len(v)))
        failures += not sorted_sequences_property(u, v, dv, float(gen.uniform(1e-3, 0.2))).holds
    return float(failures), 0.0


def check_mass_removal_budgets(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for _ in range(ctx.limits.draws):
        d = int(gen.integers(2, 65))
        lam = _random_spectrum(d, gen)
        eps_lo = float(gen.uniform(0.001, 1 / 12))
        eps_up = float(gen.uniform(0.01, 0.99))
        lb, ub = lower_bucketing(lam, eps_lo), upper_bucketing(lam, eps_up)
        worst = max(worst, lb.tail_mass() / (12 * eps_lo) - 1, ub.tail_mass() / (eps_up**2 / 20) - 1)
    return worst, 1e-12


# --------------------------------------------------------------------------
# instances
# --------------------------------------------------------------------------

def check_quantum_paninski_farness(ctx):
    gen = ctx.rng()
    worst = 0.0
    draws = ctx.limits.draws // 4
    for d in (2, 8, 32, 64):
        us = sample_haar_batch(d, draws, gen)
        for u in us:
            rho = quantum_paninski(d, 0.3, u)
            worst = max(worst, abs(trace_norm(rho.matrix - np.eye(d) / d) - 0.3))
    return worst, 1e-9


def check_rotation_certificate(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for _ in range(ctx.limits.draws):
        d = int(gen.integers(2, 6))
        # the remaining d - 1 eigenvalues must fit under 1/4 each
        l1 = float(gen.uniform(max(0.5, 1.0 - 0.25 * (d - 1)), 1.0))
        rest = np.sort(gen.dirichlet(np.ones(d - 1)) * (1 - l1))[::-1]
        if rest[0] > 0.25:
            rest = np.full(d - 1, (1 - l1) / (d - 1))
        eps = float(gen.uniform(0, 1 / (2 * math.sqrt(2)) - 1e-6))
        sigma = DensityMatrix(np.diag(np.concatenate([[l1], rest])).astype(complex))
        alt = rotation_instance(sigma, eps)
        far = trace_norm(sigma.matrix - alt.matrix)
        fid = fidelity(sigma, alt)
        closed = rotation_fidelity(l1, float(rest[0]), eps)
        worst = max(worst, eps - far, (1 - 4 * eps * eps) ** 2 - fid, abs(fid - closed))
    return worst, 1e-9


def check_family_validity(ctx):
    fams = [
        quantum_paninski_family(8, 0.5),
        nearly_mixed_family(DensityMatrix(np.diag([0.3, 0.3, 0.2, 0.2]).astype(complex)), 0.2),
        classical_paninski_family(6, 0.4),
        two_by_two_sign_family(DensityMatrix(np.diag([0.4, 0.35, 0.25]).astype(complex)), 0.2),
    ]
    failures = sum(not validate_family(f, n_samples=min(ctx.limits.draws, 2000), rng=ctx.rng()).passed
                   for f in fams)
    return float(failures), 0.0


# --------------------------------------------------------------------------
# divergence
# --------------------------------------------------------------------------

def check_kernel_tensor_identity(ctx):
    gen = ctx.rng()
    worst = 0.0
    cases = []
    for d in (2, 3, 4):
        for n in (1, 2, 3):
            if d**n > ctx.limits.tensor_dim:
                continue
            lam = np.sort(gen.dirichlet(np.ones(d)) * 0.5 + 0.5 / d)[::-1]
            sigma = DensityMatrix(np.diag(lam).astype(complex))
            if d % 2 == 0:
                cases.append((classical_paninski_family(d, 0.3), n))
                cases.append((quantum_paninski_family(d, 0.3).discretize(4, gen), n))
            cases.append((nearly_mixed_family(sigma, 0.1).discretize(3, gen), n))
            if lam[1] > 0.25:
                cases.append((two_by_two_sign_family(sigma, 0.2), n))
    cases.append((two_by_two_sign_family(DensityMatrix(np.diag([0.5, 0.5]).astype(complex)), 0.2), 3))
    for fam, n in cases:
        a = chi2_kernel(fam, n=n).value
        b = chi2_tensor_exact(fam, n=n).value
        worst = max(worst, abs(a - b))
    return worst, 1e-9


def check_mixedness_chi2_bound(ctx):
    worst = -math.inf
    for d in (4, 8):
        for n in (2, 4):
            est = chi2_exp_upper(quantum_paninski_family(d, 0.5), n=n, samples=ctx.limits.mc_samples,
                                 rng=ctx.rng())
            worst = max(worst, est.value - 3 * est.std_error - mixedness_bound(d, 0.5, n))
    return worst, 0.0


def check_nearly_mixed_chi2_bound(ctx):
    gen = ctx.rng()
    worst = -math.inf
    for d in (4, 8):
        x = gen.uniform(0.8, 1.5, d)
        sigma = DensityMatrix(np.diag(x / x.sum()).astype(complex))
        for n in (2.0, 8.0):
            est = chi2_exp_upper(nearly_mixed_family(sigma, 0.25), n=n, samples=ctx.limits.mc_samples,
                                 rng=ctx.rng())
            worst = max(worst, est.value - 3 * est.std_error - nearly_mixed_bound(sigma.matrix, 0.25, n))
    return worst, 0.0


def check_classical_enumeration(ctx):
    worst = 0.0
    for d, n in ((2, 3), (4, 3), (6, 2), (8, 2)):
        fam = classical_paninski_family(d, 0.4)
        worst = max(worst, abs(classical_chi2(fam, n=n).value - classical_chi2_bruteforce(fam, n=n)))
    return worst, 1e-12


# --------------------------------------------------------------------------
# complexity
# --------------------------------------------------------------------------

def check_flat_state_slope(ctx):
    ds = np.array([4, 8, 16, 32, 64])
    vals = [lower_report(np.full(d, 1.0 / d), 1 / 24).lower_best for d in ds]
    slope = float(np.polyfit(np.log(ds), np.log(vals), 1)[0])
    return abs(slope - 1.0), 0.05


def check_classical_uniform_tracking(ctx):
    drift = []
    for d in (64, 256):
        drift.append(classical_functional(np.full(d, 1.0 / d), 0.25) / (math.sqrt(d) / 0.0625))
    return abs(drift[1] / drift[0] - 1), 0.05


# --------------------------------------------------------------------------
# certifier
# --------------------------------------------------------------------------

def check_certifier_exact_completeness(ctx):
    from certlab.certifier import EQUAL, CertifierConfig, certify
    from certlab.corpus import corpus_states

    wrong = 0
    for state in corpus_states():
        cfg = CertifierConfig(eps=0.25, delta=0.1, seed=RngSeed(ctx.seed), exact=True)
        wrong += certify(state.sigma, state.sigma, cfg).verdict != EQUAL
    return float(wrong), 0.0


def check_case_trichotomy(ctx):
    from certlab.certifier import case_conditions
    from certlab.corpus import FAR_FAMILIES, corpus_states, far_instance

    misses = 0
    for state in corpus_states():
        for fam in FAR_FAMILIES:
            misses += not case_conditions(far_instance(state, fam, 0.25), state.sigma, 0.25).any_holds
    return float(misses), 0.0


CHECKS = (
    ("trace_distance_triangle", "core-linalg", check_trace_distance_triangle),
    ("fuchs_van_de_graaf", "core-linalg", check_fuchs_van_de_graaf),
    ("chi2_dominates_trace_norm", "core-linalg", check_chi2_dominates_trace_norm),
    ("qubit_fidelity_closed_form", "core-linalg", check_qubit_fidelity_closed_form),
    ("haar_unitarity", "haar", check_haar_unitarity),
    ("haar_first_moment", "haar", check_haar_first_moment),
    ("haar_mgf_bound", "haar", check_haar_mgf_bound),
    ("bucket_count_bound", "bucketing", check_bucket_count_bound),
    ("sorted_sequences", "bucketing", check_sorted_sequences),
    ("mass_removal_budgets", "bucketing", check_mass_removal_budgets),
    ("quantum_paninski_farness", "instances", check_quantum_paninski_farness),
    ("rotation_certificate", "instances", check_rotation_certificate),
    ("family_validity", "instances", check_family_validity),
    ("kernel_tensor_identity", "divergence", check_kernel_tensor_identity),
    ("mixedness_chi2_bound", "divergence", check_mixedness_chi2_bound),
    ("nearly_mixed_chi2_bound", "divergence", check_nearly_mixed_chi2_bound),
    ("classical_enumeration", "divergence", check_classical_enumeration),
    ("flat_state_slope", "complexity", check_flat_state_slope),
    ("classical_uniform_tracking", "complexity", check_classical_uniform_tracking),
    ("certifier_exact_completeness", "certifier", check_certifier_exact_completeness),
    ("case_trichotomy", "certifier", check_case_trichotomy),
)
CHECK_NAMES = tuple(name for name, _, _ in CHECKS)


def verify_all(seed: int = DEFAULT_SEED, level: str = "quick", fault: str | None = None,
               only=None) -> SuiteResult:
    """Run the battery. Failures are results, never exceptions."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    if fault is not None and fault not in CHECK_NAMES:
        raise ValueError(f"unknown check {fault!r}")
    out = []
    for k, (name, module, fn) in enumerate(CHECKS):
        if only is not None and name not in only:
            continue
        # each check owns a disjoint block of streams, so skipping one never shifts another
        ctx = CheckContext(seed, LIMITS[level], name == fault, stream_base=1000 * k)
        start = time.perf_counter()
        error = None
        try:
            stat, limit = fn(ctx)
            passed = ctx.le(stat, limit)
        except Exception as exc:  # a crashing check is a failed check
            stat, limit, passed, error = math.nan, math.nan, False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, module, bool(passed), float(stat), float(limit), error,
                               time.perf_counter() - start))
    return SuiteResult(level, seed, tuple(out))
