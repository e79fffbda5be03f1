"""Desk-scale simulation of the three-case state certification algorithm.

The algorithm works in sigma's eigenbasis. It first tests the tail mass
removed by the upper bucketing, then each bucket's diagonal block, then each
pair of buckets. Measurement outcomes are drawn from the true state through
an :class:`Experiment`; the entangled Hilbert-Schmidt certification step is
an oracle honoring its stated guarantee. Decision logic only ever sees
counts and oracle votes, so a recorded run can be replayed against any state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from certlab.bucketing import ThresholdTable, UpperBucketing, upper_bucketing
from certlab.errors import ConfigInvalid, InputError, ZeroMassBlock
from certlab.haar import RngSeed
from certlab.linalg import as_array, trace_norm

EQUAL = "equal"
FAR = "far"
ORACLE_KINDS = ("ideal", "noisy", "statistical")
# a prepared-copy run is abandoned after this many times its expected cost
PREP_ABORT_FACTOR = 10.0
# confidence of a single oracle repetition, before majority amplification
SINGLE_REP_FAILURE = 0.1
# two states are never further apart than this in Hilbert-Schmidt norm
MAX_HS_DISTANCE = math.sqrt(2.0)
# separation constant for the pair test: sqrt(2) ||B||_2 over the 1.5 trace slack, halved
PAIR_SEPARATION = math.sqrt(2.0) / 15.0
CASE2_SEPARATION = 0.025


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HSOracleSpec:
    """Which Hilbert-Schmidt certification oracle to simulate.

    ``ideal`` answers far iff the block distance exceeds eps'/2. ``noisy``
    flips the ideal answer with probability ``flip_prob``. ``statistical``
    thresholds a Gaussian model of an unbiased squared-distance estimate.
    """

    kind: str = "ideal"
    flip_prob: float = 0.0

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ConfigInvalid(f"oracle kind must be one of {ORACLE_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ConfigInvalid(f"flip_prob must lie in [0, 1/2), got {self.flip_prob!r}", self.flip_prob)
        if self.kind != "noisy" and self.flip_prob:
            raise ConfigInvalid("flip_prob only applies to the noisy oracle")

    @classmethod
    def parse(cls, text: str) -> "HSOracleSpec":
        """``ideal``, ``statistical`` or ``noisy:p``."""
        kind, _, arg = text.partition(":")
        if kind == "noisy":
            try:
                return cls("noisy", float(arg))
            except ValueError:
                raise ConfigInvalid(f"noisy oracle needs a flip probability, got {text!r}") from None
        if arg:
            raise ConfigInvalid(f"oracle {kind!r} takes no argument")
        return cls(kind)

    def label(self) -> str:
        return f"noisy:{self.flip_prob!r}" if self.kind == "noisy" else self.kind


@dataclass(frozen=True)
class UnitConstants:
    """Multipliers standing in for the hidden constants of each sample count."""

    tail_test: float = 256.0
    trace_estimate: float = 1.0
    oracle: float = 8.0
    repetitions: float = 18.0

    def __post_init__(self):
        for name in ("tail_test", "trace_estimate", "oracle", "repetitions"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"unit constant {name} must be positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class CertifierConfig:
    eps: float
    delta: float
    oracle: HSOracleSpec = field(default_factory=HSOracleSpec)
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))
    unit_constants: UnitConstants = field(default_factory=UnitConstants)
    thresholds: ThresholdTable | None = None
    exact: bool = False
    stop_on_reject: bool = True

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ConfigInvalid(f"eps must lie in (0, 1), got {self.eps!r}", self.eps)
        if not 0 < self.delta < 1:
            raise ConfigInvalid(f"delta must lie in (0, 1), got {self.delta!r}", self.delta)
        if self.oracle.flip_prob > self.delta:
            raise ConfigInvalid(
                f"noisy oracle flip probability {self.oracle.flip_prob!r} exceeds delta {self.delta!r}",
                self.oracle.flip_prob,
            )
        if self.thresholds is not None and self.thresholds.eps != self.eps:
            raise ConfigInvalid("threshold table was built for a different eps")

    def table(self, m: int) -> ThresholdTable:
        """The threshold table for ``m`` buckets, checked against any supplied one."""
        expected = ThresholdTable.from_eps_m(self.eps, m)
        if self.thresholds is not None and self.thresholds != expected:
            raise ConfigInvalid(f"threshold table does not match eps={self.eps!r}, m={m}")
        return expected

    def repetitions(self, m: int) -> int:
        return int(math.ceil(self.unit_constants.repetitions * math.log(3.0 * m * m / self.delta)))


# --------------------------------------------------------------------------
# copy accounting
# --------------------------------------------------------------------------

@dataclass
class CopyLedger:
    """Copies of rho consumed, split by subroutine."""

    tail_test: int = 0
    trace_estimates: int = 0
    case2: dict[int, int] = field(default_factory=dict)
    case3: dict[tuple[int, int], int] = field(default_factory=dict)

    def charge(self, part: str, copies: int, key=None) -> None:
        copies = int(copies)
        if copies < 0:
            raise InputError(f"cannot charge a negative copy count {copies}")
        if part in ("tail_test", "trace_estimates"):
            setattr(self, part, getattr(self, part) + copies)
        elif part in ("case2", "case3"):
            book = getattr(self, part)
            book[key] = book.get(key, 0) + copies
        else:
            raise InputError(f"unknown ledger part {part!r}")

    @property
    def oracle_total(self) -> int:
        return sum(self.case2.values()) + sum(self.case3.values())

    @property
    def total(self) -> int:
        return self.tail_test + self.trace_estimates + self.oracle_total

    def as_dict(self) -> dict:
        return {
            "tail_test": self.tail_test,
            "trace_estimates": self.trace_estimates,
            "case2": {str(k): v for k, v in sorted(self.case2.items())},
            "case3": {f"{a},{b}": v for (a, b), v in sorted(self.case3.items())},
            "total": self.total,
        }


# --------------------------------------------------------------------------
# the simulated laboratory
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PrepResult:
    """Outcome of conditional block preparation, one entry per repetition."""

    prepared: np.ndarray
    consumed: np.ndarray
    shortfall: np.ndarray


def _probability(rho_frame: np.ndarray, indices) -> float:
    idx = list(indices)
    return float(np.clip(np.real(np.trace(rho_frame[np.ix_(idx, idx)])), 0.0, 1.0))


def _normalized_block(m: np.ndarray, indices) -> np.ndarray:
    idx = list(indices)
    block = m[np.ix_(idx, idx)]
    tr = float(np.real(np.trace(block)))
    if tr <= 0:
        raise ZeroMassBlock(f"block {idx} has zero trace", tr)
    return block / tr


def conditional_block_prepare(rho_sampler: "Experiment", projector, budget: int, reps: int = 1,
                              rate_estimate: float | None = None) -> PrepResult:
    """Post-select copies of rho on a projector until ``budget`` block copies exist.

    ``projector`` is a sequence of basis indices in sigma's frame. Each source
    copy lands in the block with probability tr(rho P), so the cost per
    repetition is ``budget`` plus a negative-binomial number of misses. A
    repetition aborts, flagging a shortfall, once it would exceed ten times
    the expected cost under ``rate_estimate`` (the true rate when omitted).
    """
    return rho_sampler.prepare(projector, budget, reps, rate_estimate)


class Experiment:
    """The true state in sigma's frame, producing measurement outcomes and oracle votes."""

    def __init__(self, rho_frame: np.ndarray, sigma_frame: np.ndarray, oracle: HSOracleSpec,
                 seed: RngSeed, exact: bool = False):
        self.rho = np.asarray(rho_frame, dtype=complex)
        self.sigma = np.asarray(sigma_frame, dtype=complex)
        self.oracle_spec = oracle
        self.exact = exact
        self.sampler_rng = seed.substream(0).generator()
        self.oracle_rng = seed.substream(1).generator()

    def measure(self, indices, shots: int) -> float:
        """Number of ``shots`` fresh copies landing in the span of ``indices``."""
        p = _probability(self.rho, indices) if indices else 0.0
        if self.exact:
            return shots * p
        return int(self.sampler_rng.binomial(int(shots), p))

    def prepare(self, indices, budget: int, reps: int, rate_estimate: float | None) -> PrepResult:
        p = _probability(self.rho, indices)
        if p <= 0.0:
            raise ZeroMassBlock(f"projector onto {list(indices)} has zero probability under rho", p)
        rate = p if rate_estimate is None else float(rate_estimate)
        if not rate > 0:
            raise InputError(f"rate estimate must be positive, got {rate!r}")
        cap = int(math.floor(PREP_ABORT_FACTOR * budget / rate))
        if self.exact:
            consumed = np.full(reps, int(math.ceil(budget / p)), dtype=np.int64)
        else:
            misses = self.sampler_rng.negative_binomial(int(budget), p, size=reps) if p < 1.0 else np.zeros(reps, np.int64)
            consumed = budget + misses.astype(np.int64)
        shortfall = consumed > cap
        consumed = np.minimum(consumed, cap)
        prepared = np.where(shortfall, 0, budget).astype(np.int64)
        return PrepResult(prepared, consumed, shortfall)

    def oracle_votes(self, indices, eps_prime: float, copies: int, active: np.ndarray) -> np.ndarray:
        """Far votes from the oracle for each active repetition."""
        rho_hat = _normalized_block(self.rho, indices)
        sigma_hat = _normalized_block(self.sigma, indices)
        dist = float(np.linalg.norm(rho_hat - sigma_hat))
        n = active.size
        if self.oracle_spec.kind == "statistical":
            sd = math.sqrt(2.0) / copies + 2.0 * dist / math.sqrt(copies)
            estimate = dist * dist + sd * self.oracle_rng.standard_normal(n)
            far = estimate > (eps_prime / 2.0) ** 2
        else:
            far = np.full(n, dist > eps_prime / 2.0)
            if self.oracle_spec.kind == "noisy":
                far ^= self.oracle_rng.random(n) < self.oracle_spec.flip_prob
        return far & active


class Recorder:
    """Pass-through :class:`Experiment` wrapper keeping every answer it hands out."""

    def __init__(self, inner):
        self.inner = inner
        self.log: list = []

    def measure(self, indices, shots):
        out = self.inner.measure(indices, shots)
        self.log.append(("measure", out))
        return out

    def prepare(self, indices, budget, reps, rate_estimate):
        out = self.inner.prepare(indices, budget, reps, rate_estimate)
        self.log.append(("prepare", out))
        return out

    def oracle_votes(self, indices, eps_prime, copies, active):
        out = self.inner.oracle_votes(indices, eps_prime, copies, active)
        self.log.append(("oracle_votes", out))
        return out


class Replayer:
    """Answers every query from a recorded log, whatever state it is attached to."""

    def __init__(self, log, rho_frame=None):
        self.log = list(log)
        self.rho = rho_frame
        self.position = 0

    def _next(self, kind):
        if self.position >= len(self.log):
            raise InputError("replay log exhausted")
        got, value = self.log[self.position]
        if got != kind:
            raise InputError(f"replay expected {got!r} but the run asked for {kind!r}")
        self.position += 1
        return value

    def measure(self, indices, shots):
        return self._next("measure")

    def prepare(self, indices, budget, reps, rate_estimate):
        return self._next("prepare")

    def oracle_votes(self, indices, eps_prime, copies, active):
        return self._next("oracle_votes")


# --------------------------------------------------------------------------
# frames and bucketing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaFrame:
    """sigma's eigenbasis: ``basis`` (None when sigma is already diagonal) and eigenvalues."""

    basis: np.ndarray | None
    values: np.ndarray

    @classmethod
    def of(cls, sigma) -> "SigmaFrame":
        s = as_array(sigma)
        if not np.any(s - np.diag(np.diag(s))):
            return cls(None, np.clip(np.real(np.diag(s)), 0.0, None))
        w, v = np.linalg.eigh(s)
        return cls(v, np.clip(w, 0.0, None))

    def rotate(self, rho) -> np.ndarray:
        r = as_array(rho)
        return r if self.basis is None else self.basis.conj().T @ r @ self.basis

    def sigma(self) -> np.ndarray:
        return np.diag(self.values).astype(complex)


def _pairs(ub: UpperBucketing) -> list[tuple[int, int]]:
    """Unordered bucket pairs, larger bucket first (ties by smaller index)."""
    out = []
    for i, a in enumerate(ub.J):
        for b in ub.J[i + 1:]:
            da, db = ub.d_j[a], ub.d_j[b]
            out.append((a, b) if da >= db else (b, a))
    return out


def _hoeffding_shots(gap: float, failure: float, unit: float) -> int:
    return int(math.ceil(unit * math.log(2.0 / failure) / (2.0 * gap * gap)))


# --------------------------------------------------------------------------
# the three tests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TailTestResult:
    decision: str
    copies: int
    estimate: float | None
    threshold: float


def case1_tail_test(rho_sampler, bucketing: UpperBucketing, config: CertifierConfig) -> TailTestResult:
    """Measure the tail projector on fresh copies; reject when the mean clears the midpoint.

    The midpoint sits halfway between sigma's own tail mass and the
    alternative's floor of 0.125 eps^2.
    """
    eps = config.eps
    table = ThresholdTable.from_eps_m(eps, max(1, bucketing.m))
    sigma_tail = bucketing.tail_mass()
    threshold = 0.5 * (table.tail_reject + sigma_tail)
    if not bucketing.S_tail:
        return TailTestResult(EQUAL, 0, None, threshold)
    shots = int(math.ceil(config.unit_constants.tail_test * math.log(3.0 / config.delta) / (eps * eps)))
    hits = rho_sampler.measure(bucketing.S_tail, shots)
    estimate = hits / shots
    return TailTestResult(FAR if estimate >= threshold else EQUAL, shots, float(estimate), threshold)


@dataclass(frozen=True)
class CertificationResult:
    verdict: str
    ledger: CopyLedger
    case_trace: list
    m: int
    repetitions: int

    def exit_code(self) -> int:
        return 0 if self.verdict == EQUAL else 1


class _Run:
    """State of one certification run: bucketing, thresholds, ledger and transcript."""

    def __init__(self, lab, ub: UpperBucketing, config: CertifierConfig):
        self.lab = lab
        self.ub = ub
        self.config = config
        self.m = ub.m
        self.table = config.table(self.m)
        self.reps = config.repetitions(self.m)
        self.ledger = CopyLedger()
        self.trace: list[dict] = []
        self.rejected = False

    def record(self, entry: dict) -> None:
        self.trace.append(entry)
        if entry.get("decision") == FAR:
            self.rejected = True

    def estimate_trace(self, indices, gap: float, failure: float) -> tuple[float, int]:
        shots = _hoeffding_shots(gap, failure, self.config.unit_constants.trace_estimate)
        hits = self.lab.measure(indices, shots)
        self.ledger.charge("trace_estimates", shots)
        return hits / shots, shots

    def oracle_chain(self, part: str, key, indices, eps_prime: float, rate: float) -> dict:
        need = int(math.ceil(self.config.unit_constants.oracle * math.log(1.0 / SINGLE_REP_FAILURE)
                             / (eps_prime * eps_prime)))
        prep = self.lab.prepare(indices, need, self.reps, rate)
        self.ledger.charge(part, int(np.sum(prep.consumed)), key)
        votes = self.lab.oracle_votes(indices, eps_prime, need, ~prep.shortfall)
        far_votes = int(np.sum(votes))
        return {
            "eps_prime": eps_prime,
            "copies_per_rep": need,
            "repetitions": self.reps,
            "abstained": int(np.sum(prep.shortfall)),
            "far_votes": far_votes,
            "decision": FAR if 2 * far_votes > self.reps else EQUAL,
        }

    def bucket_test(self, j: int) -> None:
        """Diagonal block of bucket j: trace check, small-block accept, then the oracle."""
        t, eps, m = self.table, self.config.eps, self.m
        indices = self.ub.buckets[j]
        sigma_trace = math.fsum(self.ub.values[i] for i in indices)
        estimate, _ = self.estimate_trace(indices, t.trace_est_err_case2, self.config.delta / (6.0 * m))
        entry = {"test": "bucket", "bucket": j, "trace_estimate": float(estimate), "sigma_trace": sigma_trace}
        if abs(estimate - sigma_trace) > t.trace_est_err_case2:
            entry.update(reason="trace_mismatch", decision=FAR)
        elif sigma_trace <= t.small_block_case2:
            entry.update(reason="small_block", decision=EQUAL)
        else:
            dj = self.ub.d_j[j]
            eps_prime = CASE2_SEPARATION * eps / (m * m * dj**1.5 * 2.0 ** (-j))
            if eps_prime > MAX_HS_DISTANCE:
                entry.update(reason="separation_unreachable", eps_prime=eps_prime, decision=EQUAL)
            else:
                entry.update(reason="oracle", **self.oracle_chain("case2", j, indices, eps_prime, estimate))
        self.record(entry)

    def pair_test(self, a: int, b: int, failure: float) -> None:
        """Principal block of buckets a and b (d_a >= d_b), probing their off-diagonal coupling."""
        t, eps, m = self.table, self.config.eps, self.m
        indices = tuple(sorted(self.ub.buckets[a] + self.ub.buckets[b]))
        sigma_trace = math.fsum(self.ub.values[i] for i in indices)
        entry = {"test": "pair", "pair": [a, b], "sigma_trace": sigma_trace}
        if sigma_trace < t.small_block_case3:
            entry.update(reason="small_block", decision=EQUAL)
            self.record(entry)
            return
        estimate, _ = self.estimate_trace(indices, t.trace_est_err_case3, failure)
        entry["trace_estimate"] = float(estimate)
        if abs(estimate - sigma_trace) > t.trace_est_err_case3:
            entry.update(reason="trace_mismatch", decision=FAR)
        else:
            da, db = self.ub.d_j[a], self.ub.d_j[b]
            scale = da * 2.0 ** (-a) + db * 2.0 ** (-b)
            eps_prime = PAIR_SEPARATION * eps / (m * m * math.sqrt(db) * scale)
            if eps_prime > MAX_HS_DISTANCE:
                entry.update(reason="separation_unreachable", eps_prime=eps_prime, decision=EQUAL)
            else:
                entry.update(reason="oracle", **self.oracle_chain("case3", (a, b), indices, eps_prime, estimate))
        self.record(entry)


def certify(rho_true, sigma, config: CertifierConfig, experiment=None) -> CertificationResult:
    """Decide rho = sigma versus ||rho - sigma||_1 >= eps from simulated measurements.

    ``experiment`` overrides the simulated laboratory (for recording or
    replaying); by default one is built from ``rho_true`` in sigma's frame.
    """
    if not isinstance(config, CertifierConfig):
        raise ConfigInvalid(f"expected a CertifierConfig, got {type(config).__name__}")
    frame = SigmaFrame.of(sigma)
    ub = upper_bucketing(frame.values, config.eps)
    if experiment is None:
        experiment = Experiment(frame.rotate(rho_true), frame.sigma(), config.oracle, config.seed, config.exact)
    run = _Run(experiment, ub, config)

    tail = case1_tail_test(experiment, ub, config)
    run.ledger.charge("tail_test", tail.copies)
    run.record({"test": "tail", "copies": tail.copies, "estimate": tail.estimate,
                "threshold": tail.threshold, "decision": tail.decision})

    stop = config.stop_on_reject
    for j in ub.J:
        if run.rejected and stop:
            break
        run.bucket_test(j)
    pairs = _pairs(ub)
    for a, b in pairs:
        if run.rejected and stop:
            break
        run.pair_test(a, b, config.delta / (6.0 * len(pairs)))
    verdict = FAR if run.rejected else EQUAL
    return CertificationResult(verdict, run.ledger, run.trace, ub.m, run.reps)


# --------------------------------------------------------------------------
# exact case conditions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseConditions:
    """Exact values of the three far-case quantities in sigma's frame."""

    distance: float
    tail_mass: float
    bucket_deviation: dict[int, float]
    pair_coupling: dict[tuple[int, int], float]
    table: ThresholdTable

    @property
    def tail_large(self) -> bool:
        return self.tail_mass >= self.table.tail_reject

    @property
    def far_buckets(self) -> list[int]:
        return [j for j, v in self.bucket_deviation.items() if v > self.table.case2_far]

    @property
    def far_pairs(self) -> list[tuple[int, int]]:
        if self.far_buckets:
            return []
        return [p for p, v in self.pair_coupling.items() if v > self.table.case3_far]

    @property
    def any_holds(self) -> bool:
        return self.tail_large or bool(self.far_buckets) or bool(self.far_pairs)


def case_conditions(rho, sigma, eps: float) -> CaseConditions:
    """Tail mass, per-bucket deviations and pairwise couplings, computed exactly."""
    frame = SigmaFrame.of(sigma)
    ub = upper_bucketing(frame.values, eps)
    r = frame.rotate(rho)
    s = frame.sigma()
    tail = list(ub.S_tail)
    tail_mass = float(np.real(np.trace(r[np.ix_(tail, tail)]))) if tail else 0.0
    dev = {}
    for j in ub.J:
        idx = list(ub.buckets[j])
        dev[j] = trace_norm(r[np.ix_(idx, idx)] - s[np.ix_(idx, idx)])
    coupling = {}
    for a, b in _pairs(ub):
        ia, ib = list(ub.buckets[a]), list(ub.buckets[b])
        # the Hermitian off-diagonal pair has trace norm twice that of its corner block
        sv = np.linalg.svd(r[np.ix_(ia, ib)], compute_uv=False)
        coupling[(a, b)] = 2.0 * float(np.sum(sv))
    return CaseConditions(trace_norm(as_array(rho) - as_array(sigma)), tail_mass, dev, coupling,
                          ThresholdTable.from_eps_m(eps, max(1, ub.m)))


__all__ = [
    "EQUAL", "FAR", "HSOracleSpec", "UnitConstants", "CertifierConfig", "CopyLedger", "PrepResult",
    "Experiment", "Recorder", "Replayer", "SigmaFrame", "TailTestResult", "CertificationResult",
    "CaseConditions", "case1_tail_test", "conditional_block_prepare", "certify", "case_conditions",
]
