import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certlab.bucketing import ThresholdTable, upper_bucketing
from certlab.certifier import (EQUAL, FAR, CertifierConfig, CopyLedger, Experiment, HSOracleSpec,
                               PAIR_SEPARATION, Recorder, Replayer, SigmaFrame, UnitConstants,
                               _hoeffding_shots, _pairs, case1_tail_test, case_conditions,
                               conditional_block_prepare, certify)
from certlab.corpus import corpus_states, far_instance
from certlab.errors import ConfigInvalid, InputError, ZeroMassBlock
from certlab.haar import RngSeed, sample_haar_batch
from certlab.linalg import trace_norm


def _cfg(**kw):
    base = dict(eps=0.25, delta=0.1, seed=RngSeed(0))
    base.update(kw)
    return CertifierConfig(**base)


def _lab(rho, sigma, seed=0, oracle=None, exact=False):
    frame = SigmaFrame.of(sigma)
    return Experiment(frame.rotate(rho), frame.sigma(), oracle or HSOracleSpec(), RngSeed(seed), exact)


# ---- configuration --------------------------------------------------------

def test_oracle_spec_parsing():
    assert HSOracleSpec.parse("ideal") == HSOracleSpec()
    assert HSOracleSpec.parse("noisy:0.05") == HSOracleSpec("noisy", 0.05)
    assert HSOracleSpec.parse("noisy:0.05").label() == "noisy:0.05"
    assert HSOracleSpec.parse("statistical").kind == "statistical"
    for bad in ("noisy:x", "ideal:3", "bogus", "noisy:0.6"):
        with pytest.raises(ConfigInvalid):
            HSOracleSpec.parse(bad)
    with pytest.raises(ConfigInvalid):
        HSOracleSpec("ideal", 0.1)


def test_config_validation():
    for kw in ({"eps": 0.0}, {"eps": 1.0}, {"delta": 0.0}, {"delta": 1.5},
               {"oracle": HSOracleSpec("noisy", 0.2)},
               {"thresholds": ThresholdTable.from_eps_m(0.3, 2)}):
        with pytest.raises(ConfigInvalid):
            _cfg(**kw)
    cfg = _cfg(thresholds=ThresholdTable.from_eps_m(0.25, 2))
    assert cfg.table(2) == ThresholdTable.from_eps_m(0.25, 2)
    with pytest.raises(ConfigInvalid):
        cfg.table(3)
    with pytest.raises(ConfigInvalid):
        UnitConstants(oracle=0)
    with pytest.raises(ConfigInvalid):
        certify(np.eye(2) / 2, np.eye(2) / 2, {"eps": 0.25})


def test_repetitions_frozen():
    cfg = _cfg()
    assert cfg.repetitions(3) == math.ceil(18 * math.log(27 / 0.1))
    assert _hoeffding_shots(0.01, 0.05, 1.0) == math.ceil(math.log(40) / (2 * 1e-4))


def test_ledger():
    led = CopyLedger()
    led.charge("tail_test", 5)
    led.charge("trace_estimates", 7)
    led.charge("case2", 3, 1)
    led.charge("case2", 4, 1)
    led.charge("case3", 10, (0, 2))
    assert led.oracle_total == 17 and led.total == 29
    assert led.as_dict() == {"tail_test": 5, "trace_estimates": 7, "case2": {"1": 7},
                             "case3": {"0,2": 10}, "total": 29}
    with pytest.raises(InputError):
        led.charge("tail_test", -1)
    with pytest.raises(InputError):
        led.charge("elsewhere", 1)


def test_pairs_put_larger_bucket_first():
    ub = upper_bucketing([0.3, 0.2, 0.2, 0.1, 0.1, 0.1], 0.1)
    assert _pairs(ub) == [(2, 1), (3, 1), (3, 2)]
    assert PAIR_SEPARATION == pytest.approx(math.sqrt(2) / 15)


# ---- the simulated laboratory ---------------------------------------------

def test_exact_preparation_cost():
    sigma = np.diag([0.5, 0.25, 0.25])
    lab = _lab(sigma, sigma, exact=True)
    res = conditional_block_prepare(lab, (1, 2), budget=100, reps=3)
    assert list(res.consumed) == [200, 200, 200] and not res.shortfall.any()
    assert list(res.prepared) == [100, 100, 100]


def test_preparation_cost_is_negative_binomial():
    sigma = np.diag([0.8, 0.2])
    lab = _lab(sigma, sigma, seed=3)
    res = conditional_block_prepare(lab, (1,), budget=50, reps=4000)
    assert res.consumed.mean() == pytest.approx(50 / 0.2, rel=0.02)


def test_preparation_aborts_on_wrong_rate():
    sigma = np.diag([0.99, 0.01])
    lab = _lab(sigma, sigma)
    res = conditional_block_prepare(lab, (1,), budget=20, reps=5, rate_estimate=1.0)
    assert res.shortfall.all() and (res.consumed == 200).all() and (res.prepared == 0).all()
    with pytest.raises(ZeroMassBlock):
        conditional_block_prepare(_lab(np.diag([1.0, 0.0]), sigma), (1,), 10)
    with pytest.raises(InputError):
        conditional_block_prepare(lab, (1,), 10, rate_estimate=0.0)


def test_oracle_kinds():
    sigma = np.diag([0.5, 0.5])
    rho = np.array([[0.5, 0.3], [0.3, 0.5]])
    active = np.ones(2000, dtype=bool)
    # normalized block distance is ||[[0, .3], [.3, 0]]||_F = 0.3 sqrt 2
    dist = 0.3 * math.sqrt(2)
    ideal = _lab(rho, sigma)
    assert ideal.oracle_votes((0, 1), 2 * dist - 1e-6, 100, active).all()
    assert not ideal.oracle_votes((0, 1), 2 * dist + 1e-6, 100, active).any()
    noisy = _lab(rho, sigma, oracle=HSOracleSpec("noisy", 0.1))
    flips = 1 - noisy.oracle_votes((0, 1), 0.1, 100, active).mean()
    assert abs(flips - 0.1) < 5 * math.sqrt(0.09 / 2000)
    stat = _lab(rho, sigma, oracle=HSOracleSpec("statistical"))
    assert stat.oracle_votes((0, 1), 0.1, 10_000, active).all()
    assert not stat.oracle_votes((0, 1), 0.1, 10_000, np.zeros(5, dtype=bool)).any()


# ---- case 1 ---------------------------------------------------------------

def test_tail_test():
    eps = 0.25
    sigma = np.diag([0.6, 0.397, 0.003])
    ub = upper_bucketing(np.diag(sigma), eps)
    assert ub.S_tail == (2,)
    cfg = _cfg(exact=True)
    expect_shots = math.ceil(256 * math.log(3 / 0.1) / eps**2)
    res = case1_tail_test(_lab(sigma, sigma, exact=True), ub, cfg)
    assert res.decision == EQUAL and res.copies == expect_shots
    assert res.threshold == pytest.approx(0.5 * (0.125 * eps**2 + 0.003))
    heavy = np.diag([0.58, 0.397, 0.023])
    assert case1_tail_test(_lab(heavy, sigma, exact=True), ub, cfg).decision == FAR
    empty = upper_bucketing([0.5, 0.5], eps)
    assert case1_tail_test(_lab(np.eye(2) / 2, np.eye(2) / 2), empty, cfg).copies == 0


# ---- end to end -----------------------------------------------------------

STATES = corpus_states()


@pytest.mark.parametrize("state", STATES[::4], ids=lambda s: s.name)
def test_exact_mode_accepts_sigma(state):
    res = certify(state.sigma, state.sigma, _cfg(exact=True))
    assert res.verdict == EQUAL and res.exit_code() == 0
    assert res.ledger.total > 0


@pytest.mark.parametrize("family", ["spectral_shift", "haar_mixture", "unitary_rotation"])
def test_far_instances_rejected(family):
    state = STATES[9]
    rho = far_instance(state, family, 0.25)
    for seed in range(5):
        res = certify(rho, state.sigma, _cfg(seed=RngSeed(seed)))
        assert res.verdict == FAR and res.exit_code() == 1


def test_completeness_over_seeds():
    state = STATES[8]
    verdicts = [certify(state.sigma, state.sigma, _cfg(seed=RngSeed(s))).verdict for s in range(30)]
    assert verdicts.count(EQUAL) >= 29


def test_noisy_oracle_still_certifies():
    state = STATES[3]
    cfg = lambda s: _cfg(seed=RngSeed(s), oracle=HSOracleSpec("noisy", 0.1))
    assert sum(certify(state.sigma, state.sigma, cfg(s)).verdict == EQUAL for s in range(20)) >= 19
    rho = far_instance(state, "unitary_rotation", 0.25)
    assert sum(certify(rho, state.sigma, cfg(s)).verdict == FAR for s in range(20)) >= 19


def test_runs_are_deterministic():
    state = STATES[12]
    a = certify(state.sigma, state.sigma, _cfg(seed=RngSeed(5)))
    b = certify(state.sigma, state.sigma, _cfg(seed=RngSeed(5)))
    assert a.ledger == b.ledger and a.case_trace == b.case_trace


def test_stop_on_reject_off_runs_every_test():
    state = STATES[9]
    rho = far_instance(state, "spectral_shift", 0.25)
    full = certify(rho, state.sigma, _cfg(stop_on_reject=False))
    short = certify(rho, state.sigma, _cfg())
    ub = upper_bucketing(np.linalg.eigvalsh(state.sigma), 0.25)
    assert len(full.case_trace) == 1 + ub.m + ub.m * (ub.m - 1) // 2
    assert len(short.case_trace) <= len(full.case_trace)
    assert full.verdict == short.verdict == FAR


def test_replay_reproduces_decisions_without_the_state():
    state = STATES[4]
    rho = far_instance(state, "haar_mixture", 0.25)
    cfg = _cfg(seed=RngSeed(2), stop_on_reject=False)
    frame = SigmaFrame.of(state.sigma)
    rec = Recorder(Experiment(frame.rotate(rho), frame.sigma(), cfg.oracle, cfg.seed))
    live = certify(rho, state.sigma, cfg, experiment=rec)
    again = certify(None, state.sigma, cfg, experiment=Replayer(rec.log))
    assert again.verdict == live.verdict
    assert again.ledger == live.ledger and again.case_trace == live.case_trace
    # recording is transparent: the unwrapped run makes the same decisions
    assert certify(rho, state.sigma, cfg).case_trace == live.case_trace
    short = Replayer(rec.log[:1])
    with pytest.raises(InputError):
        certify(None, state.sigma, cfg, experiment=short)
    swapped = Replayer([("prepare", None)] + rec.log[1:])
    with pytest.raises(InputError):
        certify(None, state.sigma, cfg, experiment=swapped)


def test_copies_grow_as_eps_shrinks():
    sigma = STATES[11].sigma
    totals = [certify(sigma, sigma, _cfg(eps=e, exact=True)).ledger.total for e in (0.4, 0.2, 0.1)]
    assert totals[0] < totals[1] < totals[2]


# ---- case trichotomy ------------------------------------------------------

def test_case_conditions_on_sigma_itself():
    sigma = STATES[10].sigma
    cc = case_conditions(sigma, sigma, 0.25)
    assert not cc.any_holds and cc.distance == pytest.approx(0.0, abs=1e-12)


def test_case_conditions_tail():
    sigma = np.diag([0.6, 0.397, 0.003])
    rho = np.diag([0.58, 0.397, 0.023])
    cc = case_conditions(rho, sigma, 0.25)
    assert cc.tail_large and cc.tail_mass == pytest.approx(0.023)


def test_case_conditions_pair_only():
    # equal diagonals, pure off-diagonal coupling between two buckets
    sigma = np.diag([0.6, 0.4])
    rho = np.array([[0.6, 0.3], [0.3, 0.4]])
    cc = case_conditions(rho, sigma, 0.25)
    assert not cc.far_buckets and cc.far_pairs == [(0, 1)]
    assert cc.pair_coupling[(0, 1)] == pytest.approx(trace_norm(rho - sigma))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_trichotomy_on_random_far_states(seed):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(2, 7))
    eps = 0.25
    x = gen.dirichlet(np.ones(d))
    u = sample_haar_batch(d, 1, gen)[0]
    sigma = u @ np.diag(x) @ u.conj().T
    g = gen.standard_normal((d, d)) + 1j * gen.standard_normal((d, d))
    target = g @ g.conj().T
    target /= np.trace(target).real
    gap = trace_norm(target - sigma)
    if gap < eps:
        return
    t = eps / gap
    rho = (1 - t) * sigma + t * target
    assert case_conditions(rho, sigma, eps).any_holds
