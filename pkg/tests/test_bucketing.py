import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from certlab.bucketing import (ThresholdTable, bucket_count_bound, bucket_index, extract_block,
                               lower_bucketing, quasinorms, sorted_sequences_property,
                               upper_bucket_count_limit, upper_bucketing)
from certlab.errors import EpsOutOfRange, InputError, PreconditionViolated, UnknownBucket, ZeroEigenvalue
from certlab.linalg import Spectrum

from conftest import random_state, spectra


def _index_oracle(value: float) -> int:
    # exact rational search for 2^-(j+1) < value <= 2^-j
    v = Fraction(value)
    j = 0
    while v <= Fraction(2) ** (-(j + 1)):
        j += 1
    while v > Fraction(2) ** (-j):
        j -= 1
    return j


@pytest.mark.parametrize("v, j", [(1.0, 0), (0.5, 1), (0.75, 0), (0.3, 1), (0.25, 2), (2.0**-10, 10),
                                  (2.0**-10 * 1.0000001, 9), (3.0, -2)])
def test_bucket_index_examples(v, j):
    assert bucket_index(v) == j


@given(st.floats(1e-300, 1e3, allow_nan=False))
def test_bucket_index_matches_rational_oracle(v):
    assert bucket_index(v) == _index_oracle(v)


def test_bucket_index_rejects_zero():
    with pytest.raises(ZeroEigenvalue):
        bucket_index(0.0)


# ---- lower scheme on a hand-worked spectrum -------------------------------

def test_lower_scheme_worked_example():
    lb = lower_bucketing([0.5, 0.2, 0.15, 0.1, 0.05], 0.01)
    assert lb.buckets == {1: (0,), 2: (1, 2), 3: (3,), 4: (4,)}
    assert lb.d_j == {1: 1, 2: 2, 3: 1, 4: 1}
    # keys lambda/d_j = .5, .1, .075, .1, .05 sorted with ties broken by index
    assert lb.sort_permutation == (4, 2, 1, 3, 0)
    assert lb.d_prime == 1 and lb.S_tail == (4,)
    assert lb.i_max == 0 and lb.S_periph == (0, 4)
    assert lb.S_sing == (0, 3, 4) and lb.S_many == (1, 2)
    assert lb.J_star == (1, 2, 3) and lb.J_prime == (2, 3)
    assert lb.sigma_star.values == (0.5, 0.2, 0.15, 0.1, 0.0)
    assert lb.sigma_prime.values == (0.0, 0.2, 0.15, 0.1, 0.0)
    q = quasinorms(lb)
    assert q["sigma_star"] == pytest.approx((math.sqrt(.5) + math.sqrt(.2) + math.sqrt(.15) + math.sqrt(.1)) ** 2)


def test_lower_scheme_keeps_one_survivor():
    lb = lower_bucketing([0.5, 0.5], 0.08)  # 12 eps = 0.96 would swallow everything but one
    assert lb.d_prime == 1 and len(lb.S_tail) == 1


def test_lower_scheme_preconditions():
    with pytest.raises(EpsOutOfRange):
        lower_bucketing([0.5, 0.5], 1 / 12)
    with pytest.raises(ZeroEigenvalue):
        lower_bucketing([1.0, 0.0], 0.01)
    with pytest.raises(InputError):
        lower_bucketing([], 0.01)


# ---- upper scheme ---------------------------------------------------------

def test_upper_scheme_worked_example():
    ub = upper_bucketing([0.6, 0.3, 0.09, 0.01], 0.5)  # budget 0.0125
    assert ub.S_tail == (3,) and ub.d_star == 1
    assert ub.buckets == {0: (0,), 1: (1,), 3: (2,)}
    assert ub.m == 3 and ub.d_j == {0: 1, 1: 1, 3: 1}
    assert ub.sigma_star.values == (0.6, 0.3, 0.09, 0.0)


def test_upper_scheme_sends_zeros_to_tail():
    ub = upper_bucketing([1.0, 0.0, 0.0], 0.01)
    assert set(ub.S_tail) == {1, 2} and ub.m == 1


def test_upper_scheme_preconditions():
    with pytest.raises(EpsOutOfRange):
        upper_bucketing([1.0], 1.0)
    with pytest.raises(InputError):
        upper_bucketing([1.2, -0.2], 0.5)


def test_threshold_table_frozen():
    t = ThresholdTable.from_eps_m(0.2, 2)
    unit = 0.2 / 4
    assert t.tail_reject == pytest.approx(0.125 * 0.04)
    assert (t.case2_far, t.case3_far) == pytest.approx((0.05 * unit, 0.2 * unit))
    assert (t.trace_est_err_case2, t.trace_close_case2, t.small_block_case2) == pytest.approx(
        (0.005 * unit, 0.01 * unit, 0.02 * unit))
    assert (t.trace_est_err_case3, t.trace_close_case3, t.small_block_case3) == pytest.approx(
        (0.025 * unit, 0.05 * unit, 0.1 * unit))
    with pytest.raises(InputError):
        ThresholdTable.from_eps_m(0.2, 0)


# ---- sorted sequences -----------------------------------------------------

def test_sorted_sequences_worked_example():
    # merged order 0.01(u) 0.02(v,w=2) 0.04(u) 0.05(v); running mass .01 .05 .09 .14 vs 3 eps' = 0.09
    res = sorted_sequences_property([0.01, 0.04], [0.02, 0.05], [2, 1], 0.03)
    assert (res.s, res.a, res.b) == (3, 2, 1)
    assert res.holds  # first two weighted v entries: 0.04 + 0.05 > 0.03


@pytest.mark.parametrize("args", [
    ([0.1, 0.15], [0.1], [1], 0.1),
    ([0.1], [0.2, 0.1], [1, 1], 0.1),
    ([0.1], [0.1], [1, 2], 0.1),
    ([0.1], [0.1], [0], 0.1),
    ([0.1], [0.1], [1], 0.0),
])
def test_sorted_sequences_preconditions(args):
    with pytest.raises(PreconditionViolated):
        sorted_sequences_property(*args)


@given(st.integers(0, 2**32 - 1))
def test_sorted_sequences_always_holds(seed):
    gen = np.random.default_rng(seed)
    k = int(gen.integers(1, 8))
    u = list(np.cumprod(gen.uniform(2.0, 3.0, k)) * gen.uniform(1e-4, 1e-2))
    v = sorted(gen.uniform(0, 0.05, int(gen.integers(1, 8))))
    dv = list(gen.integers(1, 5, len(v)))
    assert sorted_sequences_property(u, v, dv, float(gen.uniform(1e-3, 0.2))).holds


# ---- blocks ---------------------------------------------------------------

def test_blocks_partition_the_matrix(gen):
    lam = np.array([0.4, 0.3, 0.15, 0.1, 0.04, 0.01])
    ub = upper_bucketing(lam, 0.5)
    rho = random_state(6, gen)
    total = extract_block(rho, "junk_diag", ub).raw() + extract_block(rho, "junk_off", ub).raw()
    js = list(ub.buckets)
    for a in js:
        total = total + extract_block(rho, ("diag", a), ub).raw()
        for b in js:
            if a < b:
                total = total + extract_block(rho, ("offdiag", a, b), ub).raw()
    assert np.allclose(total, rho, atol=1e-15)


def test_block_views(gen):
    lam = [0.4, 0.3, 0.2, 0.1]
    lb = lower_bucketing(lam, 0.001)
    rho = random_state(4, gen)
    j = lb.bucket_of(1)
    view = extract_block(rho, ("diag", j), lb)
    idx = list(lb.buckets[j])
    assert view.trace() == pytest.approx(np.trace(rho[np.ix_(idx, idx)]).real)
    norm = view.as_normalized()
    assert np.trace(norm.matrix()).real == pytest.approx(1.0)
    assert np.allclose(norm.compressed(), rho[np.ix_(idx, idx)] / view.trace())
    pair = extract_block(rho, ("principal", lb.bucket_of(0), lb.bucket_of(3)), lb)
    assert pair.is_principal()
    off = extract_block(rho, ("offdiag", lb.bucket_of(0), lb.bucket_of(3)), lb)
    with pytest.raises(InputError):
        off.as_normalized()
    with pytest.raises(UnknownBucket):
        extract_block(rho, ("diag", 99), lb)
    with pytest.raises(InputError):
        extract_block(rho, ("bogus",), lb)


# ---- invariants -----------------------------------------------------------

@given(spectra(), st.floats(1e-3, 1 / 12 - 1e-6))
def test_lower_invariants(lam, eps):
    lb = lower_bucketing(lam, eps)
    assert lb.tail_mass() <= 12 * eps + 1e-12
    bc = bucket_count_bound(lb)
    assert bc.count_disjoint_from_tail <= bc.bound
    assert bc.bound == math.ceil(math.log2(lam.size**2 / eps)) + 2
    for j, s in lb.buckets.items():
        assert all(2.0 ** (-j - 1) < lam[i] <= 2.0**-j for i in s)
    q = quasinorms(lb)
    assert q["sigma_prime"] <= q["sigma_star"] <= q["sigma"] + 1e-12
    assert lb.i_max not in lb.S_tail


@given(spectra(positive=False), st.floats(1e-3, 0.999))
def test_upper_invariants(lam, eps):
    ub = upper_bucketing(Spectrum(tuple(lam)), eps)
    assert ub.tail_mass() <= eps * eps / 20 + 1e-15
    assert ub.m <= upper_bucket_count_limit(lam.size, eps)
    kept = sorted(i for s in ub.buckets.values() for i in s)
    assert sorted(kept + list(ub.S_tail)) == list(range(lam.size))
    if ub.S_tail and kept:
        assert max(lam[list(ub.S_tail)]) <= min(lam[kept])
