import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from certlab.divergence import (MAX_TENSOR_DIM, chi2_exp_upper, chi2_exp_upper_curve, chi2_kernel, chi2_tensor_exact,
                                classical_chi2, classical_chi2_bruteforce, classical_kernel_matrix,
                                helstrom_success, inverse_hs_norm, kernel_matrix, kernel_Z, mixedness_bound,
                                nearly_mixed_bound, nearly_mixed_critical_n, paired_estimates,
                                sample_pair_kernels)
from certlab.errors import InfiniteSupport, InputError, SingularSigma, TooLarge, ZeroMassCell
from certlab.haar import sample_haar_batch
from certlab.instances import (PerturbationFamily, classical_paninski_family, nearly_mixed_family,
                               quantum_paninski_family, rotation_pair_family, two_by_two_sign_family)
from certlab.linalg import DensityMatrix, diagonal_state, trace_distance

from conftest import random_state


def test_kernel_z_commuting_example():
    sigma = np.diag([0.5, 0.25, 0.25])
    a = np.diag([0.6, 0.2, 0.2])
    b = np.diag([0.4, 0.35, 0.25])
    # sum (a-s)(b-s)/s = (.1)(-.1)/.5 + (-.05)(.1)/.25 + 0
    assert kernel_Z(a, b, sigma) == pytest.approx(-0.02 - 0.02)


def test_kernel_z_is_complex_off_the_eigenbasis(gen):
    sigma = np.diag([0.5, 0.3, 0.2])
    a, b = random_state(3, gen), random_state(3, gen)
    z = kernel_Z(a, b, sigma)
    direct = np.trace(np.linalg.inv(sigma) @ (a - sigma) @ (b - sigma))
    assert z == pytest.approx(direct, abs=1e-12)
    assert abs(z.imag) > 1e-6
    assert kernel_Z(b, a, sigma) == pytest.approx(np.conj(z), abs=1e-12)


def _finite_families(seed):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(2, 5))
    lam = np.sort(gen.dirichlet(np.ones(d)) * 0.5 + 0.5 / d)[::-1]
    sigma = DensityMatrix(np.diag(lam).astype(complex))
    u = sample_haar_batch(d, 1, gen)[0]
    rotated = DensityMatrix(u @ sigma.matrix @ u.conj().T)
    fams = [nearly_mixed_family(sigma, 0.1).discretize(3, gen),
            nearly_mixed_family(rotated, 0.1).discretize(2, gen)]
    if d % 2 == 0:
        fams.append(classical_paninski_family(d, 0.3))
        fams.append(quantum_paninski_family(d, 0.3).discretize(3, gen))
    return fams


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_kernel_identity_against_tensor_oracle(seed, n):
    for fam in _finite_families(seed):
        if fam.dim**n > MAX_TENSOR_DIM:
            continue
        assert chi2_kernel(fam, n=n).value == pytest.approx(chi2_tensor_exact(fam, n=n).value, abs=1e-9)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_kernel_identity_two_by_two_sign(n):
    fam = two_by_two_sign_family(diagonal_state([0.4, 0.35, 0.25]), 0.2)
    assert chi2_kernel(fam, n=n).value == pytest.approx(chi2_tensor_exact(fam, n=n).value, abs=1e-9)


def test_kernel_identity_singular_reference():
    # the perturbation lives inside the support, so the kernel is well defined
    fam = two_by_two_sign_family(diagonal_state([0.5, 0.5, 0.0]), 0.2)
    for n in (1, 2):
        assert chi2_kernel(fam, n=n).value == pytest.approx(chi2_tensor_exact(fam, n=n).value, abs=1e-9)


def test_singular_reference_with_leak_raises():
    base = diagonal_state([0.5, 0.5, 0.0])
    leak = PerturbationFamily("two_by_two_sign", base, 0.1,
                              deltas=(np.diag([-0.1, 0.0, 0.1]).astype(complex),), mean_zero=False)
    with pytest.raises(SingularSigma):
        kernel_matrix(leak)


def test_kernel_matrix_is_hermitian(gen):
    u = sample_haar_batch(3, 1, gen)[0]
    sigma = DensityMatrix(u @ np.diag([0.5, 0.3, 0.2]).astype(complex) @ u.conj().T)
    fam = nearly_mixed_family(DensityMatrix(np.diag([0.5, 0.3, 0.2]).astype(complex)), 0.1).discretize(4, gen)
    z = kernel_matrix(fam, sigma)
    assert np.allclose(z, z.conj().T, atol=1e-14)


def test_classical_paninski_closed_form():
    # H = (2 eps^2 / d) sum_i theta_i theta'_i, so D at n = 2 is E H^2 = 2 eps^4 / d
    d, eps = 8, 0.4
    fam = classical_paninski_family(d, eps)
    assert chi2_kernel(fam, n=1).value == pytest.approx(0.0, abs=1e-15)
    assert chi2_kernel(fam, n=2).value == pytest.approx(2 * eps**4 / d, abs=1e-15)
    assert classical_chi2(fam, n=2).value == pytest.approx(2 * eps**4 / d, abs=1e-15)
    h = classical_kernel_matrix(fam)
    assert h[0, 0] == pytest.approx(2 * eps**2 / d * (d // 2))


@pytest.mark.parametrize("d, n", [(2, 4), (4, 3), (6, 3), (8, 4)])
def test_classical_matches_enumeration(d, n):
    fam = classical_paninski_family(d, 0.35)
    assert classical_chi2(fam, n=n).value == pytest.approx(classical_chi2_bruteforce(fam, n=n), abs=1e-12)


def test_classical_raw_distributions_and_errors():
    p = np.array([[0.6, 0.4], [0.4, 0.6]])
    u = np.array([0.5, 0.5])
    assert classical_chi2(p, u, n=2).value == pytest.approx(classical_chi2_bruteforce(p, u, n=2))
    with pytest.raises(ZeroMassCell):
        classical_chi2(p, np.array([1.0, 0.0]))
    with pytest.raises(TooLarge):
        classical_chi2_bruteforce(classical_paninski_family(8, 0.1), n=5)
    with pytest.raises(InputError):
        classical_chi2(quantum_paninski_family(2, 0.1))


def test_monte_carlo_agrees_with_exact():
    fam = quantum_paninski_family(4, 0.5).discretize(6, 3)
    exact = chi2_kernel(fam, n=3).value
    mc = chi2_kernel(fam, n=3, mode="monte_carlo", samples=50_000, rng=1)
    assert abs(mc.value - exact) < 5 * mc.std_error
    cm = classical_chi2(classical_paninski_family(6, 0.4), n=3, mode="monte_carlo", samples=50_000, rng=2)
    assert abs(cm.value - classical_chi2(classical_paninski_family(6, 0.4), n=3).value) < 5 * cm.std_error


def test_exp_dominates_kernel_for_real_z():
    fam = classical_paninski_family(6, 0.5)
    for n in (1, 2, 5):
        assert chi2_exp_upper(fam, n=n, mode="exact").value >= chi2_kernel(fam, n=n).value - 1e-15
    k, e, z = paired_estimates(quantum_paninski_family(4, 0.5), None, 3, 2000, 0)
    assert np.max(np.abs(z.imag)) < 1e-15  # I/d commutes with every perturbation, so Z is real
    assert e.value >= k.value


def test_sampling_is_reproducible():
    fam = quantum_paninski_family(4, 0.3)
    a = sample_pair_kernels(fam, None, 5000, 7)
    assert np.array_equal(a, sample_pair_kernels(fam, None, 5000, 7))
    with pytest.raises(InputError):
        sample_pair_kernels(fam, None, 0, 7)


def test_structural_errors():
    with pytest.raises(InfiniteSupport):
        kernel_matrix(quantum_paninski_family(4, 0.3))
    with pytest.raises(TooLarge):
        chi2_tensor_exact(classical_paninski_family(4, 0.3), n=5)
    with pytest.raises(InputError):
        chi2_kernel(classical_paninski_family(4, 0.3), n=-1)
    with pytest.raises(InputError):
        chi2_kernel(classical_paninski_family(4, 0.3), mode="bogus")


def test_helstrom():
    sigma = diagonal_state([0.7, 0.2, 0.1])
    fam = rotation_pair_family(sigma, 0.2)
    alt = fam.members()[0][1]
    assert helstrom_success(fam, n=1) == pytest.approx(0.5 + 0.5 * trace_distance(alt, sigma.matrix))
    assert helstrom_success(fam, n=1) <= helstrom_success(fam, n=3) <= 1.0


def test_bounds_frozen():
    assert mixedness_bound(4, 0.5, 2) == pytest.approx(math.expm1(12 * 4 * 0.5**4 / 16))
    sigma = np.diag([0.25, 0.25, 0.25, 0.25])
    assert inverse_hs_norm(sigma) == pytest.approx(8.0)
    delta = 2 * 0.2 / 4
    assert nearly_mixed_bound(sigma, 0.2, 3) == pytest.approx(math.expm1(48 * 9 * 64 * delta**4 / 4))
    # at the critical copy count the exponent is 48 * 0.02^2 regardless of sigma
    for s in (sigma, np.diag([0.4, 0.3, 0.2, 0.1])):
        n = nearly_mixed_critical_n(s, 0.2)
        assert nearly_mixed_bound(s, 0.2, n) == pytest.approx(math.expm1(48 * 0.02**2))
    with pytest.raises(SingularSigma):
        inverse_hs_norm(np.diag([1.0, 0.0]))


def test_exp_upper_curve_reuses_one_sample_set():
    fam = quantum_paninski_family(4, 0.5)
    curve = chi2_exp_upper_curve(fam, ns=(1, 3, 7.5), samples=3000, rng=5)
    for est in curve:
        single = chi2_exp_upper(fam, n=est.n_copies, samples=3000, rng=5)
        assert est.value == single.value and est.std_error == single.std_error
    with pytest.raises(InputError):
        chi2_exp_upper_curve(fam, ns=(2, -1), samples=10)
