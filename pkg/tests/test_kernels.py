import numpy as np
import pytest
from hypothesis import given, strategies as st

from certlab import _pykernels, kernels
from certlab.haar import sample_haar_batch

BACKENDS = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def _inputs(seed, d=5, k=6):
    gen = np.random.default_rng(seed)
    u = sample_haar_batch(d, k, gen)
    diag = gen.standard_normal(d)
    a = gen.standard_normal((k, d, d)) + 1j * gen.standard_normal((k, d, d))
    b = gen.standard_normal((k, d, d)) + 1j * gen.standard_normal((k, d, d))
    return u, diag, a, b, np.abs(gen.standard_normal(d))


def test_python_reference_semantics():
    u, diag, a, b, w = _inputs(0)
    conj = kernels.conjugate_diag(u, diag, _pykernels)
    assert np.allclose(conj[2], u[2] @ np.diag(diag) @ u[2].conj().T, atol=1e-14)
    pk = kernels.pair_kernel(a, b, w, _pykernels)
    assert pk.dtype == np.complex128
    assert np.allclose(pk[1], np.trace(np.diag(w) @ a[1] @ b[1]), atol=1e-12)
    hq = kernels.haar_quadratic(u, diag, _pykernels)
    assert np.allclose(hq[0], np.trace(u[0].conj().T @ np.diag(diag) @ u[0] @ np.diag(diag)).real)
    assert kernels.prefix_cutoff([0.25, 0.5, 0.125], 0.75, _pykernels) == 2
    assert kernels.prefix_cutoff([0.1, 0.2], 5.0, _pykernels) == 2
    assert kernels.prefix_cutoff([0.5], 0.1, _pykernels) == 0


def test_backend_selection_is_reported():
    assert kernels.BACKEND in BACKENDS


@needs_cython
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_backends_agree(seed, d):
    u, diag, a, b, w = _inputs(seed, d=d)
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    for fn, args in ((kernels.conjugate_diag, (u, diag)), (kernels.pair_kernel, (a, b, w)),
                     (kernels.haar_quadratic, (u, diag))):
        x, y = fn(*args, py), fn(*args, cy)
        assert x.dtype == y.dtype
        assert np.max(np.abs(x - y)) < 1e-12
    vals = np.abs(diag)
    for budget in (0.0, vals.sum() / 2, vals.sum() * 2):
        assert kernels.prefix_cutoff(vals, budget, py) == kernels.prefix_cutoff(vals, budget, cy)


@needs_cython
def test_pair_kernel_keeps_imaginary_part():
    # tr(W A B) is complex when W does not commute with A B
    a = np.array([[[0, 1], [0, 0]]], dtype=complex)
    b = np.array([[[0, 0], [1j, 0]]], dtype=complex)
    w = np.array([1.0, 2.0])
    for be in BACKENDS.values():
        assert kernels.pair_kernel(a, b, w, be)[0] == pytest.approx(1j)
