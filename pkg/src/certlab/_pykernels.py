"""Numpy implementations of the hot kernels.

These define the reference semantics; ``_ckernels.pyx`` must agree with them
to rounding error. Inputs are assumed contiguous and correctly typed (the
dispatcher in :mod:`certlab.kernels` takes care of that).
"""

from __future__ import annotations

import numpy as np


def conjugate_diag(unitaries: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """Batched ``U diag(s) U^H`` for a stack of square matrices."""
    out = (unitaries * diag[None, None, :]) @ np.conj(np.swapaxes(unitaries, 1, 2))
    # the diagonal is real in exact arithmetic; drop the rounding noise
    idx = np.arange(unitaries.shape[1])
    out[:, idx, idx] = np.einsum("kac,c->ka", np.abs(unitaries) ** 2, diag)
    return out


def pair_kernel(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Batched ``tr(diag(w) A B)``; complex unless diag(w) commutes with the product."""
    return np.einsum("a,kab,kba->k", weights.astype(complex), a, b)


def haar_quadratic(unitaries: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """Batched ``tr(U^H S U S)`` for diagonal ``S``, i.e. sum_ab s_a s_b |U_ab|^2."""
    return np.einsum("a,kab,b->k", diag, np.abs(unitaries) ** 2, diag)


def prefix_cutoff(values: np.ndarray, budget: float) -> int:
    """Length of the longest prefix whose running sum stays at or below ``budget``."""
    total = 0.0
    for k, v in enumerate(values):
        total += v
        if total > budget:
            return k
    return len(values)
