"""Backend selection for the hot numerical kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Setting ``CERTLAB_PURE_PYTHON=1`` forces the fallback.
All public functions coerce their inputs to contiguous arrays of the right
dtype before dispatching, so both backends see identical data.
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from certlab import _pykernels


def _load_compiled() -> ModuleType | None:
    if os.environ.get("CERTLAB_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from certlab import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"
_impl: ModuleType = _compiled if _compiled is not None else _pykernels


def available_backends() -> dict[str, ModuleType]:
    """Every backend importable in this environment, keyed by name."""
    found = {"python": _pykernels}
    try:
        from certlab import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found


def _c(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.complex128)


def _r(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def conjugate_diag(unitaries, diag, backend: ModuleType | None = None) -> np.ndarray:
    return (backend or _impl).conjugate_diag(_c(unitaries), _r(diag))


def pair_kernel(a, b, weights, backend: ModuleType | None = None) -> np.ndarray:
    return np.asarray((backend or _impl).pair_kernel(_c(a), _c(b), _r(weights)))


def haar_quadratic(unitaries, diag, backend: ModuleType | None = None) -> np.ndarray:
    return np.asarray((backend or _impl).haar_quadratic(_c(unitaries), _r(diag)))


def prefix_cutoff(values, budget: float, backend: ModuleType | None = None) -> int:
    return int((backend or _impl).prefix_cutoff(_r(values), float(budget)))
