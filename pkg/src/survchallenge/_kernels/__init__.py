"""Hot-loop kernels with a compiled implementation and a numpy fallback.

The compiled extension is used when it imports; setting the environment
variable ``SURVCHALLENGE_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

if _ckernels is not None and not os.environ.get("SURVCHALLENGE_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"


def available_backends():
    return sorted(_BACKENDS)


def _impl(backend):
    try:
        return _BACKENDS[backend or BACKEND]
    except KeyError:
        raise ValueError(f"unknown kernel backend {backend!r}; have {available_backends()}") from None


def _vec(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def concordance_counts(risk, time, event, backend=None):
    """Return ``(concordant, tied, comparable)`` pair counts as Python ints."""
    impl = _impl(backend)
    return impl.concordance_counts(_vec(risk), _vec(time), _vec(event, np.uint8))


def cox_breslow(X, eta, time, event, backend=None):
    """Return ``(loglik, grad, hess)``; rows must be sorted by descending time."""
    impl = _impl(backend)
    return impl.cox_breslow(_vec(X), _vec(eta), _vec(time), _vec(event, np.uint8))


__all__ = ["BACKEND", "available_backends", "concordance_counts", "cox_breslow"]
