"""Backend dispatch for the hot per-entry kernels.

Two interchangeable implementations exist: a numba-jitted loop backend and a
vectorized pure-numpy fallback. Selection happens once at import time from
the ``WQIMPUTE_BACKEND`` environment variable:

    auto   (default) numba if importable, numpy otherwise
    numba  require the jitted backend, fail if numba is missing
    numpy  force the vectorized fallback

Both backends expose the same four functions and compute the same math;
they may differ in floating-point summation order only.
"""

import os

from ..errors import ConfigError

_CHOICE = os.environ.get("WQIMPUTE_BACKEND", "auto").strip().lower()
if _CHOICE not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"WQIMPUTE_BACKEND must be auto, numba, or numpy, got {_CHOICE!r}")

if _CHOICE in ("auto", "numba"):
    try:
        from . import numba_backend as _impl
        BACKEND = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise
        from . import numpy_backend as _impl
        BACKEND = "numpy"
else:
    from . import numpy_backend as _impl
    BACKEND = "numpy"


def get_backend(name: str | None = None):
    """Return a backend module by name, or the active one when name is None."""
    if name is None:
        return _impl
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    if name == "numba":
        from . import numba_backend
        return numba_backend
    raise ConfigError(f"unknown backend {name!r}")


cp_predict = _impl.cp_predict
cp_residual_grads = _impl.cp_residual_grads
nlr_predict = _impl.nlr_predict
nlr_residual_grads = _impl.nlr_residual_grads
