"""Kernel backend selection.

The compiled extension is used when importable; set ``MGLMMNET_PURE_PYTHON=1``
to force the numpy fallback.  :func:`use_backend` switches at runtime
(benchmarks and backend-equivalence tests rely on it).
"""
import os

from . import _series_py

try:
    from . import _series as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _series_py}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

BACKEND = "python"
wright_log_sum = _series_py.wright_log_sum


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name):
    global BACKEND, wright_log_sum
    try:
        module = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None
    BACKEND = name
    wright_log_sum = module.wright_log_sum


if _compiled is not None and not os.environ.get("MGLMMNET_PURE_PYTHON"):
    use_backend("cython")
