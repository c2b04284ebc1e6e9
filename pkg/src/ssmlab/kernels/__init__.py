"""Hot recurrence kernels with a numba fast path and a numpy fallback.

The active backend is chosen once at import from the ``SSMLAB_BACKEND``
environment variable: ``numba`` (default when importable), or ``numpy``.
``set_backend`` switches at runtime, which the benchmark and the twin
tests use to compare both implementations.
"""

import os

from . import scan_numpy

_BACKENDS = {"numpy": scan_numpy}

try:
    from . import scan_numba

    _BACKENDS["numba"] = scan_numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _HAVE_NUMBA = False

_KERNEL_NAMES = [
    "phi1",
    "phi1_grad",
    "selective_scan_fwd",
    "selective_scan_bwd",
    "lti_scan_fwd",
    "lti_scan_bwd",
    "lti_kernel_fwd",
    "lti_kernel_bwd",
    "dwconv_fwd",
    "dwconv_bwd",
]

_active = None
_active_name = ""


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend ('numpy' or 'numba') for this process."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _active = _BACKENDS[name]
    _active_name = name


def backend_name():
    return _active_name


def _default_backend():
    env = os.environ.get("SSMLAB_BACKEND", "").strip().lower()
    if env:
        if env not in _BACKENDS:
            raise ValueError(
                f"SSMLAB_BACKEND={env!r} not available; choose from {available_backends()}"
            )
        return env
    return "numba" if _HAVE_NUMBA else "numpy"


set_backend(_default_backend())


def __getattr__(name):
    if name in _KERNEL_NAMES:
        return getattr(_active, name)
    raise AttributeError(name)
