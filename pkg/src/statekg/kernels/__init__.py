"""Scan-kernel backend selection.

The recurrent backbones run their sequential inner loops through one of two
interchangeable kernel sets: numba-jitted loops (fast) or pure numpy
(reference fallback). Selection order:

  1. the ``STATEKG_KERNELS`` environment variable ("numba" or "numpy"),
  2. numba if it imports, numpy otherwise.

``use(name)`` overrides the choice at runtime (tests, benchmarks).
"""

from __future__ import annotations

import os

from . import numpy_backend

_KERNEL_NAMES = (
    "rnn_forward",
    "rnn_backward",
    "lstm_forward",
    "lstm_backward",
    "ssm_forward",
    "ssm_backward",
)

_active_name = "numpy"
_active = numpy_backend


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import numba_backend  # noqa: F401

        names.append("numba")
    except ImportError:
        pass
    return names


def use(name: str) -> None:
    """Activate a kernel backend by name ("numpy" or "numba")."""
    global _active, _active_name
    if name == "numpy":
        _active = numpy_backend
    elif name == "numba":
        from . import numba_backend

        _active = numba_backend
    else:
        raise ValueError(f"unknown kernel backend {name!r}; use 'numpy' or 'numba'")
    _active_name = name


def active_backend() -> str:
    return _active_name


def get(kernel: str):
    if kernel not in _KERNEL_NAMES:
        raise KeyError(kernel)
    return getattr(_active, kernel)


def _default_backend() -> str:
    env = os.environ.get("STATEKG_KERNELS", "").strip().lower()
    if env in ("numpy", "numba"):
        return env
    if env:
        raise ValueError(
            f"STATEKG_KERNELS={env!r} not recognized; use 'numpy' or 'numba'"
        )
    return "numba" if "numba" in available_backends() else "numpy"


use(_default_backend())
