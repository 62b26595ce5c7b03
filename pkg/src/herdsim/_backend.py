"""Selects the compiled kernels when available, numpy otherwise.

Set ``HERDSIM_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_python = _pykernels

try:
    if os.environ.get("HERDSIM_BACKEND", "").lower() == "python":
        raise ImportError("python backend requested")
    from . import _ckernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_active = _compiled if _compiled is not None else _python
_threads = 1


def _env_threads() -> int:
    raw = os.environ.get("HERDSIM_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


_threads = _env_threads()


def name() -> str:
    return "cython" if _active is _compiled else "python"


def available() -> list[str]:
    return (["cython"] if _compiled is not None else []) + ["python"]


def use(backend: str) -> None:
    """Switch the active backend ("cython" or "python")."""
    global _active
    if backend == "python":
        _active = _python
    elif backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled extension herdsim._ckernels is not built")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {backend!r}")


def set_num_threads(n: int) -> None:
    global _threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = int(n)


def get_num_threads() -> int:
    return _threads


def interaction_sum(family, a, s, sources, weights, targets):
    sources = np.ascontiguousarray(sources, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    return _active.interaction_sum(family, a, s, sources, weights, targets, _threads)


def fp_step(rho, a_coef, b_coef, dx, dt):
    return _active.fp_step(rho, a_coef, b_coef, dx, dt)
