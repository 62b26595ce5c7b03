"""Pure numpy versions of the compiled loops in ``_ckernels.pyx``."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

LINEAR, SATURATING, TANH_RADIAL = 0, 1, 2

# elements per (targets x sources) block, keeps temporaries around 32 MB
_BLOCK = 1 << 22


def _radial_factor(family: int, a: float, s: float, r: np.ndarray) -> np.ndarray:
    if family == LINEAR:
        return np.full_like(r, a)
    if family == SATURATING:
        return a / (1.0 + r)
    out = np.zeros_like(r)
    nz = r > 0.0
    out[nz] = (a / s) * np.tanh(s * r[nz]) / r[nz]
    return out


def _rows(family, a, s, sources, weights, targets):
    diff = sources[None, :, :] - targets[:, None, :]
    r = np.sqrt(np.einsum("jik,jik->ji", diff, diff))
    f = weights[None, :] * _radial_factor(family, a, s, r)
    # sum over sources with a fixed per-row reduction order
    return np.sum(f[:, :, None] * diff, axis=1)


def interaction_sum(family, a, s, sources, weights, targets, nthreads=1):
    """out[j] = sum_i weights[i] * K(sources[i] - targets[j])."""
    sources = np.ascontiguousarray(sources, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if targets.shape[1] != sources.shape[1]:
        raise ValueError("sources and targets differ in dimension")
    if weights.shape[0] != sources.shape[0]:
        raise ValueError("weights length does not match sources")
    n_tgt = targets.shape[0]
    out = np.zeros((n_tgt, sources.shape[1]))
    if n_tgt == 0 or sources.shape[0] == 0:
        return out
    step = max(1, _BLOCK // max(1, sources.shape[0] * sources.shape[1]))
    chunks = [slice(j, min(j + step, n_tgt)) for j in range(0, n_tgt, step)]

    def work(sl):
        out[sl] = _rows(family, a, s, sources, weights, targets[sl])

    if nthreads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            list(pool.map(work, chunks))
    else:
        for sl in chunks:
            work(sl)
    return out


def fp_step(rho, a_coef, b_coef, dx, dt):
    """In-place explicit finite-volume step with face flux
    ``a_coef * rho[i] - b_coef * rho[i+1]``; returns min(rho)."""
    n = rho.shape[0]
    if a_coef.shape[0] != n - 1 or b_coef.shape[0] != n - 1:
        raise ValueError("face coefficients must have n_cells - 1 entries")
    full = np.zeros(n + 1)
    full[1:-1] = a_coef * rho[:-1] - b_coef * rho[1:]
    rho -= (dt / dx) * (full[1:] - full[:-1])
    return float(rho.min())
