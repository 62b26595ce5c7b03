"""Mean-field limit: Picard iteration on the law of the limit follower.

The law of the limit follower is represented by an ensemble of ``M``
independent paths. One Picard sweep freezes the current flow, integrates
the herder ODE against it, then re-integrates every ensemble path against
the frozen flow and herders with the path's own Brownian tape and initial
datum. Sweeps stop once the time-weighted distance

    max_k exp(-gamma t_k) W1(nu_new(t_k), nu_old(t_k))

drops below ``tol``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .controls import ControlLaw
from .kernels import KernelSet
from .measures import EmpiricalMeasure, moment, wasserstein1
from .particles import (
    InitialLaw,
    IntegrationBlowupError,
    NoiseLevel,
    _check_controls,
    follower_drift,
    herder_drift,
    n_steps_for,
    simulate_batch,
)
from .rng import increments_block

log = logging.getLogger(__name__)


class PicardNonConvergenceError(RuntimeError):
    def __init__(self, iterations: int, last_value: float, last_ratio: float):
        super().__init__(
            f"Picard iteration did not converge in {iterations} sweeps "
            f"(last distance {last_value:.3e}, last contraction ratio {last_ratio:.3f})"
        )
        self.iterations = iterations
        self.last_value = last_value
        self.last_ratio = last_ratio


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PicardConfig:
    gamma: float | None = None  # None -> 4 L
    tol: float = 1e-3
    max_iter: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Picard tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("Picard max_iter must be >= 1")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("Picard gamma must be >= 0")

    def weight(self, L: float) -> float:
        return 4.0 * L if self.gamma is None else self.gamma


@dataclass
class LawFlow:
    """Ensemble of ``M`` paths on a uniform grid; node ``k`` is the uniform
    empirical measure of ``paths[k]``."""

    times: np.ndarray  # (K+1,)
    paths: np.ndarray  # (K+1, M, d)

    @property
    def M(self) -> int:
        return self.paths.shape[1]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def __len__(self) -> int:
        return self.times.shape[0]

    def snapshot(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.paths[k])

    def sup_moment(self, p: float) -> float:
        return max(moment(self.snapshot(k), p) for k in range(len(self)))

    def variance(self) -> np.ndarray:
        """Per-node variance (summed over coordinates)."""
        return self.paths.var(axis=1).sum(axis=-1)

    def mean(self) -> np.ndarray:
        return self.paths.mean(axis=1)

    def to_csv(self, path=None) -> str | None:
        """Rows ``t, weight, x1..xd``."""
        d = self.dim
        w = repr(1.0 / self.M)
        lines = [",".join(["t", "weight"] + [f"x{k + 1}" for k in range(d)])]
        for k, t in enumerate(self.times):
            tt = repr(float(t))
            lines.extend(f"{tt},{w}," + ",".join(repr(float(v)) for v in row) for row in self.paths[k])
        text = "\n".join(lines) + "\n"
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


@dataclass
class MKVSolution:
    flow: LawFlow
    Y: np.ndarray  # (K+1, m, d)
    history: list[float] = field(default_factory=list)
    gamma: float = 0.0
    seed: int = 0

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def times(self) -> np.ndarray:
        return self.flow.times

    def ratios(self) -> list[float]:
        h = self.history
        return [h[i] / h[i - 1] if h[i - 1] > 0 else 0.0 for i in range(1, len(h))]


def _nodewise_w1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W1 between the uniform ensembles ``a[k]`` and ``b[k]`` at every node."""
    if a.shape[-1] == 1:
        return np.mean(np.abs(np.sort(a[..., 0], axis=1) - np.sort(b[..., 0], axis=1)), axis=1)
    return np.array([wasserstein1(EmpiricalMeasure(x), EmpiricalMeasure(y)) for x, y in zip(a, b)])


def _integrate_herders(Y0, times, kernels, controls, atoms_at, weights):
    K = times.shape[0] - 1
    Y = np.empty((K + 1,) + Y0.shape)
    Y[0] = Y0
    for k in range(K):
        dt = times[k + 1] - times[k]
        drift = herder_drift(kernels, controls, Y[k][None], atoms_at(k)[None], weights, times[k], times[k + 1])
        Y[k + 1] = Y[k] + dt * drift[0]
    return Y


def _integrate_followers(X0, times, kernels, flow_paths, weights, Y, xi, amp):
    K = times.shape[0] - 1
    X = np.empty((K + 1,) + X0.shape)
    X[0] = X0
    for k in range(K):
        dt = times[k + 1] - times[k]
        drift = follower_drift(kernels, X[k][None], flow_paths[k][None], weights, Y[k][None])[0]
        X[k + 1] = X[k] + dt * drift
        if xi is not None:
            X[k + 1] += amp * xi[:, k, :]
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X.reshape(K + 1, -1)), axis=1)))
        raise IntegrationBlowupError(bad - 1, "ensemble")
    return X


def picard_sweep(flow: LawFlow, X0, Y0, kernels, controls, xi, noise: NoiseLevel):
    """Apply the solution map once to a frozen flow; returns ``(paths, Y)``."""
    times = flow.times
    M = flow.M
    w = np.full(M, 1.0 / M)
    dt = times[1] - times[0] if len(times) > 1 else 0.0
    Y = _integrate_herders(np.asarray(Y0, dtype=np.float64), times, kernels, controls, lambda k: flow.paths[k], w)
    amp = noise.amplitude(dt) if noise.sigma > 0 else 0.0
    X = _integrate_followers(X0, times, kernels, flow.paths, w, Y, xi if noise.sigma > 0 else None, amp)
    return X, Y


def solve_mkv(
    init_law: InitialLaw | np.ndarray,
    Y0,
    T: float,
    dt: float,
    kernels: KernelSet,
    controls: Sequence[ControlLaw] | None,
    M: int,
    seed: int,
    noise: NoiseLevel,
    cfg: PicardConfig = PicardConfig(),
    initial_flow: LawFlow | None = None,
) -> MKVSolution:
    """Fixed point of the law-to-law solution map, approximated by ``M`` paths.

    Ensemble member ``n`` uses initial datum and Brownian tape keyed by
    ``(seed, n)``; ``init_law`` may also be an explicit ``(M, d)`` array.
    The starting flow is frozen at the initial ensemble unless
    ``initial_flow`` is given.
    """
    if M < 2:
        raise ValueError("ensemble size M must be >= 2")
    if isinstance(init_law, InitialLaw):
        X0 = init_law.sample(seed, np.arange(M))
    else:
        X0 = np.asarray(init_law, dtype=np.float64)
        if X0.shape[0] != M:
            raise ValueError(f"initial ensemble has {X0.shape[0]} members, expected M={M}")
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=np.float64))
    d = X0.shape[1]
    if kernels.dim != d or Y0.shape[1] != d:
        raise ValueError("kernels, followers and herders must share one dimension")
    controls = _check_controls(controls, Y0.shape[0], d)
    K = n_steps_for(T, dt)
    times = np.linspace(0.0, T, K + 1) if K else np.zeros(1)
    xi = increments_block(seed, M, K, d) if (noise.sigma > 0 and K) else None
    gamma = cfg.weight(kernels.L)
    decay = np.exp(-gamma * times)

    if initial_flow is not None:
        if initial_flow.paths.shape != (K + 1, M, d) or not np.allclose(initial_flow.times, times):
            raise GridMismatchError("initial flow does not match the time grid / ensemble size")
        flow = initial_flow
    else:
        flow = LawFlow(times, np.broadcast_to(X0, (K + 1, M, d)))

    history: list[float] = []
    for r in range(cfg.max_iter):
        X, Y = picard_sweep(flow, X0, Y0, kernels, controls, xi, noise)
        dist = float(np.max(decay * _nodewise_w1(X, flow.paths)))
        history.append(dist)
        log.debug("picard sweep %d: weighted distance %.3e", r + 1, dist)
        flow = LawFlow(times, X)
        if dist < cfg.tol:
            break
    else:
        h = history
        ratio = h[-1] / h[-2] if len(h) > 1 and h[-2] > 0 else math.nan
        raise PicardNonConvergenceError(len(h), h[-1], ratio)

    # herders consistent with the returned flow
    w = np.full(M, 1.0 / M)
    Y = _integrate_herders(Y0, times, kernels, controls, lambda k: flow.paths[k], w)
    return MKVSolution(flow, Y, history, gamma, int(seed))


def law_distance(flow_a: LawFlow, flow_b: LawFlow) -> float:
    """``max_k W1(flow_a(t_k), flow_b(t_k))``."""
    if flow_a.times.shape != flow_b.times.shape or not np.allclose(flow_a.times, flow_b.times, atol=1e-12):
        raise GridMismatchError("flows live on different time grids")
    if flow_a.M == flow_b.M:
        return float(np.max(_nodewise_w1(flow_a.paths, flow_b.paths)))
    return max(
        wasserstein1(flow_a.snapshot(k), flow_b.snapshot(k)) for k in range(len(flow_a))
    )


@dataclass
class ChaosResult:
    N: int
    error: float
    stderr: float
    block_errors: np.ndarray
    follower_part: float
    herder_part: float


def coupled_chaos_run(
    N: int,
    dt: float,
    T: float,
    kernels: KernelSet,
    controls: Sequence[ControlLaw] | None,
    seed: int,
    noise: NoiseLevel,
    M_ref: int,
    init_law: InitialLaw,
    Y0,
    reference: MKVSolution | None = None,
    cfg: PicardConfig = PicardConfig(),
    max_blocks: int = 64,
) -> ChaosResult:
    """Monte Carlo estimate of
    ``E[max_n max_t |X^n - Xbar^n| + max_i max_t |Y^i - Ybar^i|]``.

    The reference flow solves the limit problem with ``M_ref`` paths keyed by
    ``(seed, n)``. The ensemble is cut into disjoint blocks of ``N`` particle
    indices (block 0 is the prefix ``0..N-1``); each block drives one
    ``N``-particle system, coupled to ``N`` limit copies that share its
    initial data and Brownian tapes and move in the frozen reference flow.
    The estimate averages the coupled error over the blocks.
    """
    if M_ref < N:
        raise ValueError("reference ensemble must be at least as large as N")
    if reference is None:
        reference = solve_mkv(init_law, Y0, T, dt, kernels, controls, M_ref, seed, noise, cfg)
    flow = reference.flow
    if flow.M != M_ref or flow.times.shape[0] != n_steps_for(T, dt) + 1:
        raise GridMismatchError("reference flow does not match (M_ref, T, dt)")
    K = len(flow) - 1
    d = flow.dim
    B = max(1, min(M_ref // N, max_blocks))
    ids = np.arange(B * N)
    X0 = init_law.sample(seed, ids).reshape(B, N, d)
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=np.float64))
    if noise.sigma > 0 and K:
        xi = increments_block(seed, M_ref, K, d)[: B * N].reshape(B, N, K, d)
    else:
        xi = np.zeros((B, N, K, d))

    # discrete systems, one per block
    _, Xd, Yd = simulate_batch(
        X0, Y0, T, dt, kernels, controls, [seed] * B, noise, increments=xi, dt_max=max(dt, T / 100.0)
    )

    # limit copies in the frozen reference flow
    w = np.full(flow.M, 1.0 / flow.M)
    amp = noise.amplitude(dt) if noise.sigma > 0 else 0.0
    Xl = np.empty_like(Xd)
    Xl[0] = X0
    Ybar = reference.Y
    for k in range(K):
        drift = follower_drift(
            kernels, Xl[k], flow.paths[k][None], w, np.broadcast_to(Ybar[k], (B,) + Ybar[k].shape)
        )
        Xl[k + 1] = Xl[k] + dt * drift + amp * xi[:, :, k, :]

    fol = np.max(np.linalg.norm(Xd - Xl, axis=-1), axis=(0, 2))  # per block
    her = np.max(np.linalg.norm(Yd - Ybar[:, None], axis=-1), axis=(0, 2))
    errs = fol + her
    stderr = float(errs.std(ddof=1) / math.sqrt(B)) if B > 1 else math.nan
    return ChaosResult(N, float(errs.mean()), stderr, errs, float(fol.mean()), float(her.mean()))
