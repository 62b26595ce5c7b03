"""Control cost functionals for the finite herd and for its mean-field limit.

Both integrate ``L(t, Y(t), mu_t) + Psi(h(t), g(mu_t))`` over ``[0, T]`` by
the trapezoid rule on the simulation grid. ``h`` enters through its exact
average over each step, so piecewise-constant controls aligned with the
grid are integrated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .controls import ControlLaw
from .mckean_vlasov import MKVSolution, PicardConfig, solve_mkv
from .particles import n_steps_for, simulate_batch
from .presets import Dynamics
from .rng import replica_seed


@dataclass(frozen=True)
class Lagrangian:
    """``tracking``: ``alpha int min(|x - x*|^2, R^2) dmu + beta sum_i min(|Y^i - y*_i|^2, R^2)``;
    ``constant``: ``value``.

    The tracking form is bounded and ``2 alpha R``-Lipschitz in ``mu`` for W1.
    """

    tag: str = "tracking"
    x_target: tuple[float, ...] = (0.0,)
    y_target: tuple[tuple[float, ...], ...] = ((0.0,),)
    alpha: float = 1.0
    beta: float = 0.0
    R: float = 3.0
    value: float = 0.0

    def __post_init__(self):
        if self.tag not in ("tracking", "constant"):
            raise ValueError(f"unknown lagrangian {self.tag!r}")
        if self.R <= 0:
            raise ValueError("clamping radius R must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("tracking weights must be >= 0")

    @property
    def is_zero(self) -> bool:
        if self.tag == "constant":
            return self.value == 0.0
        return self.alpha == 0.0 and self.beta == 0.0

    def evaluate(self, t: float, Y: np.ndarray, points: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Batched value: ``Y (R, m, d)``, ``points (R, n, d)`` -> ``(R,)``."""
        Y = np.asarray(Y)
        if self.tag == "constant":
            return np.full(Y.shape[0], float(self.value))
        R2 = self.R**2
        out = np.zeros(Y.shape[0])
        if self.alpha:
            sq = np.sum((points - np.asarray(self.x_target)) ** 2, axis=-1)
            clamped = np.minimum(sq, R2)
            if weights is None:
                out += self.alpha * clamped.mean(axis=-1)
            else:
                out += self.alpha * (clamped @ weights) / weights.sum()
        if self.beta:
            yt = np.asarray(self.y_target, dtype=np.float64)
            sq = np.sum((Y - yt) ** 2, axis=-1)
            out += self.beta * np.minimum(sq, R2).sum(axis=-1)
        return out

    def lipschitz_in_measure(self) -> float:
        return 2.0 * self.alpha * self.R if self.tag == "tracking" else 0.0


@dataclass(frozen=True)
class ControlCost:
    """``lam sum_i ||h^i||_1 + kappa sum_i |g^i|`` (``norm="l1"``) or with
    ``||h^i||_F^2`` in place of the entrywise l1 norm (``norm="frobenius"``)."""

    lam: float = 0.0
    kappa: float = 0.0
    norm: str = "l1"

    def __post_init__(self):
        if self.lam < 0 or self.kappa < 0:
            raise ValueError("lam and kappa must be >= 0")
        if self.norm not in ("l1", "frobenius"):
            raise ValueError(f"unknown control norm {self.norm!r}")

    def h_part(self, h: np.ndarray) -> float:
        """``h`` of shape ``(m, d, l)``."""
        if not self.lam:
            return 0.0
        if self.norm == "l1":
            return self.lam * float(np.sum(np.abs(h)))
        return self.lam * float(np.sum(h * h))

    def g_part(self, gvals: np.ndarray) -> np.ndarray:
        """``gvals`` of shape ``(..., m, l)`` -> ``(...)``."""
        if not self.kappa:
            return np.zeros(gvals.shape[:-2])
        return self.kappa * np.linalg.norm(gvals, axis=-1).sum(axis=-1)

    def __call__(self, h: np.ndarray, gvals: np.ndarray):
        return self.h_part(h) + self.g_part(np.asarray(gvals))


@dataclass(frozen=True)
class CostSpec:
    lagrangian: Lagrangian = Lagrangian()
    psi: ControlCost = ControlCost()


@dataclass
class CostEstimate:
    value: float
    stderr: float
    replicas: np.ndarray

    def __float__(self) -> float:
        return self.value


class _Accumulator:
    """Collects node values of ``L`` and ``g`` during a run."""

    def __init__(self, cost: CostSpec, controls: Sequence[ControlLaw], K: int, R: int):
        self.cost = cost
        self.controls = list(controls)
        self.L = np.zeros((K + 1, R))
        ell = max((c.ell for c in self.controls), default=1)
        self.G = np.zeros((K + 1, R, len(self.controls), ell))
        self.need_g = bool(self.controls) and cost.psi.kappa > 0

    def __call__(self, k, t, X, Y):
        if not self.cost.lagrangian.is_zero:
            self.L[k] = self.cost.lagrangian.evaluate(t, Y, X)
        if self.need_g:
            for i, law in enumerate(self.controls):
                self.G[k, :, i, : law.ell] = law.g.evaluate(X)

    def total(self, times: np.ndarray) -> np.ndarray:
        dts = np.diff(times)
        out = np.sum(0.5 * dts[:, None] * (self.L[:-1] + self.L[1:]), axis=0)
        psi = self.cost.psi
        if self.controls and (psi.lam or psi.kappa):
            for k in range(dts.size):
                hbar = np.stack([law.h_mean(times[k], times[k + 1]) for law in self.controls])
                out += dts[k] * psi.h_part(hbar)
                if self.need_g:
                    out += 0.5 * dts[k] * (psi.g_part(self.G[k]) + psi.g_part(self.G[k + 1]))
        return out


def eval_FN(
    controls: Sequence[ControlLaw],
    cost: CostSpec,
    dyn: Dynamics,
    N: int,
    dt: float,
    replicas: int,
    seed: int = 0,
) -> CostEstimate:
    """Monte Carlo estimate of the finite-herd cost over ``replicas`` seeded runs.

    Replica ``r`` uses seed ``replica_seed(seed, r)`` for both its initial
    draws and its Brownian tapes, so repeated calls with the same ``seed``
    see identical noise (common random numbers).
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    seeds = [replica_seed(seed, r) for r in range(replicas)]
    X0 = np.stack([dyn.law.sample(s, np.arange(N)) for s in seeds])
    K = n_steps_for(dyn.T, dt)
    acc = _Accumulator(cost, controls, K, replicas)
    times = np.linspace(0.0, dyn.T, K + 1) if K else np.zeros(1)
    simulate_batch(
        X0, dyn.Y0, dyn.T, dt, dyn.kernels, controls, seeds, dyn.noise,
        record=False, observer=acc, dt_max=max(dt, dyn.T / 100.0),
    )
    vals = acc.total(times)
    se = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else math.nan
    return CostEstimate(float(vals.mean()), se, vals)


def cost_along(controls: Sequence[ControlLaw], cost: CostSpec, sol: MKVSolution) -> float:
    """Deterministic cost along a solved limit flow and its herders."""
    times = sol.times
    K = times.size - 1
    acc = _Accumulator(cost, controls, K, 1)
    for k in range(K + 1):
        acc(k, times[k], sol.flow.paths[k][None], sol.Y[k][None])
    return float(acc.total(times)[0])


def eval_F(
    controls: Sequence[ControlLaw],
    cost: CostSpec,
    dyn: Dynamics,
    M: int,
    dt: float,
    seed: int = 0,
    cfg: PicardConfig = PicardConfig(),
) -> tuple[float, MKVSolution]:
    """Limit cost along the McKean-Vlasov solution with an ``M``-path ensemble."""
    sol = solve_mkv(dyn.law, dyn.Y0, dyn.T, dt, dyn.kernels, controls, M, seed, dyn.noise, cfg)
    return cost_along(controls, cost, sol), sol
