"""Reference configurations shared by tests, experiments and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlLaw, GFunctional
from .kernels import KernelSet, KernelSpec
from .particles import InitialLaw, NoiseLevel


@dataclass
class Dynamics:
    kernels: KernelSet
    noise: NoiseLevel
    law: InitialLaw
    Y0: np.ndarray
    T: float = 1.0
    controls: list[ControlLaw] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.Y0.shape[0]

    @property
    def dim(self) -> int:
        return self.kernels.dim


def benchmark_kernels() -> KernelSet:
    """Cohesive herd (linear H1), herders repel followers (saturating K1),
    herders drift toward the herd (K2) and mildly repel each other (H2)."""
    return KernelSet(
        H1=KernelSpec("linear", 1.0),
        H2=KernelSpec("saturating", -0.2),
        K1=KernelSpec("saturating", -1.0),
        K2=KernelSpec("saturating", -0.5),
    )


def benchmark_controls(T: float = 1.0, n_intervals: int = 8) -> list[ControlLaw]:
    g = GFunctional("tanh_statistic", (0.0, 1.0), dim=1)
    h0 = np.tile([[0.5, -0.25]], (n_intervals, 1, 1))
    return [ControlLaw(h0, g, T), ControlLaw(-h0, g, T)]


def benchmark(sigma: float = 0.25, T: float = 1.0, controlled: bool = True) -> Dynamics:
    return Dynamics(
        kernels=benchmark_kernels(),
        noise=NoiseLevel(sigma),
        law=InitialLaw("gaussian", mean=(0.0,), std=1.0),
        Y0=np.array([[-2.0], [2.0]]),
        T=T,
        controls=benchmark_controls(T) if controlled else [],
    )
