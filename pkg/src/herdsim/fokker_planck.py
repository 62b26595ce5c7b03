"""One-dimensional finite-volume solver for the herd density coupled to the
herder ODEs.

The density obeys ``rho_t = sigma rho_xx - (v rho)_x`` with

    v(t, x) = (H1 * mu_t)(x) + (1/m) sum_j K1(Y^j(t) - x)

discretised by finite volumes with explicit Euler time stepping on a
no-flux box. Two monotone face fluxes are available:

* ``"sg"`` (default) exponentially fitted upwind (Scharfetter-Gummel),
  ``F = (sigma/dx) [B(-Pe) rho_i - B(Pe) rho_{i+1}]`` with ``Pe = v dx / sigma``
  and ``B(z) = z / (e^z - 1)``; exact for frozen-velocity steady states
  on each face, second-order accurate for them overall.
* ``"upwind"`` first-order upwind advection plus centred diffusion.

Both reduce to centred diffusion when ``v = 0`` and keep the density
nonnegative under the same step restriction. Herders advance by Heun's
method against the grid measure (atoms at cell centres).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .controls import ControlLaw
from .kernels import KernelSet, interaction_sum
from .measures import EmpiricalMeasure, wasserstein1
from .particles import InitialLaw, NoiseLevel, _check_controls, herder_drift


class DomainTooSmallError(RuntimeError):
    pass


class SchemeViolationError(RuntimeError):
    pass


@dataclass
class GridDensity:
    x_min: float
    x_max: float
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if not self.x_max > self.x_min:
            raise ValueError("need x_max > x_min")
        if self.rho.ndim != 1 or self.rho.size < 2:
            raise ValueError("rho must be a 1D array with at least two cells")

    @property
    def n_cells(self) -> int:
        return self.rho.size

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    def masses(self) -> np.ndarray:
        return self.rho * self.dx

    def mass(self) -> float:
        return float(self.rho.sum() * self.dx)

    def mean(self) -> float:
        return float(np.sum(self.masses() * self.centers) / self.mass())

    def variance(self) -> float:
        mu = self.mean()
        return float(np.sum(self.masses() * (self.centers - mu) ** 2) / self.mass())

    def to_measure(self) -> EmpiricalMeasure:
        """Atom at every cell centre with weight ``rho_i dx``."""
        return EmpiricalMeasure(self.centers[:, None], np.clip(self.masses(), 0.0, None))

    def shifted(self, c: float) -> GridDensity:
        return GridDensity(self.x_min + c, self.x_max + c, self.rho.copy())

    @classmethod
    def from_law(cls, law: InitialLaw, x_min: float, x_max: float, n_cells: int) -> GridDensity:
        """Exact cell averages of ``law``, renormalised to unit mass on the box."""
        edges = np.linspace(x_min, x_max, n_cells + 1)
        mass = law.cell_masses(edges)
        dx = (x_max - x_min) / n_cells
        return cls(x_min, x_max, mass / mass.sum() / dx)


@dataclass(frozen=True)
class EntropyReport:
    value: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


def entropy(rho: GridDensity) -> EntropyReport:
    """``sum rho_i log(rho_i) dx`` over cells with positive density."""
    r = rho.rho[rho.rho > 0]
    return EntropyReport(float(np.sum(r * np.log(r)) * rho.dx))


def second_moment(rho: GridDensity) -> float:
    return float(np.sum(rho.masses() * rho.centers**2))


@dataclass
class FPSolution:
    times: np.ndarray  # (S,)
    rho: np.ndarray  # (S, n_cells)
    Y: np.ndarray  # (S, m, 1)
    x_min: float
    x_max: float
    n_steps: int
    max_speed: float

    def density(self, k: int) -> GridDensity:
        return GridDensity(self.x_min, self.x_max, self.rho[k])

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.rho.shape[1]

    def density_at(self, t: float) -> GridDensity:
        """Linear interpolation in time between stored snapshots."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"t={t} outside the stored window [{times[0]}, {times[-1]}]")
        j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        span = times[j + 1] - times[j]
        lam = 0.0 if span == 0 else min(max((t - times[j]) / span, 0.0), 1.0)
        return GridDensity(self.x_min, self.x_max, (1 - lam) * self.rho[j] + lam * self.rho[j + 1])

    def to_csv(self, path=None) -> str | None:
        """Rows ``t, x, rho``."""
        centers = self.density(0).centers
        buf = io.StringIO()
        buf.write("t,x,rho\n")
        for t, row in zip(self.times, self.rho):
            tt = repr(float(t))
            for x, r in zip(centers, row):
                buf.write(f"{tt},{float(x)!r},{float(r)!r}\n")
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


def default_domain(law: InitialLaw, T: float, v_max: float, pad_std: float = 6.0, sigma: float = 0.0) -> tuple[float, float]:
    """Box covering the initial support plus ``pad_std`` standard deviations
    (initial spread plus diffusion up to ``T``) plus ``T * v_max``."""
    if law.family == "gaussian":
        lo = hi = law.mean[0]
    else:
        lo, hi = law.low[0], law.high[0]
    spread = math.sqrt(law.variance() + 2.0 * sigma * T)
    pad = pad_std * spread + T * v_max
    return lo - pad, hi + pad


def bernoulli(z: np.ndarray) -> np.ndarray:
    """``z / (exp(z) - 1)`` with the removable singularity at 0 filled in."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < 1e-6
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 - 0.5 * z + z * z / 12.0, safe / np.expm1(safe))


def face_coefficients(v: np.ndarray, sigma: float, dx: float, flux: str = "sg"):
    """``(a, b)`` such that the face flux is ``a rho_i - b rho_{i+1}``."""
    if flux == "sg":
        pe = v * dx / sigma
        scale = sigma / dx
        return scale * bernoulli(-pe), scale * bernoulli(pe)
    if flux == "upwind":
        diff = sigma / dx
        return np.maximum(v, 0.0) + diff, -np.minimum(v, 0.0) + diff
    raise ValueError(f"unknown flux {flux!r}; expected 'sg' or 'upwind'")


def _face_velocity(kernels: KernelSet, centers, masses, faces, Y) -> np.ndarray:
    v = interaction_sum(kernels.H1, centers[:, None], masses, faces[:, None])[:, 0]
    m = Y.shape[0]
    v += interaction_sum(kernels.K1, Y, np.full(m, 1.0 / m), faces[:, None])[:, 0]
    return v


def solve_fp(
    rho0: GridDensity,
    Y0,
    T: float,
    kernels: KernelSet,
    controls: Sequence[ControlLaw] | None,
    noise: NoiseLevel,
    cfl_safety: float = 0.3,
    snapshot_times: np.ndarray | None = None,
    v_bound: float | None = None,
    escape_tol: float = 1e-6,
    flux: str = "sg",
) -> FPSolution:
    """Integrate density and herders up to ``T``.

    The step is ``cfl_safety * min(dx / max|v|, dx^2 / (2 sigma))``, shortened
    to land exactly on every requested snapshot time (default: 101 uniform
    nodes). Positivity of the explicit scheme needs ``cfl_safety <= 1/3``.
    """
    if kernels.dim != 1:
        raise ValueError("the grid solver is one-dimensional")
    if not noise.sigma > 0:
        raise ValueError("the Fokker-Planck solver needs sigma > 0")
    if flux not in ("sg", "upwind"):
        raise ValueError(f"unknown flux {flux!r}; expected 'sg' or 'upwind'")
    if not 0 < cfl_safety <= 1:
        raise ValueError("cfl_safety must lie in (0, 1]")
    if abs(rho0.mass() - 1.0) > 1e-8:
        raise ValueError(f"initial density has mass {rho0.mass()}, expected 1")
    if np.any(rho0.rho < 0):
        raise ValueError("initial density must be nonnegative")
    Y = np.atleast_2d(np.asarray(Y0, dtype=np.float64)).copy()
    if Y.shape[1] != 1:
        raise ValueError("herder positions must be one-dimensional")
    controls = _check_controls(controls, Y.shape[0], 1)
    if snapshot_times is None:
        snapshot_times = np.linspace(0.0, T, 101)
    snapshot_times = np.asarray(snapshot_times, dtype=np.float64)
    if snapshot_times[0] != 0.0 or np.any(np.diff(snapshot_times) <= 0) or snapshot_times[-1] > T + 1e-12:
        raise ValueError("snapshot times must start at 0, increase strictly and end by T")

    rho = rho0.rho.copy()
    dx = rho0.dx
    centers = rho0.centers
    faces = rho0.edges[1:-1]
    sigma = noise.sigma

    S = snapshot_times.size
    out_rho = np.empty((S, rho.size))
    out_Y = np.empty((S,) + Y.shape)
    out_rho[0], out_Y[0] = rho, Y
    t = 0.0
    n_steps = 0
    max_speed = 0.0
    for s in range(1, S):
        t_target = snapshot_times[s]
        while t < t_target - 1e-14:
            masses = rho * dx
            v = _face_velocity(kernels, centers, masses, faces, Y)
            vmax = float(np.max(np.abs(v))) if v.size else 0.0
            max_speed = max(max_speed, vmax)
            if v_bound is not None and vmax > v_bound:
                raise DomainTooSmallError(f"face velocity {vmax:.3g} exceeds the bound {v_bound:.3g} at t={t:.4g}")
            limits = [dx * dx / (2.0 * sigma)]
            if vmax > 0:
                limits.append(dx / vmax)
            dt = min(cfl_safety * min(limits), t_target - t)
            k1 = herder_drift(kernels, controls, Y[None], centers[None, :, None], masses, t, t + dt)[0]
            a_coef, b_coef = face_coefficients(v, sigma, dx, flux)
            rmin = _backend.fp_step(rho, a_coef, b_coef, dx, dt)
            if rmin < -1e-12:
                raise SchemeViolationError(f"negative density {rmin:.3e} at t={t + dt:.4g}; lower cfl_safety")
            Y_pred = Y + dt * k1
            k2 = herder_drift(kernels, controls, Y_pred[None], centers[None, :, None], rho * dx, t, t + dt)[0]
            Y = Y + 0.5 * dt * (k1 + k2)
            t = t_target if t_target - (t + dt) < 1e-14 else t + dt
            n_steps += 1
            edge_mass = (rho[0] + rho[-1]) * dx
            if edge_mass > escape_tol:
                raise DomainTooSmallError(
                    f"mass {edge_mass:.3e} reached the boundary cells at t={t:.4g}; enlarge [x_min, x_max]"
                )
        out_rho[s], out_Y[s] = rho, Y
    return FPSolution(snapshot_times.copy(), out_rho, out_Y, rho0.x_min, rho0.x_max, n_steps, max_speed)


def equivalence_check(fp: FPSolution, flow) -> float:
    """``max_k W1(fp(t_k), flow(t_k))`` over the ensemble time grid ``t_k``.

    Density snapshots are interpolated linearly in time onto the ensemble
    grid, then compared as cell-centred atomic measures.
    """
    if flow.dim != 1:
        raise ValueError("equivalence check is one-dimensional")
    if flow.times[0] < fp.times[0] - 1e-12 or flow.times[-1] > fp.times[-1] + 1e-12:
        raise ValueError("ensemble grid extends beyond the density snapshots")
    best = 0.0
    for k, t in enumerate(flow.times):
        dens = fp.density_at(float(t))
        best = max(best, wasserstein1(dens.to_measure(), flow.snapshot(k)))
    return best


def herder_gap(fp: FPSolution, times: np.ndarray, Y: np.ndarray) -> float:
    """``max_t max_i |Y_fp - Y|`` with the density-side herders interpolated
    linearly onto ``times``."""
    worst = 0.0
    for i in range(Y.shape[1]):
        yi = np.interp(times, fp.times, fp.Y[:, i, 0])
        worst = max(worst, float(np.max(np.abs(yi - Y[:, i, 0]))))
    return worst
