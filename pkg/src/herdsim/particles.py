"""Euler-Maruyama integration of the finite herd / herder system.

Followers ``X^n`` (n < N) and herders ``Y^i`` (i < m) move by

    dX^n = [ (1/N) sum_l H1(X^l - X^n) + (1/m) sum_j K1(Y^j - X^n) ] dt + sqrt(2 sigma) dW^n
    dY^i = [ (1/N) sum_l K2(Y^i - X^l) + (1/m) sum_j H2(Y^j - Y^i) + h^i(t) g^i(mu_N) ] dt

with every drift evaluated on the start-of-step snapshot. Integration is
batched over independent replicas: arrays carry a leading replica axis.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controls import ControlLaw
from .kernels import KernelSet, KernelSpec, interaction_sum
from .rng import BrownianTape, increments_block

MAGIC = b"HERD1"
_HEADER = struct.Struct("<5sIIII")


class IntegrationBlowupError(FloatingPointError):
    def __init__(self, step: int, where: str = "state"):
        super().__init__(f"non-finite {where} after step {step}")
        self.step = step


@dataclass(frozen=True)
class NoiseLevel:
    sigma: float

    def __post_init__(self):
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be finite and >= 0")

    def amplitude(self, dt: float) -> float:
        return math.sqrt(2.0 * self.sigma * dt)


@dataclass(frozen=True)
class InitialLaw:
    """Law of the initial follower positions (independent coordinates)."""

    family: str
    mean: tuple[float, ...] = (0.0,)
    std: float = 1.0
    low: tuple[float, ...] = (-1.0,)
    high: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.family not in ("gaussian", "uniform"):
            raise ValueError(f"unknown initial law {self.family!r}")
        if self.family == "gaussian" and not self.std > 0:
            raise ValueError("gaussian std must be > 0")
        if self.family == "uniform" and any(h <= l for l, h in zip(self.low, self.high)):
            raise ValueError("uniform bounds need low < high")

    @property
    def dim(self) -> int:
        return len(self.mean) if self.family == "gaussian" else len(self.low)

    def sample(self, seed: int, particles) -> np.ndarray:
        """Initial positions keyed per particle, shape ``(n, d)``."""
        tape = BrownianTape(seed, self.dim)
        if self.family == "gaussian":
            return np.asarray(self.mean) + self.std * tape.initial_normals(particles)
        lo, hi = np.asarray(self.low), np.asarray(self.high)
        return lo + (hi - lo) * tape.initial_uniforms(particles)

    def variance(self) -> float:
        if self.family == "gaussian":
            return self.std**2
        return float(np.mean((np.asarray(self.high) - np.asarray(self.low)) ** 2) / 12.0)

    def cell_masses(self, edges: np.ndarray) -> np.ndarray:
        """Probability of each cell ``[edges[i], edges[i+1])`` (d = 1 only)."""
        if self.dim != 1:
            raise ValueError("cell masses are only defined in d = 1")
        if self.family == "gaussian":
            from scipy.special import ndtr

            return np.diff(ndtr((edges - self.mean[0]) / self.std))
        lo, hi = self.low[0], self.high[0]
        clipped = np.clip(edges, lo, hi)
        return np.diff(clipped) / (hi - lo)

    def to_dict(self) -> dict:
        if self.family == "gaussian":
            return {"family": "gaussian", "mean": list(self.mean), "std": self.std}
        return {"family": "uniform", "low": list(self.low), "high": list(self.high)}


@dataclass
class SystemState:
    t: float
    X: np.ndarray  # (N, d)
    Y: np.ndarray  # (m, d)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        if self.X.shape[0] < 1 or self.Y.shape[0] < 1:
            raise ValueError("need N >= 1 followers and m >= 1 herders")
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError("followers and herders differ in dimension")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("state must be finite")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


def _pair_batch(kernel: KernelSpec, sources, weights, targets) -> np.ndarray:
    """Batched ``sum_i w_i K(sources[r, i] - targets[r, j])``."""
    if kernel.is_zero:
        return np.zeros(targets.shape)
    if kernel.family == "linear":
        centre = np.sum(weights[:, None] * sources, axis=-2, keepdims=True)
        return kernel.a * (centre - weights.sum() * targets)
    if sources.shape[0] == 1 and targets.shape[0] > 1:
        # one shared measure for every replica: a single flat call
        flat = interaction_sum(kernel, sources[0], weights, targets.reshape(-1, targets.shape[-1]))
        return flat.reshape(targets.shape)
    return np.stack([interaction_sum(kernel, s, weights, t) for s, t in zip(sources, targets)])


def follower_drift(kernels: KernelSet, X, atoms, atom_weights, Y) -> np.ndarray:
    """``(H1 * mu)(X) + (1/m) sum_j K1(Y^j - X)`` with ``mu`` given by ``atoms``.

    Shapes: ``X (R, n, d)``, ``atoms (R, M, d)``, ``Y (R, m, d)``.
    """
    m = Y.shape[-2]
    out = _pair_batch(kernels.H1, atoms, atom_weights, X)
    out += _pair_batch(kernels.K1, Y, np.full(m, 1.0 / m), X)
    return out


def herder_drift(kernels: KernelSet, controls: Sequence[ControlLaw] | None, Y, atoms, atom_weights, t0, t1):
    """``-(K2 * mu)(Y^i) + (1/m) sum_j H2(Y^j - Y^i) + h^i g^i(mu)``.

    ``K2(Y - x) = -K2(x - Y)`` because every kernel family is odd.
    """
    m = Y.shape[-2]
    out = -_pair_batch(kernels.K2, atoms, atom_weights, Y)
    out += _pair_batch(kernels.H2, Y, np.full(m, 1.0 / m), Y)
    if controls:
        for i, law in enumerate(controls):
            if not law.is_zero:
                out[:, i, :] += law.u(t0, t1, atoms, atom_weights)
    return out


def _check_controls(controls, m: int, d: int) -> list[ControlLaw]:
    if not controls:
        return []
    controls = list(controls)
    if len(controls) != m:
        raise ValueError(f"expected {m} control laws, got {len(controls)}")
    for law in controls:
        if law.dim != d:
            raise ValueError(f"control dimension {law.dim} does not match state dimension {d}")
    return controls


def euler_step(X, Y, t, dt, kernels, controls, xi, noise: NoiseLevel):
    """One explicit step on batched arrays; returns new ``(X, Y)``."""
    N = X.shape[-2]
    w = np.full(N, 1.0 / N)
    dX = follower_drift(kernels, X, X, w, Y)
    dY = herder_drift(kernels, controls, Y, X, w, t, t + dt)
    X_new = X + dt * dX
    if noise.sigma > 0:
        X_new += noise.amplitude(dt) * xi
    return X_new, Y + dt * dY


def step(
    state: SystemState,
    dt: float,
    kernels: KernelSet,
    controls: Sequence[ControlLaw] | None,
    tape: BrownianTape | np.ndarray,
    noise: NoiseLevel,
    k: int | None = None,
    dt_max: float | None = None,
) -> SystemState:
    """Advance ``state`` by one Euler-Maruyama step of size ``dt``.

    ``tape`` is either a :class:`BrownianTape` (increment ``k`` of each
    particle is replayed, ``k`` defaults to ``round(t / dt)``) or an explicit
    ``(N, d)`` array of standard normal draws.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if dt_max is not None and dt > dt_max:
        raise ValueError(f"dt={dt} exceeds dt_max={dt_max}")
    controls = _check_controls(controls, state.m, state.dim)
    if k is None:
        k = int(round(state.t / dt))
    if isinstance(tape, BrownianTape):
        xi = tape.increments(np.arange(state.N), k + 1)[:, k, :] if noise.sigma > 0 else 0.0
    else:
        xi = np.asarray(tape, dtype=np.float64)
    X, Y = euler_step(state.X[None], state.Y[None], state.t, dt, kernels, controls, xi, noise)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise IntegrationBlowupError(k)
    return SystemState(state.t + dt, X[0], Y[0])


def n_steps_for(T: float, dt: float) -> int:
    if T < 0:
        raise ValueError("T must be >= 0")
    if T == 0:
        return 0
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


@dataclass
class Trajectory:
    times: np.ndarray  # (K+1,)
    X: np.ndarray  # (K+1, N, d)
    Y: np.ndarray  # (K+1, m, d)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.times.shape[0]

    def __getitem__(self, k: int) -> SystemState:
        return SystemState(float(self.times[k]), self.X[k], self.Y[k])

    @property
    def final(self) -> SystemState:
        return self[len(self) - 1]

    def to_csv(self, path=None) -> str | None:
        """Rows ``t, kind, id, x1..xd`` with kind in {follower, herder}."""
        d = self.X.shape[-1]
        buf = io.StringIO()
        buf.write(",".join(["t", "kind", "id"] + [f"x{k + 1}" for k in range(d)]) + "\n")
        for kind, arr in (("follower", self.X), ("herder", self.Y)):
            for pid in range(arr.shape[1]):
                for k, t in enumerate(self.times):
                    coords = ",".join(repr(float(v)) for v in arr[k, pid])
                    buf.write(f"{float(t)!r},{kind},{pid},{coords}\n")
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None

    def to_binary(self, path) -> None:
        """Write to a path or binary file object: ``HERD1`` header (magic, n_times, N, m, d as uint32), then per node
        ``t, X, Y`` as little-endian float64."""
        K1, N, d = self.X.shape
        m = self.Y.shape[1]
        block = np.concatenate([self.times[:, None], self.X.reshape(K1, -1), self.Y.reshape(K1, -1)], axis=1)
        payload = _HEADER.pack(MAGIC, K1, N, m, d) + block.astype("<f8").tobytes()
        if hasattr(path, "write"):
            path.write(payload)
            return
        with open(path, "wb") as fh:
            fh.write(payload)

    @classmethod
    def from_binary(cls, path) -> Trajectory:
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, K1, N, m, d = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a HERD1 trajectory file")
        data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        width = 1 + N * d + m * d
        if data.size != K1 * width:
            raise ValueError(f"{path}: truncated trajectory ({data.size} of {K1 * width} values)")
        data = data.reshape(K1, width).astype(np.float64)
        return cls(data[:, 0].copy(), data[:, 1 : 1 + N * d].reshape(K1, N, d), data[:, 1 + N * d :].reshape(K1, m, d))

    @classmethod
    def from_csv(cls, path) -> Trajectory:
        import csv

        rows: dict[tuple[str, int], list] = {}
        with open(path, encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                rows.setdefault((row[1], int(row[2])), []).append([float(v) for v in [row[0]] + row[3:]])
        fol = sorted(k for k in rows if k[0] == "follower")
        her = sorted(k for k in rows if k[0] == "herder")
        times = np.array([r[0] for r in rows[fol[0]]])
        X = np.stack([np.array(rows[k])[:, 1:] for k in fol], axis=1)
        Y = np.stack([np.array(rows[k])[:, 1:] for k in her], axis=1)
        return cls(times, X, Y)


Observer = Callable[[int, float, np.ndarray, np.ndarray], None]


def simulate_batch(
    X0: np.ndarray,
    Y0: np.ndarray,
    T: float,
    dt: float,
    kernels: KernelSet,
    controls: Sequence[ControlLaw] | None,
    seeds: Sequence[int],
    noise: NoiseLevel,
    particle_ids: np.ndarray | None = None,
    increments: np.ndarray | None = None,
    record: bool = True,
    observer: Observer | None = None,
    dt_max: float | None = None,
):
    """Integrate ``R = len(seeds)`` independent replicas side by side.

    ``X0`` has shape ``(R, N, d)``, ``Y0`` shape ``(m, d)`` or ``(R, m, d)``.
    Replica ``r`` draws its noise from ``BrownianTape(seeds[r])`` for the
    particle indices ``particle_ids`` (default ``0..N-1``) unless explicit
    ``increments`` of shape ``(R, N, K, d)`` are supplied. Returns
    ``(times, X, Y)`` with node axis first when ``record`` is set, otherwise
    the final ``(X, Y)``. ``observer(k, t, X, Y)`` sees every node.
    """
    X = np.array(X0, dtype=np.float64)
    R, N, d = X.shape
    Y = np.broadcast_to(np.asarray(Y0, dtype=np.float64), (R,) + np.shape(Y0)[-2:]).copy()
    if len(seeds) != R:
        raise ValueError("one seed per replica is required")
    if kernels.dim != d:
        raise ValueError(f"kernel dimension {kernels.dim} does not match state dimension {d}")
    controls = _check_controls(controls, Y.shape[1], d)
    K = n_steps_for(T, dt)
    if dt_max is None and T > 0:
        dt_max = T / 100.0
    if K and dt > dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds dt_max={dt_max}")
    if increments is not None:
        xi = np.asarray(increments)
        if xi.shape != (R, N, K, d):
            raise ValueError(f"increments must have shape {(R, N, K, d)}, got {xi.shape}")
    elif noise.sigma > 0 and K:
        if particle_ids is None:
            xi = np.stack([increments_block(int(s), N, K, d) for s in seeds])
        else:
            xi = np.stack([BrownianTape(int(s), d).increments(particle_ids, K) for s in seeds])
    else:
        xi = None
    times = np.linspace(0.0, T, K + 1) if K else np.zeros(1)
    if record:
        Xs = np.empty((K + 1, R, N, d))
        Ys = np.empty((K + 1, R) + Y.shape[1:])
        Xs[0], Ys[0] = X, Y
    if observer is not None:
        observer(0, 0.0, X, Y)
    for k in range(K):
        t = times[k]
        X, Y = euler_step(X, Y, t, times[k + 1] - t, kernels, controls,
                          None if xi is None else xi[:, :, k, :], noise)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise IntegrationBlowupError(k)
        if record:
            Xs[k + 1], Ys[k + 1] = X, Y
        if observer is not None:
            observer(k + 1, float(times[k + 1]), X, Y)
    if record:
        return times, Xs, Ys
    return X, Y


def simulate(
    init: SystemState,
    T: float,
    dt: float,
    kernels: KernelSet,
    controls: Sequence[ControlLaw] | None,
    seed: int,
    noise: NoiseLevel,
    dt_max: float | None = None,
) -> Trajectory:
    """Trajectory on the uniform grid ``0, dt, ..., T`` (``T/dt + 1`` nodes)."""
    times, X, Y = simulate_batch(
        init.X[None], init.Y, T, dt, kernels, controls, [seed], noise, dt_max=dt_max
    )
    return Trajectory(times + init.t, X[:, 0], Y[:, 0], meta={"seed": int(seed), "dt": dt})


def initial_state(law: InitialLaw, Y0, N: int, seed: int) -> SystemState:
    return SystemState(0.0, law.sample(seed, np.arange(N)), np.asarray(Y0, dtype=np.float64))
