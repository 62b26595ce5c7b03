"""Finitely supported probability measures and their Wasserstein geometry."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, sparse

from .kernels import KernelSpec, interaction_sum

LP_ATOM_CAP = 4096


class DimensionMismatchError(ValueError):
    pass


class SupportTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud; weights are normalised to sum to one."""

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("points must be a non-empty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != pts.shape[0]:
                raise ValueError("weights and points differ in length")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            total = w.sum()
            if total <= 0:
                raise ValueError("weights must have positive total mass")
            w = w / total
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def pushforward(self, fn) -> EmpiricalMeasure:
        return EmpiricalMeasure(fn(self.points), self.weights)

    def to_csv(self, path_or_buf=None) -> str | None:
        """Write one row per atom: weight, x1..xd."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["weight"] + [f"x{k + 1}" for k in range(self.dim)])
        for wi, p in zip(self.weights, self.points):
            w.writerow([repr(float(wi))] + [repr(float(v)) for v in p])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path) -> EmpiricalMeasure:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 1:], data[:, 0])


def _check_dims(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.dim != nu.dim:
        raise DimensionMismatchError(f"measures live in R^{mu.dim} and R^{nu.dim}")


def _check_p(p: float) -> float:
    p = float(p)
    if not p >= 1.0:
        raise ValueError("moment order p must be >= 1")
    return p


def _quantile_cost_1d(x, wx, y, wy, p):
    """Exact transport cost in d = 1 by merging the two quantile functions."""
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, wx, y, wy = x[ix], wx[ix], y[iy], wy[iy]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    levels = np.union1d(cx, cy)
    du = np.diff(np.concatenate(([0.0], levels)))
    # quantile index at the middle of each level band
    mid = levels - 0.5 * du
    qx = x[np.minimum(np.searchsorted(cx, mid, side="left"), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mid, side="left"), y.size - 1)]
    return float(np.sum(du * np.abs(qx - qy) ** p))


def _assignment_cost(x, y, p):
    cost = _cost_matrix(x, y, p)
    rows, cols = optimize.linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def _cost_matrix(x, y, p):
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)) ** p


def transport_lp(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 1.0) -> float:
    """Optimal cost ``min sum gamma_ij |x_i - y_j|^p`` by the transport LP.

    Works in any dimension; used directly for general weights in d >= 2 and
    as an independent cross-check of the one-dimensional formula.
    """
    _check_dims(mu, nu)
    n, m = mu.size, nu.size
    cost = _cost_matrix(mu.points, nu.points, p).ravel()
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    a_eq = sparse.vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([mu.weights, nu.weights])
    # drop one redundant marginal constraint
    res = optimize.linprog(
        cost,
        A_eq=a_eq[:-1],
        b_eq=b_eq[:-1],
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _transport_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float, cap: int) -> float:
    _check_dims(mu, nu)
    if mu.dim == 1:
        x, y = mu.points[:, 0], nu.points[:, 0]
        if mu.size == nu.size and mu.is_uniform and nu.is_uniform:
            return float(np.mean(np.abs(np.sort(x) - np.sort(y)) ** p))
        return _quantile_cost_1d(x, mu.weights, y, nu.weights, p)
    if max(mu.size, nu.size) > cap:
        raise SupportTooLargeError(
            f"support of {max(mu.size, nu.size)} atoms exceeds the exact-transport cap {cap} in d={mu.dim}; "
            "subsample the measures first"
        )
    if mu.size == nu.size and mu.is_uniform and nu.is_uniform:
        return _assignment_cost(mu.points, nu.points, p)
    return transport_lp(mu, nu, p)


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cap: int = LP_ATOM_CAP) -> float:
    return _transport_cost(mu, nu, 1.0, cap)


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float, cap: int = LP_ATOM_CAP) -> float:
    p = _check_p(p)
    return _transport_cost(mu, nu, p, cap) ** (1.0 / p)


def wasserstein1_sorted(x: np.ndarray, y: np.ndarray) -> float:
    """W1 between two equal-size uniform samples on the line."""
    return float(np.mean(np.abs(np.sort(x) - np.sort(y))))


def moment(mu: EmpiricalMeasure, p: float) -> float:
    """``(sum_i w_i |x_i|^p)^(1/p)``, base point at the origin."""
    p = _check_p(p)
    r = np.linalg.norm(mu.points, axis=1)
    return float(np.sum(mu.weights * r**p) ** (1.0 / p))


def convolve(kernel: KernelSpec, mu: EmpiricalMeasure, x) -> np.ndarray:
    """``(K * mu)(x) = sum_i w_i K(x_i - x)`` for a point or a batch of points."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[1] != mu.dim or kernel.dim != mu.dim:
        raise DimensionMismatchError(
            f"kernel dim {kernel.dim}, measure dim {mu.dim}, point dim {pts.shape[1]}"
        )
    out = interaction_sum(kernel, mu.points, mu.weights, pts)
    return out[0] if single else out


def sampling_rate(n: int, p: float, d: int, moment_p: float = 1.0, constant: float = 1.0) -> float:
    """Rate bound for E W1(mu_N, mu) of an i.i.d. sample of size ``n``.

    ``constant * M_p(mu) * r(n)`` with the dimension-dependent rate
    ``n^{-1/2} (+ log)`` or ``n^{-1/d}`` plus ``n^{-(p-1)/p}``. The universal
    constant is unknown and defaults to 1.
    """
    if n < 1:
        raise ValueError("sample size must be >= 1")
    tail = n ** (-(p - 1.0) / p)
    if d == 1:
        head = n**-0.5
    elif d == 2:
        head = n**-0.5 * math.log(1.0 + n)
    else:
        head = n ** (-1.0 / d)
    return constant * moment_p * (head + tail)
