"""Derivative-free minimization over a finite chart of the control class.

The search runs on a flat parameter vector inside a box. Every candidate is
projected onto the box before evaluation, objectives keep their random
numbers fixed across candidates, and repeated candidates are served from a
cache, so a seeded search is bit-reproducible.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controls import ControlLaw, GFunctional
from .cost import CostSpec, cost_along, eval_FN
from .measures import sampling_rate
from .mckean_vlasov import PicardConfig, law_distance, solve_mkv
from .presets import Dynamics

log = logging.getLogger(__name__)


class BudgetExhausted(Exception):
    pass


# ---------------------------------------------------------------- chart


@dataclass(frozen=True)
class ControlChart:
    """Flat coordinates for a list of control laws sharing one template.

    The first ``m * K_T * d * l`` coordinates are the ``h`` values (box
    ``[-u_max, u_max]``). With ``free_g`` the ``tanh_statistic`` centers follow,
    boxed to ``[-g_bound, g_bound]``.
    """

    template: tuple[ControlLaw, ...]
    free_g: bool = False
    g_bound: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "template", tuple(self.template))
        if not self.template:
            raise ValueError("chart needs at least one control law")
        if self.free_g and any(c.g.tag != "tanh_statistic" for c in self.template):
            raise ValueError("free_g requires tanh_statistic functionals")

    @property
    def n_h(self) -> int:
        return sum(c.h.size for c in self.template)

    @property
    def dim(self) -> int:
        return self.n_h + (sum(c.g.ell for c in self.template) if self.free_g else 0)

    @property
    def lower(self) -> np.ndarray:
        lo = [np.full(c.h.size, -c.u_max) for c in self.template]
        if self.free_g:
            lo += [np.full(c.g.ell, -self.g_bound) for c in self.template]
        return np.concatenate(lo)

    @property
    def upper(self) -> np.ndarray:
        return -self.lower

    def project(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=np.float64), self.lower, self.upper)

    def encode(self, controls: Sequence[ControlLaw] | None = None) -> np.ndarray:
        controls = self.template if controls is None else controls
        parts = [c.h.ravel() for c in controls]
        if self.free_g:
            parts += [np.asarray(c.g.params) for c in controls]
        return np.concatenate(parts).astype(np.float64)

    def decode(self, theta) -> list[ControlLaw]:
        theta = self.project(theta)
        out, pos = [], 0
        hs = []
        for c in self.template:
            hs.append(theta[pos : pos + c.h.size].reshape(c.h.shape))
            pos += c.h.size
        for c, h in zip(self.template, hs):
            g = c.g
            if self.free_g:
                g = GFunctional(g.tag, tuple(theta[pos : pos + g.ell]), dim=g.dim)
                pos += g.ell
            out.append(ControlLaw(h, g, c.T, c.u_max, c.osc_amplitude, c.osc_frequency))
        return out


# ---------------------------------------------------------------- objectives


class Objective:
    """Cached wrapper: identical candidates return identical values."""

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self._fn = fn
        self._cache: dict[bytes, float] = {}
        self.calls = 0

    def __call__(self, theta: np.ndarray) -> float:
        key = np.ascontiguousarray(theta, dtype=np.float64).tobytes()
        hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            hit = float(self._fn(np.array(theta, dtype=np.float64)))
            self._cache[key] = hit
        return hit

    def stderr(self, theta: np.ndarray) -> float:
        return 0.0


class FNObjective(Objective):
    """Finite-herd cost with common random numbers: every candidate reuses
    the replica seeds derived from ``seed``."""

    def __init__(self, chart: ControlChart, cost: CostSpec, dyn: Dynamics, N: int, dt: float, replicas: int, seed: int):
        self.chart, self.cost, self.dyn = chart, cost, dyn
        self.N, self.dt, self.replicas, self.seed = N, dt, replicas, seed
        self._se: dict[bytes, float] = {}
        super().__init__(self._eval)

    def _eval(self, theta):
        est = eval_FN(self.chart.decode(theta), self.cost, self.dyn, self.N, self.dt, self.replicas, self.seed)
        self._se[theta.tobytes()] = est.stderr
        return est.value

    def stderr(self, theta):
        key = np.ascontiguousarray(theta, dtype=np.float64).tobytes()
        if key not in self._se:
            self(theta)
        return self._se[key]


class FObjective(Objective):
    """Limit cost on a fixed ``M``-path ensemble."""

    def __init__(self, chart: ControlChart, cost: CostSpec, dyn: Dynamics, M: int, dt: float, seed: int,
                 cfg: PicardConfig = PicardConfig()):
        self.chart, self.cost, self.dyn = chart, cost, dyn
        self.M, self.dt, self.seed, self.cfg = M, dt, seed, cfg
        super().__init__(self._eval)

    def _eval(self, theta):
        controls = self.chart.decode(theta)
        d = self.dyn
        sol = solve_mkv(d.law, d.Y0, d.T, self.dt, d.kernels, controls, self.M, self.seed, d.noise, self.cfg)
        return cost_along(controls, self.cost, sol)


# ---------------------------------------------------------------- search


@dataclass
class OptimizationReport:
    x: np.ndarray
    value: float
    evaluations: int
    trace: list[float]
    restarts: int = 0
    degenerate_restarts: int = 0
    stderr: float = 0.0
    method: str = "nelder-mead"

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["evaluation", "best"])
        w.writerows([i + 1, repr(v)] for i, v in enumerate(self.trace))
        return buf.getvalue()


@dataclass
class _Search:
    f: Callable[[np.ndarray], float]
    lo: np.ndarray
    hi: np.ndarray
    budget: int
    evals: int = 0
    best_x: np.ndarray | None = None
    best_f: float = math.inf
    trace: list[float] = field(default_factory=list)
    seen: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> float:
        x = np.clip(x, self.lo, self.hi)
        key = x.tobytes()
        if key in self.seen:
            return self.seen[key]
        if self.evals >= self.budget:
            raise BudgetExhausted
        self.evals += 1
        v = float(self.f(x))
        if not math.isfinite(v):
            v = math.inf
        self.seen[key] = v
        if v < self.best_f:
            self.best_f, self.best_x = v, x.copy()
        self.trace.append(self.best_f)
        return v


def _zero_poll(s: _Search, x: np.ndarray, fx: float) -> tuple[np.ndarray, float]:
    """Try setting each nonzero coordinate to 0 (inside the box); keep gains."""
    for i in range(x.size):
        if x[i] == 0.0 or not (s.lo[i] <= 0.0 <= s.hi[i]):
            continue
        y = x.copy()
        y[i] = 0.0
        fy = s(y)
        if fy <= fx:
            x, fx = y, fy
    return x, fx


def _initial_simplex(x0, step, lo, hi):
    n = x0.size
    pts = [x0.copy()]
    for i in range(n):
        y = x0.copy()
        y[i] = x0[i] + step[i] if x0[i] + step[i] <= hi[i] else x0[i] - step[i]
        pts.append(np.clip(y, lo, hi))
    return np.array(pts)


def _degenerate(simplex: np.ndarray, scale: np.ndarray) -> bool:
    edges = (simplex[1:] - simplex[0]) / scale
    sv = np.linalg.svd(edges, compute_uv=False)
    return sv[-1] <= 1e-10 * max(sv[0], 1e-300)


def _nelder_mead(s: _Search, x0, fx0, step, xtol, ftol, counters):
    """One projected Nelder-Mead run from ``x0``. Returns the best vertex."""
    n = x0.size
    simplex = _initial_simplex(x0, step, s.lo, s.hi)
    fs = np.array([fx0] + [s(p) for p in simplex[1:]])
    scale = np.maximum(s.hi - s.lo, 1e-12)
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        spread = np.max(np.abs(simplex[1:] - simplex[0]) / scale)
        if spread <= xtol and fs[-1] - fs[0] <= ftol:
            return simplex[0], fs[0]
        if _degenerate(simplex, scale):
            counters["degenerate"] += 1
            return simplex[0], fs[0]
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = np.clip(centroid + (centroid - worst), s.lo, s.hi)
        fr = s(xr)
        if fr < fs[0]:
            xe = np.clip(centroid + 2.0 * (centroid - worst), s.lo, s.hi)
            fe = s(xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = np.clip(centroid + 0.5 * (xr - centroid), s.lo, s.hi)
        else:
            xc = np.clip(centroid + 0.5 * (worst - centroid), s.lo, s.hi)
        fc = s(xc)
        if fc < min(fr, fs[-1]):
            simplex[-1], fs[-1] = xc, fc
            continue
        for i in range(1, n + 1):
            simplex[i] = np.clip(simplex[0] + 0.5 * (simplex[i] - simplex[0]), s.lo, s.hi)
            fs[i] = s(simplex[i])


def _pattern_search(s: _Search, x, fx, step, xtol):
    """Compass search: poll +-step along each axis, halve on failure."""
    scale = np.maximum(s.hi - s.lo, 1e-12)
    step = step.copy()
    while np.max(step / scale) > xtol:
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] = np.clip(x[i] + sgn * step[i], s.lo[i], s.hi[i])
                fy = s(y)
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return x, fx


def minimize(
    objective: Callable[[np.ndarray], float],
    x0,
    lower,
    upper,
    budget: int,
    method: str = "nelder-mead",
    initial_step: float = 0.25,
    xtol: float = 1e-6,
    ftol: float = 1e-10,
    max_restarts: int = 50,
    sparse_poll: bool = True,
) -> OptimizationReport:
    """Box-constrained derivative-free minimization.

    ``initial_step`` is relative to the box width. Nelder-Mead restarts from
    the incumbent with a fresh simplex until a restart no longer improves it
    or ``budget`` evaluations are spent. With ``sparse_poll`` each start is
    preceded by a poll that zeroes coordinates one at a time, which lets
    l1-penalized problems reach exact zeros. The algorithm never looks at
    ``budget`` except to stop, so a larger budget extends the same search.
    """
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    x = np.clip(np.asarray(x0, dtype=np.float64), lo, hi)
    if lo.shape != x.shape or hi.shape != x.shape:
        raise ValueError("bounds and start point differ in shape")
    if np.any(hi < lo):
        raise ValueError("empty box")
    if budget < x.size + 2:
        raise ValueError(f"budget {budget} is below dimension + 2 = {x.size + 2}")
    if method not in ("nelder-mead", "pattern"):
        raise ValueError(f"unknown method {method!r}")

    s = _Search(objective, lo, hi, budget)
    counters = {"degenerate": 0, "restarts": 0}
    step = initial_step * (hi - lo)
    try:
        fx = s(x)
        while True:
            if sparse_poll:
                x, fx = _zero_poll(s, x, fx)
            if method == "pattern":
                x, fx = _pattern_search(s, x, fx, step, xtol)
                break
            x_new, f_new = _nelder_mead(s, x, fx, step, xtol, ftol, counters)
            gain = fx - f_new
            x, fx = x_new, f_new
            if counters["restarts"] >= max_restarts or (gain <= ftol and counters["restarts"] > 0):
                break
            counters["restarts"] += 1
            step = np.maximum(step * 0.5, xtol * (hi - lo))
    except BudgetExhausted:
        pass
    return OptimizationReport(
        x=s.best_x.copy(),
        value=s.best_f,
        evaluations=s.evals,
        trace=s.trace,
        restarts=counters["restarts"],
        degenerate_restarts=counters["degenerate"],
        stderr=float(getattr(objective, "stderr", lambda _x: 0.0)(s.best_x)),
        method=method,
    )


# ---------------------------------------------------------------- experiments


@dataclass
class GapRow:
    N: int
    minFN: float
    minF: float
    gap: float
    stderr: float
    rate: float


def gamma_gap_experiment(
    N_grid: Sequence[int],
    budget: int,
    cost: CostSpec,
    dyn: Dynamics,
    chart: ControlChart,
    dt: float,
    replicas: int,
    M: int,
    seed: int = 0,
    method: str = "nelder-mead",
    cfg: PicardConfig = PicardConfig(),
    x0=None,
) -> list[GapRow]:
    """Minimize ``F_N`` for each ``N`` and ``F`` once, with equal budgets.

    All searches start from ``x0`` (the chart's template by default). The
    ``rate`` column is the empirical-measure bound ``(n^{-1/2} + n^{-3/4})
    M_4`` with ``M_4 = (int |x|^4)^{1/4}`` maximised along the optimal limit
    flow.
    """
    N_grid = list(N_grid)
    if any(b <= a for a, b in zip(N_grid, N_grid[1:])):
        raise ValueError("N grid must be strictly increasing")
    x0 = chart.encode() if x0 is None else np.asarray(x0, dtype=np.float64)
    fobj = FObjective(chart, cost, dyn, M, dt, seed, cfg)
    rep_F = minimize(fobj, x0, chart.lower, chart.upper, budget, method)
    best = chart.decode(rep_F.x)
    sol = solve_mkv(dyn.law, dyn.Y0, dyn.T, dt, dyn.kernels, best, M, seed, dyn.noise, cfg)
    m4 = sol.flow.sup_moment(4.0)
    rows = []
    for N in N_grid:
        obj = FNObjective(chart, cost, dyn, N, dt, replicas, seed)
        rep = minimize(obj, x0, chart.lower, chart.upper, budget, method)
        log.info("N=%d minFN=%.6f minF=%.6f", N, rep.value, rep_F.value)
        rows.append(GapRow(N, rep.value, rep_F.value, abs(rep.value - rep_F.value), rep.stderr,
                           sampling_rate(N, 4.0, dyn.dim, m4)))
    return rows


def gap_table_csv(rows: Sequence[GapRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "minFN", "minF", "gap", "stderr", "rate"])
    for r in rows:
        w.writerow([r.N, repr(r.minFN), repr(r.minF), repr(r.gap), repr(r.stderr), repr(r.rate)])
    return buf.getvalue()


@dataclass
class StabilityRow:
    j: int
    deviation: float
    law_part: float
    herder_part: float


def stability_experiment(
    j_grid: Sequence[int],
    controls: Sequence[ControlLaw],
    amplitude: float,
    dyn: Dynamics,
    M: int,
    dt: float,
    seed: int = 0,
    cfg: PicardConfig = PicardConfig(tol=1e-8),
) -> list[StabilityRow]:
    """Deviation of the limit solution under ``h + A sign(sin(2 pi j t / T))``.

    Both solves share the ensemble seed, so they see identical initial data
    and tapes.
    """
    d = dyn
    base = solve_mkv(d.law, d.Y0, d.T, dt, d.kernels, controls, M, seed, d.noise, cfg)
    rows = []
    for j in j_grid:
        osc = [c.with_oscillation(amplitude, int(j)) for c in controls]
        sol = solve_mkv(d.law, d.Y0, d.T, dt, d.kernels, osc, M, seed, d.noise, cfg)
        lp = law_distance(sol.flow, base.flow)
        hp = float(np.max(np.linalg.norm(sol.Y - base.Y, axis=-1))) if d.m else 0.0
        rows.append(StabilityRow(int(j), lp + hp, lp, hp))
    return rows


def stability_table_csv(rows: Sequence[StabilityRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["j", "deviation", "law_part", "herder_part"])
    for r in rows:
        w.writerow([r.j, repr(r.deviation), repr(r.law_part), repr(r.herder_part)])
    return buf.getvalue()
