"""Experiment drivers behind ``herdsim run``.

Each driver maps a validated config to named text artifacts (CSV tables)
and a list of pass/fail checks. Nothing here touches the filesystem; the
CLI owns persistence.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .controls import controls_to_csv
from .fokker_planck import GridDensity, default_domain, entropy, equivalence_check, herder_gap, second_moment, solve_fp
from .mckean_vlasov import coupled_chaos_run, solve_mkv
from .optimize import (
    ControlChart,
    FNObjective,
    FObjective,
    gamma_gap_experiment,
    minimize,
    stability_experiment,
)
from .particles import initial_state, simulate
from .rng import replica_seed

log = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class RunResult:
    artifacts: dict[str, bytes] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    def add_text(self, name: str, text: str) -> None:
        self.artifacts[name] = text.encode("utf-8")

    def summary(self, cfg: ExperimentConfig) -> str:
        lines = [f"experiment: {cfg.experiment}", f"config_hash: {cfg.content_hash()}", f"seed: {cfg.seed}"]
        lines += [c.line() for c in self.checks]
        n_fail = sum(not c.passed for c in self.checks)
        lines.append("result: all checks passed" if n_fail == 0 else f"result: {n_fail} check(s) failed")
        return "\n".join(lines) + "\n"


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _seeds(cfg: ExperimentConfig) -> list[int]:
    return [replica_seed(cfg.seed, r) for r in range(cfg.replicas)]


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _strictly_decreasing(v) -> bool:
    return all(b < a for a, b in zip(v, v[1:]))


# ---------------------------------------------------------------- drivers


def run_simulate(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d = cfg.dynamics
    res = RunResult(seeds=[cfg.seed])
    init = initial_state(dyn.law, dyn.Y0.reshape(-1, d.dim), d.N, cfg.seed)
    traj = simulate(init, d.T, d.dt, dyn.kernels, dyn.controls, cfg.seed, dyn.noise, dt_max=max(d.dt, d.T / 100.0))
    res.add_text("trajectory.csv", traj.to_csv())
    if cfg.output.binary_trajectory:
        buf = io.BytesIO()
        traj.to_binary(buf)
        res.artifacts["trajectory.bin"] = buf.getvalue()
    finite = bool(np.all(np.isfinite(traj.X)) and np.all(np.isfinite(traj.Y)))
    res.checks.append(Check("finite_state", finite, f"{len(traj)} nodes, N={d.N}, m={dyn.m}"))
    return res


def run_mkv(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d = cfg.dynamics
    sol = solve_mkv(dyn.law, dyn.Y0, d.T, d.dt, dyn.kernels, dyn.controls, d.M, cfg.seed, dyn.noise, cfg.picard_cfg())
    res = RunResult(seeds=[cfg.seed])
    res.add_text("law_flow.csv", sol.flow.to_csv())
    res.add_text("picard.csv", _table(["sweep", "weighted_distance"], [(i + 1, v) for i, v in enumerate(sol.history)]))
    if dyn.m:
        rows = [(t, i, *sol.Y[k, i]) for k, t in enumerate(sol.times) for i in range(dyn.m)]
        res.add_text("herders.csv", _table(["t", "id"] + [f"x{k + 1}" for k in range(d.dim)], rows))
    res.checks.append(Check("picard_converged", True, f"{sol.iterations} sweeps, last {sol.history[-1]:.3e}"))
    return res


def _fp_solution(cfg: ExperimentConfig, cells: int):
    dyn = cfg.dynamics_obj()
    f = cfg.fp
    if f.x_min is not None and f.x_max is not None:
        lo, hi = f.x_min, f.x_max
    else:
        k1 = dyn.kernels.K1
        v_max = abs(k1.a) if k1.family != "linear" else 0.0
        lo, hi = default_domain(dyn.law, dyn.T, v_max, sigma=dyn.noise.sigma)
    rho0 = GridDensity.from_law(dyn.law, lo, hi, cells)
    snaps = np.linspace(0.0, dyn.T, f.snapshots)
    return solve_fp(rho0, dyn.Y0, dyn.T, dyn.kernels, dyn.controls, dyn.noise, f.cfl, snaps,
                    escape_tol=f.escape_tol, flux=f.flux)


def _initial_data_check(fp) -> Check:
    """Finite entropy and second moment of the initial density, the
    hypotheses under which the density and ensemble views coincide."""
    rho0 = fp.density(0)
    ent, m2 = entropy(rho0), second_moment(rho0)
    return Check("initial_entropy_finite", ent.finite and math.isfinite(m2),
                 f"int rho0 log rho0 = {ent.value:.6g}, second moment {m2:.6g}")


def run_fp(cfg: ExperimentConfig) -> RunResult:
    fp = _fp_solution(cfg, cfg.fp.cells)
    res = RunResult(seeds=[])
    res.checks.append(_initial_data_check(fp))
    res.add_text("density.csv", fp.to_csv())
    masses = fp.rho.sum(axis=1) * fp.dx
    drift = float(np.max(np.abs(masses - 1.0)))
    res.checks.append(Check("mass_conserved", drift <= 1e-8, f"max |mass - 1| = {drift:.3e}"))
    rmin = float(fp.rho.min())
    res.checks.append(Check("nonnegative", rmin >= -1e-12, f"min density {rmin:.3e}"))
    return res


def run_chaos(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d, c = cfg.dynamics, cfg.chaos
    seeds = _seeds(cfg)
    res = RunResult(seeds=seeds)
    errs = np.empty((len(seeds), len(c.N_grid)))
    raw = []
    for r, s in enumerate(seeds):
        ref = solve_mkv(dyn.law, dyn.Y0, d.T, d.dt, dyn.kernels, dyn.controls, c.M_ref, s, dyn.noise, cfg.picard_cfg())
        for j, N in enumerate(c.N_grid):
            out = coupled_chaos_run(N, d.dt, d.T, dyn.kernels, dyn.controls, s, dyn.noise, c.M_ref, dyn.law, dyn.Y0,
                                    reference=ref, cfg=cfg.picard_cfg(), max_blocks=c.max_blocks)
            errs[r, j] = out.error
            raw.append((r, s, N, out.error, out.stderr))
        log.info("chaos replica %d done", r)
    med = np.median(errs, axis=0)
    slope = loglog_slope(c.N_grid, med)
    se = errs.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.full(len(c.N_grid), math.nan)
    rows = [(N, med[j], errs[:, j].mean(), se[j], slope) for j, N in enumerate(c.N_grid)]
    res.add_text("chaos_rate.csv", _table(["N", "median_error", "mean_error", "stderr", "slope"], rows))
    res.add_text("chaos_raw.csv", _table(["replica", "seed", "N", "error", "block_stderr"], raw))
    res.checks.append(Check("median_strictly_decreasing", _strictly_decreasing(list(med)),
                            "medians " + ", ".join(f"{v:.4g}" for v in med)))
    res.checks.append(Check("loglog_slope", slope <= c.max_slope, f"slope {slope:.3f} (bound {c.max_slope})"))
    return res


def run_equivalence(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d, e = cfg.dynamics, cfg.equivalence
    res = RunResult(seeds=[cfg.seed])
    rows, dists, m4 = [], [], []
    for cells, M in zip(e.cells, e.M):
        sol = solve_mkv(dyn.law, dyn.Y0, d.T, d.dt, dyn.kernels, dyn.controls, M, cfg.seed, dyn.noise, cfg.picard_cfg())
        fp = _fp_solution(cfg, cells)
        if not res.checks:
            res.checks.append(_initial_data_check(fp))
        dist = equivalence_check(fp, sol.flow)
        hg = herder_gap(fp, sol.times, sol.Y) if dyn.m else 0.0
        mom = sol.flow.sup_moment(4.0)
        dists.append(dist)
        m4.append(mom)
        rows.append((cells, M, dist, hg, mom))
    res.add_text("equivalence.csv", _table(["cells", "M", "max_w1", "herder_gap", "sup_m4"], rows))
    res.checks.append(Check("w1_within_bound", dists[0] <= e.max_distance,
                            f"max_t W1 = {dists[0]:.4g} at {e.cells[0]} cells (bound {e.max_distance})"))
    if len(dists) > 1:
        res.checks.append(Check("refinement_reduces_w1", _strictly_decreasing(dists),
                                "distances " + ", ".join(f"{v:.4g}" for v in dists)))
        change = abs(m4[1] - m4[0]) / m4[0]
        res.checks.append(Check("moment_stable", math.isfinite(m4[0]) and change < e.max_moment_change,
                                f"sup M4 {m4[0]:.4g} -> {m4[1]:.4g} ({100 * change:.2f}% change)"))
    return res


def run_stability(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d, st = cfg.dynamics, cfg.stability
    seeds = _seeds(cfg)
    res = RunResult(seeds=seeds)
    dev = np.empty((len(seeds), len(st.j_grid)))
    for r, s in enumerate(seeds):
        rows = stability_experiment(st.j_grid, dyn.controls, st.amplitude, dyn, d.M, d.dt, s, cfg.picard_cfg())
        dev[r] = [row.deviation for row in rows]
    med = np.median(dev, axis=0)
    table = [(j, med[k], *dev[:, k]) for k, j in enumerate(st.j_grid)]
    res.add_text("stability.csv", _table(["j", "median_deviation"] + [f"seed{r}" for r in range(len(seeds))], table))
    res.checks.append(Check("median_monotone_decrease", _strictly_decreasing(list(med)),
                            "medians " + ", ".join(f"{v:.4g}" for v in med)))
    drop = med[0] / med[-1] if med[-1] > 0 else math.inf
    res.checks.append(Check("drop_factor", drop >= st.min_drop,
                            f"j={st.j_grid[0]} / j={st.j_grid[-1]} = {drop:.3f} (need >= {st.min_drop})"))
    return res


def run_gamma_gap(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d, o = cfg.dynamics, cfg.optimizer
    chart = ControlChart(tuple(dyn.controls), free_g=o.free_g)
    seeds = _seeds(cfg)
    res = RunResult(seeds=seeds)
    grid = cfg.gamma_gap.N_grid
    per_seed = []
    for s in seeds:
        per_seed.append(gamma_gap_experiment(grid, o.budget, cfg.cost_spec(), dyn, chart, d.dt, o.mc_replicas, d.M,
                                             s, o.method, cfg.picard_cfg()))
    raw = [(r, row.N, row.minFN, row.minF, row.gap, row.stderr, row.rate)
           for r, rows in enumerate(per_seed) for row in rows]
    res.add_text("gamma_gap_raw.csv", _table(["replica", "N", "minFN", "minF", "gap", "stderr", "rate"], raw))
    col = lambda attr: np.median([[getattr(row, attr) for row in rows] for rows in per_seed], axis=0)  # noqa: E731
    minFN, minF, gap, se, rate = col("minFN"), col("minF"), col("gap"), col("stderr"), col("rate")
    res.add_text("gamma_gap.csv", _table(["N", "minFN", "minF", "gap", "stderr"],
                                         [(N, minFN[k], minF[k], gap[k], se[k]) for k, N in enumerate(grid)]))
    tol = 3.0 * (se[-1] + rate[-1])
    res.checks.append(Check("gap_within_budget", gap[-1] <= tol,
                            f"gap {gap[-1]:.4g} at N={grid[-1]} (bound 3*(SE+rate) = {tol:.4g})"))
    if len(grid) > 1:
        res.checks.append(Check("gap_shrinks", gap[-1] < gap[0],
                                f"gap {gap[0]:.4g} at N={grid[0]} -> {gap[-1]:.4g} at N={grid[-1]}"))
    return res


def run_optimize(cfg: ExperimentConfig) -> RunResult:
    dyn = cfg.dynamics_obj()
    d, o = cfg.dynamics, cfg.optimizer
    chart = ControlChart(tuple(dyn.controls), free_g=o.free_g)
    if o.target == "FN":
        obj = FNObjective(chart, cfg.cost_spec(), dyn, d.N, d.dt, o.mc_replicas, cfg.seed)
    else:
        obj = FObjective(chart, cfg.cost_spec(), dyn, d.M, d.dt, cfg.seed, cfg.picard_cfg())
    rep = minimize(obj, chart.encode(), chart.lower, chart.upper, o.budget, o.method, sparse_poll=o.sparse_poll)
    res = RunResult(seeds=[cfg.seed])
    res.add_text("trace.csv", rep.trace_csv())
    res.add_text("controls.csv", controls_to_csv(chart.decode(rep.x)))
    res.add_text("optimum.csv", _table(["target", "value", "stderr", "evaluations", "restarts", "degenerate_restarts"],
                                       [(o.target, rep.value, rep.stderr, rep.evaluations, rep.restarts,
                                         rep.degenerate_restarts)]))
    mono = all(b <= a for a, b in zip(rep.trace, rep.trace[1:]))
    res.checks.append(Check("trace_nonincreasing", mono, f"best {rep.value:.6g} after {rep.evaluations} evaluations"))
    inside = bool(np.all(rep.x >= chart.lower) and np.all(rep.x <= chart.upper))
    res.checks.append(Check("optimum_in_box", inside, f"{chart.dim} coordinates"))
    return res


DRIVERS = {
    "simulate": run_simulate,
    "mkv": run_mkv,
    "fp": run_fp,
    "chaos_rate": run_chaos,
    "equivalence": run_equivalence,
    "stability": run_stability,
    "gamma_gap": run_gamma_gap,
    "optimize": run_optimize,
}


def run(cfg: ExperimentConfig) -> RunResult:
    return DRIVERS[cfg.experiment](cfg)

