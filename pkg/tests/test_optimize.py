import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from herdsim.controls import ControlLaw, GFunctional
from herdsim.cost import ControlCost, CostSpec, Lagrangian
from herdsim.kernels import KernelSet, KernelSpec
from herdsim.mckean_vlasov import PicardConfig
from herdsim.optimize import (
    ControlChart,
    FNObjective,
    gamma_gap_experiment,
    gap_table_csv,
    minimize,
    stability_experiment,
    stability_table_csv,
)
from herdsim.particles import InitialLaw, NoiseLevel
from herdsim.presets import Dynamics

Z = KernelSpec.zero()
G1 = GFunctional("constant", (1.0,))
BOX = (-2.0 * np.ones(3), 2.0 * np.ones(3))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def test_l1_reaches_exact_zero():
    rep = minimize(lambda x: float(np.sum(np.abs(x))), [0.3, -0.7, 1.1], *BOX, budget=500)
    assert rep.value <= 1e-6
    assert rep.evaluations <= 500


def test_quadratic_and_box_optimum():
    c = np.array([0.4, -1.2, 0.9])
    rep = minimize(lambda x: float(np.sum((x - c) ** 2)), np.zeros(3), *BOX, budget=400, sparse_poll=False)
    np.testing.assert_allclose(rep.x, c, atol=1e-4)
    rep = minimize(lambda x: float(np.sum((x - 5.0) ** 2)), np.zeros(3), *BOX, budget=400)
    np.testing.assert_allclose(rep.x, 2.0)


def test_pattern_search():
    c = np.array([0.5, -0.25, 1.0])
    rep = minimize(lambda x: float(np.sum((x - c) ** 2)), np.zeros(3), *BOX, budget=600, method="pattern")
    np.testing.assert_allclose(rep.x, c, atol=1e-5)
    assert rep.method == "pattern"


def test_larger_budget_never_worse():
    values = [minimize(rosenbrock, [-1.0, 1.5, 0.5], *BOX, budget=b).value for b in (20, 40, 80, 160, 320)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_search_is_reproducible():
    a = minimize(rosenbrock, [-1.0, 1.5, 0.5], *BOX, budget=150)
    b = minimize(rosenbrock, [-1.0, 1.5, 0.5], *BOX, budget=150)
    assert a.trace == b.trace
    assert np.array_equal(a.x, b.x)
    assert a.trace_csv().splitlines()[0] == "evaluation,best"
    assert all(y <= x for x, y in zip(a.trace, a.trace[1:]))


def test_argument_validation():
    with pytest.raises(ValueError):
        minimize(rosenbrock, np.zeros(3), *BOX, budget=4)
    with pytest.raises(ValueError):
        minimize(rosenbrock, np.zeros(3), *BOX, budget=50, method="bfgs")
    with pytest.raises(ValueError):
        minimize(rosenbrock, np.zeros(3), BOX[1], BOX[0], budget=50)


def template(m=2, K=2, u_max=2.0, T=1.0):
    return [ControlLaw(np.zeros((K, 1, 1)), G1, T, u_max) for _ in range(m)]


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4))
def test_projection_is_idempotent(theta):
    chart = ControlChart(template())
    p = chart.project(theta)
    assert np.array_equal(chart.project(p), p)
    assert np.all(np.abs(p) <= 2.0)
    assert np.array_equal(chart.encode(chart.decode(p)), p)


def test_chart_with_free_centers():
    g = GFunctional("tanh_statistic", (0.0, 1.0), dim=1)
    chart = ControlChart([ControlLaw(np.zeros((3, 1, 2)), g, 1.0)], free_g=True)
    assert chart.n_h == 6 and chart.dim == 8
    theta = chart.encode()
    theta[6:] = [0.5, 9.0]
    law = chart.decode(theta)[0]
    assert law.g.params == (0.5, 3.0)
    with pytest.raises(ValueError):
        ControlChart(template(), free_g=True)


def frozen_dynamics(m=2):
    return Dynamics(KernelSet(Z, Z, Z, Z), NoiseLevel(0.0), InitialLaw("gaussian", mean=(0.0,), std=1.0),
                    np.zeros((m, 1)), 1.0)


def test_grid_oracle_for_frozen_dynamics():
    # herders move as Y_i = h_i t; the discrete tracking cost is quadratic in h_i
    # with minimizer y_i * kappa, kappa = sum w t / sum w t^2 over trapezoid weights
    dt = 0.05
    t = np.linspace(0.0, 1.0, 21)
    w = np.full(t.size, dt)
    w[[0, -1]] = dt / 2
    kappa = float(np.sum(w * t) / np.sum(w * t**2))
    h_star = np.array([0.6, -0.4])
    cost = CostSpec(Lagrangian(alpha=0.0, beta=1.0, y_target=tuple((h / kappa,) for h in h_star), R=100.0))
    chart = ControlChart(template(K=1, u_max=1.0))
    obj = FNObjective(chart, cost, frozen_dynamics(), 2, dt, 2, seed=0)
    grid = np.linspace(-1.0, 1.0, 11)
    values = {(a, b): obj(np.array([a, b])) for a, b in itertools.product(grid, grid)}
    best = np.array(min(values, key=values.get))
    np.testing.assert_allclose(best, h_star, atol=1e-12)
    rep = minimize(obj, np.zeros(2), chart.lower, chart.upper, budget=200, sparse_poll=False)
    np.testing.assert_allclose(rep.x, h_star, atol=1e-3)
    assert rep.value <= min(values.values()) + 1e-9


def test_common_random_numbers(bench):
    chart = ControlChart(bench.controls)
    cost = CostSpec(Lagrangian(x_target=(0.5,)), ControlCost(lam=0.05))
    theta = chart.encode()
    a = FNObjective(chart, cost, bench, 8, 0.02, 4, seed=3)
    b = FNObjective(chart, cost, bench, 8, 0.02, 4, seed=3)
    assert a(theta) == b(theta)
    assert a(theta) == a(theta.copy())
    assert a.calls == 1
    assert a.stderr(theta) > 0


def test_gap_vanishes_when_zero_control_is_optimal():
    dyn = frozen_dynamics(1)
    dyn.noise = NoiseLevel(0.2)
    cost = CostSpec(Lagrangian(alpha=0.0), ControlCost(lam=0.1))
    chart = ControlChart(template(m=1, K=2))
    tol = PicardConfig().tol
    rows = gamma_gap_experiment([4, 16], 40, cost, dyn, chart, 0.05, 4, 200, seed=0,
                                x0=np.array([0.5, -0.3]))
    for r in rows:
        assert r.gap <= 2 * tol
        assert r.minF == 0.0
    lines = gap_table_csv(rows).splitlines()
    assert lines[0] == "N,minFN,minF,gap,stderr,rate"
    assert len(lines) == 3
    with pytest.raises(ValueError):
        gamma_gap_experiment([16, 4], 40, cost, dyn, chart, 0.05, 4, 200)


def test_stability_zero_amplitude(bench):
    cfg = PicardConfig(tol=1e-8)
    rows = stability_experiment([4, 8], bench.controls, 0.0, bench, 300, 0.01, seed=1, cfg=cfg)
    assert all(r.deviation <= 2 * cfg.tol for r in rows)
    assert stability_table_csv(rows).splitlines()[0] == "j,deviation,law_part,herder_part"


def test_stability_deviation_shrinks(bench):
    rows = stability_experiment([4, 32], bench.controls, 0.5, bench, 500, 0.005, seed=1)
    assert rows[1].deviation < rows[0].deviation / 2
