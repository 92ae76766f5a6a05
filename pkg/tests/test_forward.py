from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracdelay.forward import (
    SolverError,
    evaluate_cost,
    manufactured_convergence,
    observed_orders,
    solve_fdde,
)
from fracdelay.problem import (
    ControlSet,
    ControlSignal,
    CostSpec,
    HistorySegment,
    LinearDelay,
    ProblemSpec,
    RunningCost,
    TerminalCost,
    TimeGrid,
    builtin_example,
)


def scalar_problem(alpha, N, a0=0.0, a1=0.0, c=0.0, y0=1.0, history=0.0, running=None, beta=None):
    grid = TimeGrid(1.0, 0.25, N)
    return ProblemSpec(
        alpha=alpha,
        grid=grid,
        history=HistorySegment.constant([y0], history, grid),
        dynamics=LinearDelay(1, 1, A0=[[a0]], A1=[[a1]], B=[[1.0]], c=[c]),
        cost=CostSpec(TerminalCost.linear([1.0]), running or RunningCost.zero(1, 1),
                      alpha if beta is None else beta),
        controls=ControlSet.box([-1.0], [1.0]),
    )


def mittag_leffler(alpha, z):
    with mp.workdps(30):
        return float(mp.nsum(lambda k: mp.mpf(z) ** k / mp.gamma(alpha * k + 1), [0, mp.inf]))


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_example2_closed_form_trajectories(alpha):
    spec = builtin_example("ex2", alpha, 400)
    u = ControlSignal.constant(spec.grid, -0.5)
    traj = solve_fdde(spec, u)
    t = spec.grid.nodes
    y1 = -(t**alpha) / (2 * math.gamma(alpha + 1))
    y2 = -np.maximum(t - 0.5, 0.0) ** (2 * alpha) / (4 * math.gamma(2 * alpha + 1))
    assert np.max(np.abs(traj.states[:, 0] - y1)) < 1e-12
    assert np.max(np.abs(traj.states[:, 1] - y2)) < 5e-4
    J = evaluate_cost(spec, traj, u)
    assert J == pytest.approx(-1 / (2 ** (2 * alpha + 2) * math.gamma(2 * alpha + 1)), abs=1e-4)


@pytest.mark.parametrize("alpha", [0.4, 0.8])
def test_relaxation_matches_mittag_leffler(alpha):
    spec = scalar_problem(alpha, 400, a0=-1.0)
    traj = solve_fdde(spec, ControlSignal.constant(spec.grid, 0.0))
    t = spec.grid.nodes[::40]
    exact = np.array([mittag_leffler(alpha, -(s**alpha)) for s in t])
    assert np.max(np.abs(traj.states[::40, 0] - exact)) < 2e-3


def test_zero_dynamics_give_constant_trajectory():
    spec = scalar_problem(0.5, 48, y0=0.7)
    spec = spec.replace(dynamics=LinearDelay(1, 1))
    traj = solve_fdde(spec, ControlSignal.constant(spec.grid, 0.3))
    np.testing.assert_array_equal(traj.states[:, 0], np.full(49, 0.7))


def test_delayed_history_is_used():
    # D^a y = y(t - h) with y = 2 on [-h, 0): y = 1 + 2 t^a / Gamma(a+1) on [0, h]
    alpha = 0.6
    spec = scalar_problem(alpha, 200, a1=1.0, history=2.0)
    traj = solve_fdde(spec, ControlSignal.constant(spec.grid, 0.0))
    t = spec.grid.nodes[: spec.grid.m + 1]
    np.testing.assert_allclose(traj.states[: spec.grid.m + 1, 0],
                               1 + 2 * t**alpha / math.gamma(alpha + 1), atol=1e-12)


@given(cut=st.integers(1, 39), value=st.floats(-1.0, 1.0))
@settings(max_examples=20, deadline=None)
def test_causality_and_reuse(cut, value):
    spec = builtin_example("ex1", 0.5, 40)
    base = ControlSignal.constant(spec.grid, 0.2)
    vals = base.values.copy()
    vals[cut:] = value
    other = ControlSignal(spec.grid, vals)
    t0 = solve_fdde(spec, base)
    t1 = solve_fdde(spec, other)
    np.testing.assert_array_equal(t0.states[: cut + 1], t1.states[: cut + 1])
    reused = solve_fdde(spec, other, reuse=t0, reuse_upto=cut)
    np.testing.assert_allclose(reused.states, t1.states, rtol=0, atol=1e-15)


def test_corrector_divergence_raises():
    spec = scalar_problem(0.5, 12, a0=1e6)
    with pytest.raises(SolverError) as exc:
        solve_fdde(spec, ControlSignal.constant(spec.grid, 0.0))
    assert exc.value.index == 1


def test_running_cost_integral():
    beta = 0.8
    spec = scalar_problem(0.5, 100, running=RunningCost(np.zeros((1, 1)), 2.0 * np.eye(1)), beta=beta,
                          y0=0.0)
    spec = spec.replace(dynamics=LinearDelay(1, 1))
    u = ControlSignal.constant(spec.grid, 0.5)
    J = evaluate_cost(spec, solve_fdde(spec, u), u)
    # f0 = 0.25 constant: J = 0.25 T^beta / Gamma(beta + 1)
    assert J == pytest.approx(0.25 / math.gamma(beta + 1), rel=1e-12)


def test_cost_rejects_foreign_trajectory():
    spec = builtin_example("ex1", 0.5, 10)
    other = builtin_example("ex1", 0.5, 20)
    u = ControlSignal.constant(other.grid, 0.0)
    with pytest.raises(ValueError):
        evaluate_cost(spec, solve_fdde(other, u), ControlSignal.constant(spec.grid, 0.0))


def test_manufactured_convergence_order():
    ladder = manufactured_convergence(0.5, [50, 100, 200, 400])
    orders = observed_orders(ladder)
    assert all(p >= 1.0 for p in orders)
    assert ladder[-1][1] < 1e-4


def test_trajectory_csv(tmp_path):
    spec = builtin_example("ex2", 0.5, 10)
    traj = solve_fdde(spec, ControlSignal.constant(spec.grid, -0.5))
    path = tmp_path / "y.csv"
    traj.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# fracdelay trajectory v1"
    assert lines[1] == "t,y_1,y_2"
    assert len(lines) == 2 + 11
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    np.testing.assert_allclose(data[:, 1:], traj.states, rtol=1e-11, atol=1e-15)
