from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from fracdelay.conditions import Process, check_pmp
from fracdelay.adjoint import solve_adjoint
from fracdelay.forward import solve_fdde
from fracdelay.problem import ControlSignal, TimeGrid, builtin_example
from fracdelay.variation import (
    fit_exponent,
    gronwall_probe,
    halving_ladder,
    lebesgue_asymptotic_check,
    parse_ladder,
    run_spike,
    snap_ladder,
)

LADDER = [0.1, 0.05, 0.025, 0.0125]


def zero_control(spec):
    return ControlSignal.constant(spec.grid, 0.0)


def test_ladders():
    g = TimeGrid(1.0, 0.25, 400)
    assert snap_ladder(g, [0.1, 0.0501]) == pytest.approx([0.1, 0.05])
    assert halving_ladder(g, 0.1, 3) == pytest.approx([0.1, 0.05, 0.025])
    assert parse_ladder("0.1/0.05, 0.025") == [0.1, 0.05, 0.025]
    with pytest.raises(ValueError):
        snap_ladder(g, [0.001])
    with pytest.raises(ValueError):
        snap_ladder(g, [0.05, 0.0501])
    with pytest.raises(ValueError):
        parse_ladder(" / ")


def test_spike_with_base_value_changes_nothing():
    spec = builtin_example("ex1", 0.5, 40)
    exp = run_spike(spec, zero_control(spec), 0.25, [0.0], [0.1, 0.05])
    for rec in exp.records:
        assert (rec.dJ_actual, rec.dJ_first, rec.dJ_second) == (0.0, 0.0, 0.0)


def test_spike_must_end_before_final_time():
    spec = builtin_example("ex1", 0.5, 40)
    with pytest.raises(ValueError):
        run_spike(spec, zero_control(spec), 0.95, [-1.0], [0.05])
    with pytest.raises(ValueError):
        run_spike(spec, zero_control(spec), 0.5, [-1.0], [0.1], companion=True)


def test_example1_spike_follows_first_order_prediction():
    spec = builtin_example("ex1", 0.5, 400)
    exp = run_spike(spec, zero_control(spec), 0.25, [-1.0], LADDER)
    assert all(r.dJ_actual < 0 for r in exp.records)
    dev = np.abs(exp.first_order_ratios() - 1.0)
    assert dev[-1] < 1e-3 and np.all(np.diff(dev) <= 0)


def test_spike_at_first_order_argmax_lowers_cost():
    spec = builtin_example("ex1", 0.4, 200)
    u = zero_control(spec)
    traj = solve_fdde(spec, u)
    rep = check_pmp(Process(spec, traj, u, solve_adjoint(spec, traj, u)))
    i = int(np.argmax(rep.gap))
    exp = run_spike(spec, u, spec.grid.nodes[i], rep.argmax_v[i], [0.05])
    assert exp.records[0].dJ_actual < 0


def test_example2_single_spike_leaves_cost_unchanged():
    # y2 is forced by y1(t - h) u(t), which vanishes off the spike and reads the zero history on it
    spec = builtin_example("ex2", 0.5, 200)
    exp = run_spike(spec, zero_control(spec), 0.25, [-1.0], [0.1, 0.05])
    assert all(r.dJ_actual == 0.0 for r in exp.records)
    assert all(r.dJ_second < 0 for r in exp.records)


def test_example2_companion_spike_limit():
    alpha = 0.5
    spec = builtin_example("ex2", alpha, 800)
    exp = run_spike(spec, zero_control(spec), 0.25, [-1.0], LADDER, companion=True)
    target = -(0.25 ** (alpha - 1)) / (math.gamma(alpha) * math.gamma(alpha + 1))
    scaled = exp.scaled_actual() / target
    assert np.all(np.diff(scaled) < 0)
    assert scaled[-1] == pytest.approx(1 / (alpha + 1), rel=1e-2)


def test_state_increment_scales_like_eps_to_alpha():
    alpha = 0.5
    spec = builtin_example("ex2", alpha, 800)
    probe = gronwall_probe(spec, zero_control(spec), 0.25, [-1.0], LADDER)
    p = fit_exponent([r.eps for r in probe], [r.local_max for r in probe])
    assert abs(p - alpha) < 0.15
    # y1 = -(t - theta)^a / Gamma(a + 1) on the spike
    for r in probe:
        assert r.local_ratio == pytest.approx(1 / math.gamma(alpha + 1), rel=1e-10)


def lebesgue_oracle(a, theta, alpha, T, eps):
    with mp.workdps(30):
        return float(mp.quad(lambda t: (T - t) ** (alpha - 1) * (t - theta) ** alpha * a(t),
                             [theta, theta + eps]))


def test_lebesgue_constant_coefficient():
    recs = lebesgue_asymptotic_check(lambda t: 1.0, 0.3, 0.5, 1.0, LADDER)
    errs = np.array([abs(r.ratio - 1) for r in recs])
    assert errs[-1] < 1e-2
    # O(eps) error: halving eps halves the error
    np.testing.assert_allclose(errs[:-1] / errs[1:], 2.0, rtol=0.1)


def test_lebesgue_linear_coefficient_against_oracle():
    theta, alpha, T = 0.3, 0.5, 1.0
    recs = lebesgue_asymptotic_check(lambda t: t, theta, alpha, T, LADDER)
    for r in recs:
        assert r.integral == pytest.approx(lebesgue_oracle(lambda t: t, theta, alpha, T, r.eps), rel=1e-10)
    errs = np.array([abs(r.ratio - 1) for r in recs])
    assert errs[-1] < 5e-2
    np.testing.assert_allclose(errs[:-1] / errs[1:], 2.0, rtol=0.1)


def test_lebesgue_vanishing_coefficient():
    theta, alpha = 0.3, 0.5
    recs = lebesgue_asymptotic_check(lambda t: t - theta, theta, alpha, 1.0, LADDER)
    assert all(math.isnan(r.ratio) for r in recs)
    scaled = [r.integral / r.eps ** (alpha + 1) for r in recs]
    assert np.all(np.diff(scaled) < 0)
    assert fit_exponent(LADDER, [r.integral for r in recs]) == pytest.approx(alpha + 2, abs=0.05)


def test_lebesgue_sampled_coefficient():
    nodes = np.linspace(0, 1, 401)
    recs = lebesgue_asymptotic_check(1 + nodes, 0.3, 0.5, 1.0, LADDER, nodes=nodes)
    direct = lebesgue_asymptotic_check(lambda t: 1 + t, 0.3, 0.5, 1.0, LADDER)
    for a, b in zip(recs, direct):
        assert a.integral == pytest.approx(b.integral, rel=1e-10)
    with pytest.raises(ValueError):
        lebesgue_asymptotic_check(nodes, 0.3, 0.5, 1.0, LADDER)
    with pytest.raises(ValueError):
        lebesgue_asymptotic_check(lambda t: 1.0, 0.95, 0.5, 1.0, [0.1])


def test_spike_csv(tmp_path):
    spec = builtin_example("ex1", 0.5, 80)
    exp = run_spike(spec, zero_control(spec), 0.25, [-1.0], [0.1, 0.05])
    path = tmp_path / "spike.csv"
    exp.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# fracdelay spike v1", "eps,dJ_actual,dJ_first,dJ_second,residual_ratio"]
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    np.testing.assert_allclose(data[:, 1], [r.dJ_actual for r in exp.records], rtol=1e-11)
