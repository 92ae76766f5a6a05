from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest

from fracdelay.forward import solve_fdde
from fracdelay.fundmatrix import representation_solution, solve_F, solve_F1
from fracdelay.problem import (
    BilinearDelay,
    ControlSet,
    ControlSignal,
    CostSpec,
    HistorySegment,
    LinearDelay,
    ProblemSpec,
    RunningCost,
    TerminalCost,
    TimeGrid,
)


def mittag_leffler(a, b, z):
    with mp.workdps(30):
        return float(mp.nsum(lambda k: mp.mpf(z) ** k / mp.gamma(a * k + b), [0, mp.inf]))


def forward_of(lin, alpha, grid, y0=None):
    n = lin.n
    y0 = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
    spec = ProblemSpec(alpha, grid, HistorySegment.constant(y0, 0.0, grid), lin,
                       CostSpec(TerminalCost.linear(np.ones(n)), RunningCost.zero(n, lin.r), alpha),
                       ControlSet.box(np.zeros(lin.r), np.zeros(lin.r)))
    return solve_fdde(spec, ControlSignal.constant(grid, np.zeros(lin.r))).states


@pytest.mark.parametrize("alpha", [0.3, 0.6])
def test_scalar_fundamental_matrix_is_mittag_leffler(alpha):
    """``F(t, tau) = Gamma(a) E_{a,a}(lam (t-tau)^a)`` and ``F1(t) = E_a(lam t^a)``."""
    lam = -1.2
    errs, errs1 = [], []
    for N in (100, 200):
        g = TimeGrid(1.0, 0.25, N)
        F = solve_F(N, np.array([[lam]]), np.zeros((1, 1)), alpha, g)
        exact = np.array([math.gamma(alpha) * mittag_leffler(alpha, alpha, lam * (1 - s) ** alpha)
                          for s in g.nodes])
        assert F.values[-1, 0, 0] == pytest.approx(1.0, abs=1e-12)
        errs.append(np.max(np.abs(F.values[:, 0, 0] - exact)))
        F1 = solve_F1(N, F, np.array([[lam]]), np.zeros((1, 1)), alpha, g)
        errs1.append(abs(F1[0, 0] - mittag_leffler(alpha, 1, lam)))
    assert errs[0] < 1e-2 and errs[1] < errs[0]
    assert errs1[0] < 2e-3 and errs1[1] < errs1[0]


def test_representation_with_time_dependent_coefficients():
    alpha = 0.5
    errs = []
    for N in (40, 80):
        g = TimeGrid(1.0, 0.25, N)
        lin = LinearDelay(1, 1, A0=lambda t: np.array([[-1.0 + 0.5 * t]]),
                          A1=lambda t: np.array([[0.7 * np.cos(t)]]), B=[[0.0]],
                          c=lambda t: np.array([1.0 + t]))
        rep = representation_solution(lin, lambda t: np.array([1.0 + t]), [0.0], alpha, g)
        errs.append(np.max(np.abs(rep.states - forward_of(lin, alpha, g))))
    assert errs[0] < 2e-3 and errs[1] < errs[0]


def test_representation_with_initial_state_and_no_delay():
    alpha, N = 0.6, 200
    g = TimeGrid(1.0, 0.25, N)
    A0 = np.array([[-0.4, 0.3], [0.2, -0.1]])
    forcing = np.tile([0.5, -0.2], (N + 1, 1))
    lin = LinearDelay(2, 1, A0=A0, c=[0.5, -0.2])
    rep = representation_solution(lin, forcing, [1.0, -1.0], alpha, g)
    assert np.max(np.abs(rep.states - forward_of(lin, alpha, g, [1.0, -1.0]))) < 1e-3


def test_representation_rejects_unsupported_inputs():
    g = TimeGrid(1.0, 0.25, 8)
    lin = LinearDelay(1, 1, A1=[[1.0]])
    zero = np.zeros((9, 1))
    with pytest.raises(TypeError):
        representation_solution(BilinearDelay(1, 1, A=[[1.0]], B=[[[0.0]]]), zero, [0.0], 0.5, g)
    with pytest.raises(ValueError):
        representation_solution(lin, zero, [0.0], 0.5, g, history=HistorySegment.constant([0.0], 1.0, g))
    with pytest.raises(ValueError):
        representation_solution(lin, zero, [1.0], 0.5, g)
    with pytest.raises(ValueError):
        representation_solution(lin, np.zeros((5, 1)), [0.0], 0.5, g)
    with pytest.raises(ValueError):
        solve_F(9, np.zeros((1, 1)), np.zeros((1, 1)), 0.5, g)


def test_fundamental_matrix_csv(tmp_path):
    g = TimeGrid(1.0, 0.25, 8)
    F = solve_F(8, np.zeros((2, 2)), np.eye(2), 0.5, g)
    path = tmp_path / "F.csv"
    F.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# fracdelay fundamental matrix v1")
    assert lines[1] == "tau,F_11,F_12,F_21,F_22"
    assert len(lines) == 2 + 9
    # without a local coefficient F = E within one delay of t
    np.testing.assert_allclose(F.values[6:], np.tile(np.eye(2), (3, 1, 1)), atol=1e-14)
