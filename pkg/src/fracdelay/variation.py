"""Spike (needle) variations measured by re-simulation.

A spike replaces the control by ``v`` on ``[theta, theta + eps)``. The cost
increment is compared with its expansion

    dJ = -(1/Gamma(a)) int_theta^{theta+eps} (T-t)^(a-1) Delta_v H(t) dt
         - eps^(a+1) / (Gamma(a) Gamma(a+1)) * B(theta) + o(eps^(a+1)),

    B(theta) = (T-theta)^(a-1) <Delta_v H_y(theta), Delta_v f(theta)>
               + (T-theta-h)^(a-1) <Delta_v H_yh(theta+h), Delta_v f(theta)>,

where every ``Delta_v`` is evaluated along the base process.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from fracdelay.adjoint import hamiltonian, solve_adjoint
from fracdelay.conditions import Process, second_order_expression
from fracdelay.forward import Trajectory, evaluate_cost, solve_fdde
from fracdelay.fracquad import gamma_fn, product_cell_weights
from fracdelay.problem import CSV_VERSION, ControlSignal, ProblemSpec, TimeGrid, spike_control


# {{{ ladders


def snap_ladder(grid: TimeGrid, eps_values) -> list[float]:
    """Round spike widths to whole cells; the result must decrease strictly."""
    out = []
    for eps in eps_values:
        k = int(round(float(eps) / grid.dt))
        if k < 1:
            raise ValueError(f"spike width {eps} is shorter than one cell (dt={grid.dt})")
        out.append(k * grid.dt)
    if any(b >= a for a, b in zip(out, out[1:])):
        raise ValueError(f"spike widths must decrease strictly after snapping, got {out}")
    return out


def halving_ladder(grid: TimeGrid, start: float, count: int) -> list[float]:
    """``start, start/2, ...`` (*count* entries) snapped to the grid."""
    return snap_ladder(grid, [start / 2**k for k in range(count)])


def parse_ladder(text: str) -> list[float]:
    """Parse ``"0.1/0.05/0.025"`` (``,`` also accepted as separator)."""
    parts = [p for p in text.replace(",", "/").split("/") if p.strip()]
    if not parts:
        raise ValueError("empty spike ladder")
    return [float(p) for p in parts]


# }}}


# {{{ spike experiment


@dataclass(frozen=True)
class SpikeRecord:
    eps: float
    dJ_actual: float
    dJ_first: float
    dJ_second: float

    @property
    def residual(self) -> float:
        return self.dJ_actual - self.dJ_first - self.dJ_second


@dataclass(frozen=True, eq=False)
class SpikeExperiment:
    theta: float
    v: np.ndarray
    alpha: float
    records: tuple[SpikeRecord, ...]
    companion: bool = False

    @property
    def eps_ladder(self) -> list[float]:
        return [r.eps for r in self.records]

    def residual_ratios(self) -> np.ndarray:
        """``(dJ_actual - dJ_first - dJ_second) / eps**(1 + alpha)``."""
        return np.array([r.residual / r.eps ** (1.0 + self.alpha) for r in self.records])

    def scaled_actual(self) -> np.ndarray:
        """``dJ_actual / eps**(1 + alpha)``."""
        return np.array([r.dJ_actual / r.eps ** (1.0 + self.alpha) for r in self.records])

    def first_order_ratios(self) -> np.ndarray:
        """``dJ_actual / dJ_first`` (NaN where the prediction vanishes)."""
        return np.array([r.dJ_actual / r.dJ_first if r.dJ_first != 0 else math.nan
                         for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# fracdelay spike v{CSV_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["eps", "dJ_actual", "dJ_first", "dJ_second", "residual_ratio"])
            for rec, ratio in zip(self.records, self.residual_ratios()):
                w.writerow([f"{x:.12g}" for x in (rec.eps, rec.dJ_actual, rec.dJ_first,
                                                   rec.dJ_second, ratio)])


def _base_process(spec: ProblemSpec, base_u: ControlSignal, base: Trajectory | None) -> Process:
    traj = solve_fdde(spec, base_u) if base is None else base
    return Process(spec, traj, base_u, solve_adjoint(spec, traj, base_u))


def first_order_prediction(process: Process, i0: int, i1: int, v) -> float:
    """``-(1/Gamma(a)) int_{t_i0}^{t_i1} (T-t)^(a-1) Delta_v H dt`` by product integration.

    ``Delta_v H`` is interpolated linearly on each cell between its values at
    the two nodes, both taken with the cell's base control.
    """
    spec = process.spec
    grid, alpha, N = spec.grid, spec.alpha, spec.grid.N
    left, right = product_cell_weights(alpha, N)
    total = 0.0
    for j in range(i0, i1):
        uj = process.u.values[j]
        a = _delta_h_with(process, j, v, uj)
        b = _delta_h_with(process, j + 1, v, uj)
        k = N - j
        total += left[k] * a + right[k] * b
    return float(-grid.dt**alpha * total / gamma_fn(alpha))


def _delta_h_with(process: Process, i: int, v, ui) -> float:
    t, y, yh, _, psi = process.node(i)
    spec = process.spec
    return float(hamiltonian(spec, t, y, yh, np.asarray(v, dtype=float), psi)
                 - hamiltonian(spec, t, y, yh, ui, psi))


def second_order_prediction(process: Process, i0: int, eps: float, v) -> float:
    """``-eps^(a+1) / (Gamma(a) Gamma(a+1)) * S(theta, v)`` with ``theta = t_i0``."""
    a = process.spec.alpha
    S = float(second_order_expression(process, i0, np.asarray(v, dtype=float)))
    return -(eps ** (a + 1.0)) / (gamma_fn(a) * gamma_fn(a + 1.0)) * S


def run_spike(spec: ProblemSpec, base_u: ControlSignal, theta: float, v, eps_ladder,
              *, companion: bool = False, base: Trajectory | None = None) -> SpikeExperiment:
    """Re-solve the state for each spike width and record the cost increments.

    With ``companion=True`` the spike is repeated on ``[theta + h, theta + h + eps)``.
    The forward re-solves reuse the base solution up to ``theta``.
    """
    grid = spec.grid
    v = np.atleast_1d(np.asarray(v, dtype=float))
    ladder = snap_ladder(grid, eps_ladder)
    i0 = grid.index(theta, "spike start")
    shift = grid.h if companion else 0.0
    if i0 + round((ladder[0] + shift) / grid.dt) >= grid.N:
        raise ValueError(f"spike [{theta}, {theta + ladder[0] + shift}) must end before T={grid.T}")
    process = _base_process(spec, base_u, base)
    J0 = evaluate_cost(spec, process.traj, base_u)

    records = []
    for eps in ladder:
        k = int(round(eps / grid.dt))
        u = spike_control(base_u, theta, eps, v, spec.controls)
        dJ1 = first_order_prediction(process, i0, i0 + k, v)
        if companion:
            u = spike_control(u, theta + grid.h, eps, v, spec.controls)
            dJ1 += first_order_prediction(process, i0 + grid.m, i0 + grid.m + k, v)
        if np.array_equal(u.values, base_u.values):
            records.append(SpikeRecord(eps, 0.0, 0.0, 0.0))
            continue
        traj = solve_fdde(spec, u, reuse=process.traj, reuse_upto=i0)
        dJ = evaluate_cost(spec, traj, u) - J0
        records.append(SpikeRecord(eps, dJ, dJ1, second_order_prediction(process, i0, eps, v)))
    return SpikeExperiment(theta, v, spec.alpha, tuple(records), companion)


# }}}


# {{{ trajectory increment


@dataclass(frozen=True)
class ProbeRecord:
    eps: float
    max_norm_dy: float
    bound_ratio: float
    local_max: float
    local_ratio: float


def gronwall_probe(spec: ProblemSpec, base_u: ControlSignal, theta: float, v, eps_ladder,
                   base: Trajectory | None = None) -> list[ProbeRecord]:
    """Size of the state increment caused by a spike.

    ``bound_ratio`` is ``max_t |dy| / eps`` over the whole grid; ``local_max``
    is ``max |dy|`` on ``(theta, theta + eps]`` and ``local_ratio`` the largest
    value of ``|dy(t)| / (t - theta)**alpha`` there.
    """
    grid = spec.grid
    ladder = snap_ladder(grid, eps_ladder)
    i0 = grid.index(theta, "spike start")
    traj0 = solve_fdde(spec, base_u) if base is None else base
    out = []
    for eps in ladder:
        k = int(round(eps / grid.dt))
        u = spike_control(base_u, theta, eps, v, spec.controls)
        traj = solve_fdde(spec, u, reuse=traj0, reuse_upto=i0)
        dy = np.max(np.abs(traj.states - traj0.states), axis=1)
        local = dy[i0 + 1 : i0 + k + 1]
        gaps = (grid.nodes[i0 + 1 : i0 + k + 1] - theta) ** spec.alpha
        out.append(ProbeRecord(eps, float(dy.max()), float(dy.max() / eps),
                               float(local.max()), float(np.max(local / gaps))))
    return out


def fit_exponent(eps, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(eps)``."""
    slope, _ = np.polyfit(np.log(np.asarray(eps, dtype=float)),
                          np.log(np.asarray(values, dtype=float)), 1)
    return float(slope)


# }}}


# {{{ Lebesgue-point asymptotics


@dataclass(frozen=True)
class LebesgueRecord:
    eps: float
    integral: float
    leading: float

    @property
    def ratio(self) -> float:
        return self.integral / self.leading if self.leading != 0 else math.nan


def lebesgue_asymptotic_check(a_values, theta: float, alpha: float, T: float, eps_ladder,
                              nodes=None) -> list[LebesgueRecord]:
    """Compare ``int_theta^{theta+eps} (T-t)^(a-1) (t-theta)^a a(t) dt`` with
    its leading term ``(T-theta)^(a-1) a(theta) eps^(a+1) / (a+1)``.

    *a_values* is a callable, or an array of samples at *nodes* that is
    interpolated linearly. The integral uses adaptive quadrature with the
    algebraic weight ``(t - theta)**alpha``.
    """
    if callable(a_values):
        a = a_values
    else:
        if nodes is None:
            raise ValueError("sampled a_values need their nodes")
        xs, ys = np.asarray(nodes, dtype=float), np.asarray(a_values, dtype=float)
        def a(t):
            return np.interp(t, xs, ys)
    out = []
    for eps in eps_ladder:
        if not theta + eps < T:
            raise ValueError(f"theta + eps = {theta + eps} must stay below T={T}")
        val, _ = integrate.quad(lambda t: (T - t) ** (alpha - 1.0) * a(t), theta, theta + eps,
                                weight="alg", wvar=(alpha, 0.0), epsabs=0.0, epsrel=1e-12,
                                limit=200)
        lead = (T - theta) ** (alpha - 1.0) * float(a(theta)) * eps ** (alpha + 1.0) / (alpha + 1.0)
        out.append(LebesgueRecord(float(eps), float(val), float(lead)))
    return out


# }}}
