"""Pointwise screening of first- and second-order necessary conditions.

Along a process ``(y, u, psi)`` every check is evaluated at the grid nodes,
with the process control read as the right limit ``u(t_i)``. For a quantity
``g`` in ``{H, H_y, H_yh, f}``

    Delta_v g(t) = g(t, y(t), y(t-h), v, psi(t)) - g(t, y(t), y(t-h), u(t), psi(t)).

The maximum condition asks ``Delta_v H(t) <= 0`` for all admissible ``v``. A
control with ``Delta_v H == 0`` is singular; it must then satisfy

    S(t, v) = (T-t)^(a-1) <Delta_v H_y(t), Delta_v f(t)>
              + (T-t-h)^(a-1) <Delta_v H_yh(t+h), Delta_v f(t)> <= 0,

where ``Delta_v H_yh(t+h)`` swaps the control at ``t + h`` for ``v``. The
delayed term is dropped when ``t + h >= T``, since ``psi`` vanishes there.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import optimize

from fracdelay.adjoint import AdjointPath, hamiltonian, hamiltonian_y, hamiltonian_yh
from fracdelay.forward import Trajectory
from fracdelay.problem import CSV_VERSION, ControlSignal, ProblemSpec

#: Exit code of a candidate that passes every screen.
PASSED = 0
#: Exit code of a candidate rejected by a necessary condition.
SCREENED_OUT = 1

REASON_FIRST_ORDER = "first-order maximum condition violated"
REASON_SECOND_ORDER = "second-order condition violated on singular control"


# {{{ process and increments


@dataclass(frozen=True, eq=False)
class Process:
    """An admissible process: problem, state, control and adjoint."""

    spec: ProblemSpec
    traj: Trajectory
    u: ControlSignal
    psi: AdjointPath
    delayed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "delayed", self.traj.delayed_states())

    def node(self, i: int):
        """``(t, y, y_h, u, psi)`` at node *i*."""
        return (self.spec.grid.nodes[i], self.traj.states[i], self.delayed[i],
                self.u.at_node(i), self.psi.at(i))


_QUANTITIES: dict[str, Callable] = {
    "H": lambda spec, t, y, yh, w, psi: hamiltonian(spec, t, y, yh, w, psi),
    "H_y": lambda spec, t, y, yh, w, psi: hamiltonian_y(spec, t, y, yh, w, psi),
    "H_yh": lambda spec, t, y, yh, w, psi: hamiltonian_yh(spec, t, y, yh, w, psi),
    "f": lambda spec, t, y, yh, w, psi: spec.dynamics.f(t, y, yh, w),
}


def delta_v(g: str, i: int, v, process: Process) -> np.ndarray:
    """``Delta_v g(t_i)`` for ``g`` in ``{"H", "H_y", "H_yh", "f"}``.

    *v* is a control vector or a batch of shape ``(k, r)``.
    """
    if g not in _QUANTITIES:
        raise ValueError(f"unknown quantity {g!r}; choose from {sorted(_QUANTITIES)}")
    fn = _QUANTITIES[g]
    t, y, yh, ui, psi = process.node(i)
    v = np.asarray(v, dtype=float)
    return fn(process.spec, t, y, yh, v, psi) - fn(process.spec, t, y, yh, ui, psi)


# }}}


# {{{ maximization over the control box


def _affine(values: np.ndarray) -> bool:
    second = np.abs(np.diff(values, 2))
    return second.size == 0 or second.max() <= 1e-12 * (1.0 + np.abs(values).max())


def maximize_on_box(fun, lower, upper, start, points: int = 201, rounds: int = 20):
    """Maximize *fun* (batched: ``(k, r) -> (k,)``) over the box.

    A scalar control is scanned on *points* equispaced values and refined by
    bounded Brent/golden-section search on the best bracket. For ``r > 1`` the
    best vertex (or *start*) seeds coordinate sweeps of *points* values each.
    Returns ``(value, argmax)``; *start* is always a candidate, so the value is
    never below ``fun(start)``.
    """
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    start = np.asarray(start, dtype=float)
    r = lower.size

    def line(base, k):
        xs = np.linspace(lower[k], upper[k], points)
        cand = np.repeat(base[None, :], points, axis=0)
        cand[:, k] = xs
        return xs, cand, np.asarray(fun(cand), dtype=float)

    best_x = start.copy()
    best = float(fun(start[None, :])[0])
    if r == 1:
        xs, cand, vals = line(best_x, 0)
        b = int(np.argmax(vals))
        if vals[b] > best:
            best, best_x = float(vals[b]), cand[b].copy()
        if points > 2 and not _affine(vals):
            lo, hi = xs[max(b - 1, 0)], xs[min(b + 1, points - 1)]
            res = optimize.minimize_scalar(lambda s: -fun(np.array([[s]]))[0], bounds=(lo, hi),
                                           method="bounded", options={"xatol": 1e-12})
            if -res.fun > best:
                best, best_x = float(-res.fun), np.array([res.x])
        return best, best_x

    if r <= 10:
        corners = np.array(np.meshgrid(*zip(lower, upper), indexing="ij")).reshape(r, -1).T
        vals = np.asarray(fun(corners), dtype=float)
        b = int(np.argmax(vals))
        if vals[b] > best:
            best, best_x = float(vals[b]), corners[b].copy()
    for _ in range(rounds):
        before = best
        for k in range(r):
            _, cand, vals = line(best_x, k)
            b = int(np.argmax(vals))
            if vals[b] > best:
                best, best_x = float(vals[b]), cand[b].copy()
        if best - before <= 1e-14 * (1.0 + abs(best)):
            break
    return best, best_x


# }}}


# {{{ report


@dataclass(frozen=True, eq=False)
class ConditionReport:
    """Per-node screening records and verdicts.

    Each check fills its own fields; :meth:`merged` combines partial reports.
    ``S_max`` is NaN at nodes excluded from the second-order scan (``t = T``).
    """

    t: np.ndarray
    gap: np.ndarray | None = None
    argmax_v: np.ndarray | None = None
    dH_max: np.ndarray | None = None
    singular: np.ndarray | None = None
    S_max: np.ndarray | None = None
    S_argmax: np.ndarray | None = None
    pmp_satisfied: bool | None = None
    singular_everywhere: bool | None = None
    second_order_satisfied: bool | None = None
    second_order_advisory: bool = False
    tolerances: dict = field(default_factory=dict)

    def merged(self, other: ConditionReport) -> ConditionReport:
        changes = {
            name: getattr(other, name)
            for name in ("gap", "argmax_v", "dH_max", "singular", "S_max", "S_argmax",
                         "pmp_satisfied", "singular_everywhere", "second_order_satisfied")
            if getattr(other, name) is not None
        }
        changes["second_order_advisory"] = self.second_order_advisory or other.second_order_advisory
        changes["tolerances"] = {**self.tolerances, **other.tolerances}
        return replace(self, **changes)

    def verdict(self) -> tuple[int, str]:
        """``(exit code, reason)`` of the screening."""
        if self.pmp_satisfied is False:
            return SCREENED_OUT, REASON_FIRST_ORDER
        if self.singular_everywhere and self.second_order_satisfied is False:
            return SCREENED_OUT, REASON_SECOND_ORDER
        return PASSED, "all necessary conditions pass"

    def summary(self) -> dict:
        code, reason = self.verdict()
        return {
            "pmp_satisfied": self.pmp_satisfied,
            "singular_everywhere": self.singular_everywhere,
            "second_order_satisfied": self.second_order_satisfied,
            "second_order_advisory": self.second_order_advisory,
            "max_gap": None if self.gap is None else float(np.max(self.gap)),
            "max_S": None if self.S_max is None else float(np.nanmax(self.S_max)),
            "exit_code": code,
            "reason": reason,
            **{k: float(v) for k, v in self.tolerances.items()},
        }

    def to_csv(self, path) -> None:
        n = self.t.size

        def col(a, k=None):
            if a is None:
                return [""] * n
            a = a if k is None else a[:, k]
            return [f"{x:.12g}" if a.dtype.kind == "f" else str(int(x)) for x in a]

        def vec(name, a):
            r = 1 if a is None else a.shape[1]
            heads = [name] if r == 1 else [f"{name}_{k + 1}" for k in range(r)]
            return heads, [col(a, k) if a is not None else col(None) for k in range(r)]

        gh, gv = vec("argmax_v", self.argmax_v)
        sh, sv = vec("S_argmax", self.S_argmax)
        header = ["t", "gap", *gh, "singular", "S_max", *sh]
        columns = [col(self.t), col(self.gap), *gv, col(self.singular), col(self.S_max), *sv]
        with open(path, "w", newline="") as fh:
            fh.write(f"# fracdelay conditions v{CSV_VERSION}\n")
            for key, value in self.summary().items():
                if isinstance(value, float):
                    value = f"{value:.12g}"
                fh.write(f"# {key}: {value}\n")
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(zip(*columns))


# }}}


# {{{ checks


def default_tolerances(process: Process) -> dict[str, float]:
    """``tol_pmp = tol_sing = 1e-6 (1 + max |H|)`` and ``tol_2nd = 1e-8``."""
    N = process.spec.grid.N
    H = np.array([hamiltonian(process.spec, *process.node(i)) for i in range(N + 1)])
    scale = 1e-6 * (1.0 + float(np.max(np.abs(H))))
    return {"tol_pmp": scale, "tol_sing": scale, "tol_2nd": 1e-8}


def check_pmp(process: Process, tol_pmp: float | None = None, points: int = 201) -> ConditionReport:
    """Maximum-condition gap ``max_v H - H(u)`` at every node."""
    spec = process.spec
    N, lo, hi = spec.grid.N, spec.controls.lower, spec.controls.upper
    if tol_pmp is None:
        tol_pmp = default_tolerances(process)["tol_pmp"]
    gap = np.zeros(N + 1)
    arg = np.zeros((N + 1, spec.r))
    for i in range(N + 1):
        t, y, yh, ui, psi = process.node(i)
        H0 = hamiltonian(spec, t, y, yh, ui, psi)
        best, x = maximize_on_box(lambda v: hamiltonian(spec, t, y, yh, v, psi),
                                  lo, hi, ui, points)
        gap[i], arg[i] = max(best - H0, 0.0), x
    return ConditionReport(spec.grid.nodes, gap=gap, argmax_v=arg,
                           pmp_satisfied=bool(np.all(gap <= tol_pmp)),
                           tolerances={"tol_pmp": tol_pmp})


def check_singular(process: Process, tol_sing: float | None = None, points: int = 201) -> ConditionReport:
    """Flag nodes where ``max_v |Delta_v H| <= tol_sing``."""
    spec = process.spec
    N, lo, hi = spec.grid.N, spec.controls.lower, spec.controls.upper
    if tol_sing is None:
        tol_sing = default_tolerances(process)["tol_sing"]
    dH = np.zeros(N + 1)
    for i in range(N + 1):
        dH[i], _ = maximize_on_box(lambda v: np.abs(delta_v("H", i, v, process)),
                                   lo, hi, process.u.at_node(i), points)
    singular = dH <= tol_sing
    return ConditionReport(spec.grid.nodes, dH_max=dH, singular=singular,
                           singular_everywhere=bool(np.all(singular)),
                           tolerances={"tol_sing": tol_sing})


def second_order_expression(process: Process, i: int, v) -> np.ndarray:
    """``S(t_i, v)`` for a control or a batch of controls; requires ``t_i < T``."""
    spec = process.spec
    grid, alpha = spec.grid, spec.alpha
    N, m = grid.N, grid.m
    if not 0 <= i < N:
        raise ValueError(f"second-order expression needs a node before T, got index {i}")
    v = np.asarray(v, dtype=float)
    df = delta_v("f", i, v, process)
    S = (grid.T - grid.nodes[i]) ** (alpha - 1.0) * np.sum(delta_v("H_y", i, v, process) * df, axis=-1)
    j = i + m
    if j < N:
        S = S + (grid.T - grid.nodes[j]) ** (alpha - 1.0) * np.sum(
            delta_v("H_yh", j, v, process) * df, axis=-1)
    return S


def check_second_order(process: Process, tol_2nd: float = 1e-8, points: int = 201,
                       singular: ConditionReport | None = None) -> ConditionReport:
    """Maximize ``S(t, v)`` over the control box at every node before ``T``.

    The verdict is labelled advisory when the process is not singular
    everywhere (pass *singular* to reuse an existing singularity report).
    """
    spec = process.spec
    N, lo, hi = spec.grid.N, spec.controls.lower, spec.controls.upper
    S = np.full(N + 1, np.nan)
    arg = np.full((N + 1, spec.r), np.nan)
    for i in range(N):
        S[i], arg[i] = maximize_on_box(lambda v: second_order_expression(process, i, v),
                                       lo, hi, process.u.at_node(i), points)
    if singular is None:
        singular = check_singular(process, points=points)
    return ConditionReport(spec.grid.nodes, S_max=S, S_argmax=arg,
                           second_order_satisfied=bool(np.nanmax(S) <= tol_2nd),
                           second_order_advisory=not singular.singular_everywhere,
                           tolerances={"tol_2nd": tol_2nd})


def check_conditions(process: Process, tol_pmp: float | None = None, tol_sing: float | None = None,
                     tol_2nd: float | None = None, points: int = 201) -> ConditionReport:
    """Run the first-order, singularity and second-order screens."""
    defaults = default_tolerances(process)
    tol_pmp = defaults["tol_pmp"] if tol_pmp is None else tol_pmp
    tol_sing = defaults["tol_sing"] if tol_sing is None else tol_sing
    tol_2nd = defaults["tol_2nd"] if tol_2nd is None else tol_2nd
    first = check_pmp(process, tol_pmp, points)
    sing = check_singular(process, tol_sing, points)
    second = check_second_order(process, tol_2nd, points, singular=sing)
    return first.merged(sing).merged(second)


# }}}
