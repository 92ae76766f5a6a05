"""Data model of a fractional delay optimal control problem.

The state equation is the Caputo system

    D^alpha y(t) = f(t, y(t), y(t - h), u(t)),   y(0) = y0,   y = phi on [-h, 0),

and the cost is ``Phi(y(T)) + I^beta[f0](T)``. Controls are piecewise constant
on the cells of a uniform grid whose step divides the delay.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from fracdelay.fracquad import check_order

CONFIG_VERSION = 1
CSV_VERSION = 1


class ConfigError(ValueError):
    """Invalid problem configuration; *key* names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# {{{ grid and history


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, T]`` with ``h = m * dt`` for an integer ``m >= 1``."""

    T: float
    h: float
    N: int

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ConfigError("T", f"horizon must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError("N", f"number of steps must be a positive integer, got {self.N}")
        if not 0 < self.h < self.T:
            raise ConfigError("h", f"delay must satisfy 0 < h < T, got h={self.h}, T={self.T}")
        ratio = self.h * self.N / self.T
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(
                "h", f"delay not grid-aligned: h/dt = {ratio:.6g} is not an integer"
            )

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def m(self) -> int:
        """Delay measured in steps."""
        return int(round(self.h * self.N / self.T))

    @property
    def nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    def index(self, t: float, what: str = "time") -> int:
        """Grid index of *t*; raises if *t* is not a node."""
        k = t / self.dt
        i = int(round(k))
        if abs(k - i) > 1e-8 or not 0 <= i <= self.N:
            raise ValueError(f"{what} {t} is not a node of the grid (dt={self.dt})")
        return i


@dataclass(frozen=True, eq=False)
class HistorySegment:
    """Initial state ``y0`` and the history sampled at ``t_i - h`` for ``i < m``.

    ``end`` is the left limit of the history at ``t = 0``; it may differ from
    ``y0``. When omitted the history is taken to join ``y0`` continuously.
    """

    y0: np.ndarray
    samples: np.ndarray
    end: np.ndarray | None = None

    @classmethod
    def constant(cls, y0, value, grid: TimeGrid) -> HistorySegment:
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        value = np.broadcast_to(np.asarray(value, dtype=float), y0.shape)
        return cls(y0, np.tile(value, (grid.m, 1)), value.copy())

    @classmethod
    def from_function(cls, y0, phi: Callable[[float], Any], grid: TimeGrid) -> HistorySegment:
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        times = grid.nodes[: grid.m] - grid.h
        samples = np.array([np.broadcast_to(phi(s), y0.shape) for s in times], dtype=float)
        end = np.array(np.broadcast_to(phi(0.0), y0.shape), dtype=float)
        return cls(y0, samples.reshape(grid.m, y0.size), end)

    @property
    def left_limit(self) -> np.ndarray:
        """History value approaching ``t = 0`` from below."""
        return self.y0 if self.end is None else self.end

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.samples) or np.any(self.left_limit))

    def constant_value(self) -> np.ndarray | None:
        if np.all(self.samples == self.samples[0]) and np.all(self.left_limit == self.samples[0]):
            return self.samples[0].copy()
        return None


# }}}


# {{{ dynamics


def _coefficient(value, shape: tuple[int, ...], key: str):
    """Normalize a constant or time-dependent coefficient to a callable."""
    if callable(value):
        return value, None
    arr = np.asarray(value, dtype=float)
    if arr.size != math.prod(shape):
        raise ConfigError(key, f"expected {math.prod(shape)} entries for shape {shape}, got {arr.size}")
    arr = arr.reshape(shape)
    arr.setflags(write=False)
    return (lambda t, _a=arr: _a), arr


class Dynamics:
    """Right-hand side ``f(t, y, y_h, u)`` with its first partials.

    The control argument may carry a leading batch axis, shape ``(k, r)``;
    results then carry the same leading axis.
    """

    kind: str = "abstract"
    n: int
    r: int

    def f(self, t, y, yh, u): raise NotImplementedError
    def f_y(self, t, y, yh, u): raise NotImplementedError
    def f_yh(self, t, y, yh, u): raise NotImplementedError
    def f_u(self, t, y, yh, u): raise NotImplementedError

    def config_items(self) -> dict[str, Any]:
        raise ConfigError("dynamics", f"{self.kind} dynamics cannot be written to a config file")


def _batch(u, M):
    u = np.asarray(u, dtype=float)
    return np.broadcast_to(M, u.shape[:-1] + M.shape)


class LinearDelay(Dynamics):
    """``f = A0(t) y + A1(t) y_h + B(t) u + c(t)``."""

    kind = "linear_delay"

    def __init__(self, n: int, r: int, A0=None, A1=None, B=None, c=None):
        self.n, self.r = n, r
        self._A0, self.A0 = _coefficient(np.zeros((n, n)) if A0 is None else A0, (n, n), "dynamics.A0")
        self._A1, self.A1 = _coefficient(np.zeros((n, n)) if A1 is None else A1, (n, n), "dynamics.A1")
        self._B, self.B = _coefficient(np.zeros((n, r)) if B is None else B, (n, r), "dynamics.B")
        self._c, self.c = _coefficient(np.zeros(n) if c is None else c, (n,), "dynamics.c")

    def f(self, t, y, yh, u):
        u = np.asarray(u, dtype=float)
        return self._A0(t) @ y + self._A1(t) @ yh + self._c(t) + u @ self._B(t).T

    def f_y(self, t, y, yh, u):
        return _batch(u, np.asarray(self._A0(t), dtype=float))

    def f_yh(self, t, y, yh, u):
        return _batch(u, np.asarray(self._A1(t), dtype=float))

    def f_u(self, t, y, yh, u):
        return _batch(u, np.asarray(self._B(t), dtype=float))

    def config_items(self) -> dict[str, Any]:
        coeffs = {"A0": self.A0, "A1": self.A1, "B": self.B, "c": self.c}
        missing = [k for k, v in coeffs.items() if v is None]
        if missing:
            raise ConfigError("dynamics." + missing[0], "time-dependent coefficient cannot be written")
        out: dict[str, Any] = {"dynamics.kind": self.kind}
        out.update({f"dynamics.{k}": v.ravel().tolist() for k, v in coeffs.items()})
        return out


class BilinearDelay(Dynamics):
    """``f = (A + sum_k y_h[k] B[k]) u + A0 y + A1 y_h``.

    *A* is ``n x r`` and *B* stacks one ``n x r`` matrix per state component.
    """

    kind = "bilinear_delay"

    def __init__(self, n: int, r: int, A, B, A0=None, A1=None):
        self.n, self.r = n, r
        _, self.A = _coefficient(A, (n, r), "dynamics.A")
        _, self.B = _coefficient(B, (n, n, r), "dynamics.B")
        _, self.A0 = _coefficient(np.zeros((n, n)) if A0 is None else A0, (n, n), "dynamics.A0")
        _, self.A1 = _coefficient(np.zeros((n, n)) if A1 is None else A1, (n, n), "dynamics.A1")

    def _gain(self, yh):
        return self.A + np.tensordot(np.asarray(yh, dtype=float), self.B, axes=(0, 0))

    def f(self, t, y, yh, u):
        u = np.asarray(u, dtype=float)
        return u @ self._gain(yh).T + self.A0 @ y + self.A1 @ yh

    def f_y(self, t, y, yh, u):
        return _batch(u, self.A0)

    def f_yh(self, t, y, yh, u):
        u = np.asarray(u, dtype=float)
        # column k is B[k] u, plus the linear part
        return np.einsum("kac,...c->...ak", self.B, u) + self.A1

    def f_u(self, t, y, yh, u):
        return _batch(u, self._gain(yh))

    def config_items(self) -> dict[str, Any]:
        return {
            "dynamics.kind": self.kind,
            "dynamics.A": self.A.ravel().tolist(),
            "dynamics.B": self.B.ravel().tolist(),
            "dynamics.A0": self.A0.ravel().tolist(),
            "dynamics.A1": self.A1.ravel().tolist(),
        }


class CallableDynamics(Dynamics):
    """Dynamics given by plain callables of a single control vector."""

    kind = "builtin"

    def __init__(self, n, r, f, f_y, f_yh, f_u, name: str | None = None):
        self.n, self.r, self.name = n, r, name
        self._fns = {"f": f, "f_y": f_y, "f_yh": f_yh, "f_u": f_u}

    def _eval(self, which, t, y, yh, u):
        fn = self._fns[which]
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return np.asarray(fn(t, y, yh, u), dtype=float)
        return np.stack([np.asarray(fn(t, y, yh, ui), dtype=float) for ui in u])

    def f(self, t, y, yh, u): return self._eval("f", t, y, yh, u)
    def f_y(self, t, y, yh, u): return self._eval("f_y", t, y, yh, u)
    def f_yh(self, t, y, yh, u): return self._eval("f_yh", t, y, yh, u)
    def f_u(self, t, y, yh, u): return self._eval("f_u", t, y, yh, u)

    def config_items(self) -> dict[str, Any]:
        if self.name not in BUILTIN_DYNAMICS:
            raise ConfigError("dynamics", "unnamed builtin dynamics cannot be written")
        return {"dynamics.kind": "builtin", "dynamics.name": self.name}


def _ex1_dynamics() -> LinearDelay:
    return LinearDelay(2, 1, A1=[[0.0, 1.0], [0.0, 0.0]], B=[[1.0], [1.0]])


def _ex2_dynamics() -> BilinearDelay:
    return BilinearDelay(2, 1, A=[[1.0], [0.0]], B=[[[0.0], [-1.0]], [[0.0], [0.0]]])


BUILTIN_DYNAMICS: dict[str, Callable[[], Dynamics]] = {
    "ex1": _ex1_dynamics,
    "ex2": _ex2_dynamics,
}


# }}}


# {{{ costs and controls


@dataclass(frozen=True, eq=False)
class TerminalCost:
    """``Phi(y) = coef . y + 0.5 y^T Q y``."""

    coef: np.ndarray
    Q: np.ndarray

    @classmethod
    def linear(cls, coef) -> TerminalCost:
        coef = np.asarray(coef, dtype=float)
        return cls(coef, np.zeros((coef.size, coef.size)))

    @classmethod
    def quadratic(cls, Q, coef=None) -> TerminalCost:
        Q = np.asarray(Q, dtype=float)
        Q = 0.5 * (Q + Q.T)
        return cls(np.zeros(Q.shape[0]) if coef is None else np.asarray(coef, dtype=float), Q)

    @property
    def kind(self) -> str:
        return "quadratic" if np.any(self.Q) else "linear"

    def value(self, y) -> float:
        return float(self.coef @ y + 0.5 * y @ self.Q @ y)

    def grad(self, y) -> np.ndarray:
        return self.coef + self.Q @ y

    def hessian(self, y) -> np.ndarray:
        return self.Q.copy()

    def scaled(self, c: float) -> TerminalCost:
        return TerminalCost(c * self.coef, c * self.Q)


@dataclass(frozen=True, eq=False)
class RunningCost:
    """``f0 = 0.5 y^T Qy y + 0.5 u^T Ru u``; both default to zero."""

    Qy: np.ndarray
    Ru: np.ndarray

    @classmethod
    def zero(cls, n: int, r: int) -> RunningCost:
        return cls(np.zeros((n, n)), np.zeros((r, r)))

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.Qy) or np.any(self.Ru))

    @property
    def kind(self) -> str:
        return "zero" if self.is_zero else "quadratic"

    def value(self, t, y, yh, u):
        u = np.asarray(u, dtype=float)
        return 0.5 * (y @ self.Qy @ y) + 0.5 * np.einsum("...i,ij,...j->...", u, self.Ru, u)

    def grad_y(self, t, y, yh, u):
        return _batch(u, self.Qy @ y)

    def grad_yh(self, t, y, yh, u):
        return _batch(u, np.zeros_like(y))

    def grad_u(self, t, y, yh, u):
        return np.asarray(u, dtype=float) @ self.Ru.T


def _fd_gradient_check(terminal: TerminalCost, n: int) -> None:
    rng = np.random.default_rng(0)
    for _ in range(3):
        y = rng.uniform(-1.0, 1.0, n)
        step = 1e-5
        fd = np.array([
            (terminal.value(y + step * e) - terminal.value(y - step * e)) / (2 * step)
            for e in np.eye(n)
        ])
        g = terminal.grad(y)
        if np.linalg.norm(fd - g) > 1e-6 * max(1.0, np.linalg.norm(g)):
            raise ConfigError("cost.terminal", "gradient does not match finite differences")


@dataclass(frozen=True, eq=False)
class CostSpec:
    terminal: TerminalCost
    running: RunningCost
    beta: float


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Box ``lower <= u <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        if self.lower.shape != self.upper.shape:
            raise ConfigError("control", "lower and upper bounds differ in length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ConfigError("control", "bounds must be finite (control set must be compact)")
        if np.any(self.lower > self.upper):
            raise ConfigError("control.lower", "lower > upper")

    @classmethod
    def box(cls, lower, upper) -> ControlSet:
        return cls(np.atleast_1d(np.asarray(lower, dtype=float)),
                   np.atleast_1d(np.asarray(upper, dtype=float)))

    @property
    def r(self) -> int:
        return self.lower.size

    @property
    def is_singleton(self) -> bool:
        return bool(np.all(self.lower == self.upper))

    def contains(self, u, atol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - atol) and np.all(u <= self.upper + atol))


# }}}


# {{{ controls


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Piecewise-constant control: ``values[i]`` holds on ``[t_i, t_{i+1})``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.N:
            raise ValueError(f"control needs shape (N, r) = ({self.grid.N}, r), got {self.values.shape}")

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> ControlSignal:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.N, 1)))

    @property
    def r(self) -> int:
        return self.values.shape[1]

    def at_node(self, i: int) -> np.ndarray:
        """Right-limit value at node *i*; the last cell at ``t_N``."""
        return self.values[min(i, self.grid.N - 1)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# fracdelay control v{CSV_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(["t_start"] + [f"u_{k + 1}" for k in range(self.r)])
            for t, row in zip(self.grid.nodes[:-1], self.values):
                w.writerow([f"{t:.12g}"] + [f"{x:.12g}" for x in row])

    @classmethod
    def from_csv(cls, path, grid: TimeGrid) -> ControlSignal:
        data = np.loadtxt(path, delimiter=",", comments="#", skiprows=2, ndmin=2)
        if data.shape[0] != grid.N:
            raise ValueError(f"{path}: expected {grid.N} control rows, got {data.shape[0]}")
        if not np.allclose(data[:, 0], grid.nodes[:-1], atol=1e-9):
            raise ValueError(f"{path}: t_start column does not match the grid")
        return cls(grid, data[:, 1:].copy())


def spike_control(base: ControlSignal, theta: float, eps: float, v, controls: ControlSet) -> ControlSignal:
    """Replace the control by *v* on ``[theta, theta + eps)``."""
    grid = base.grid
    if not eps > 0:
        raise ValueError(f"spike width must be positive, got {eps}")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (base.r,) or not controls.contains(v):
        raise ValueError(f"spike value {v} outside the control set")
    i0 = grid.index(theta, "spike start")
    i1 = grid.index(theta + eps, "spike end")
    if i1 >= grid.N:
        raise ValueError(f"spike [{theta}, {theta + eps}) must end before T={grid.T}")
    values = base.values.copy()
    values[i0:i1] = v
    return ControlSignal(grid, values)


# }}}


# {{{ problem


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    alpha: float
    grid: TimeGrid
    history: HistorySegment
    dynamics: Dynamics
    cost: CostSpec
    controls: ControlSet
    name: str = "problem"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        check_order(self.alpha)
        beta = float(self.cost.beta)
        if not 0 < beta:
            raise ConfigError("beta", f"beta must be positive, got {beta}")
        if beta < self.alpha:
            raise ConfigError("beta", f"beta must be >= alpha (beta={beta}, alpha={self.alpha})")
        n, r = self.dynamics.n, self.dynamics.r
        if self.history.y0.shape != (n,) or self.history.samples.shape != (self.grid.m, n):
            raise ConfigError("history", f"history/y0 inconsistent with n={n}")
        if self.controls.r != r:
            raise ConfigError("control", f"control bounds have length {self.controls.r}, expected r={r}")
        if self.cost.terminal.coef.shape != (n,) or self.cost.terminal.Q.shape != (n, n):
            raise ConfigError("cost.terminal", f"terminal cost inconsistent with n={n}")
        if self.cost.running.Qy.shape != (n, n) or self.cost.running.Ru.shape != (r, r):
            raise ConfigError("cost.running", "running cost inconsistent with n, r")
        _fd_gradient_check(self.cost.terminal, n)

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def r(self) -> int:
        return self.dynamics.r

    @property
    def beta(self) -> float:
        return self.cost.beta

    def check_control(self, u: ControlSignal) -> None:
        if u.grid != self.grid:
            raise ValueError("control lives on a different grid")
        if u.r != self.r:
            raise ValueError(f"control has {u.r} components, expected {self.r}")
        if not self.controls.contains(u.values):
            bad = np.flatnonzero(~np.all((u.values >= self.controls.lower - 1e-12)
                                         & (u.values <= self.controls.upper + 1e-12), axis=1))
            raise ValueError(f"control inadmissible on cell {bad[0]}")

    def replace(self, **changes) -> ProblemSpec:
        from dataclasses import replace
        return replace(self, **changes)


def builtin_example(name: str, alpha: float = 0.5, N: int = 200) -> ProblemSpec:
    """The two worked examples: T = 1, h = 1/2, zero history, |u| <= 1.

    ``ex1``: ``D^a y = A y(t-h) + B u`` with ``A = [[0,1],[0,0]]``,
    ``B = (1,1)^T`` and ``J = y_1(1)``.

    ``ex2``: ``D^a y = (A + B y_1(t-h)) u`` with ``A = (1,0)^T``,
    ``B = (0,-1)^T`` and ``J = y_2(1)``.
    """
    if name not in BUILTIN_DYNAMICS:
        raise ValueError(f"unknown example {name!r}; choose from {sorted(BUILTIN_DYNAMICS)}")
    if N % 2:
        raise ValueError(f"N must be even so that h = 1/2 lies on the grid, got {N}")
    grid = TimeGrid(1.0, 0.5, N)
    coef = [1.0, 0.0] if name == "ex1" else [0.0, 1.0]
    return ProblemSpec(
        alpha=float(alpha),
        grid=grid,
        history=HistorySegment.constant(np.zeros(2), 0.0, grid),
        dynamics=BUILTIN_DYNAMICS[name](),
        cost=CostSpec(TerminalCost.linear(coef), RunningCost.zero(2, 1), float(alpha)),
        controls=ControlSet.box([-1.0], [1.0]),
        name=name,
    )


# }}}


# {{{ config files

_REQUIRED = ("alpha", "T", "h", "N", "n", "r", "dynamics.kind", "cost.terminal",
             "control.lower", "control.upper")
_KNOWN = set(_REQUIRED) | {
    "format_version", "name", "beta", "y0", "history",
    "dynamics.A0", "dynamics.A1", "dynamics.B", "dynamics.c", "dynamics.A", "dynamics.name",
    "cost.coef", "cost.Q", "cost.running", "cost.Qy", "cost.Ru",
}


def _flatten(mapping: dict, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in mapping.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def _vector(d: dict, key: str, size: int, default=None) -> np.ndarray:
    if key not in d:
        if default is None:
            raise ConfigError(key, "missing")
        return np.full(size, float(default))
    arr = np.atleast_1d(np.asarray(d[key], dtype=float)).ravel()
    if arr.size == 1 and size > 1:
        arr = np.full(size, arr[0])
    if arr.size != size:
        raise ConfigError(key, f"expected {size} entries, got {arr.size}")
    return arr


def _matrix(d: dict, key: str, shape: tuple[int, ...]):
    if key not in d:
        return None
    try:
        arr = np.asarray(d[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"not a numeric matrix ({exc})") from None
    if arr.size != math.prod(shape):
        raise ConfigError(key, f"expected {math.prod(shape)} entries for shape {shape}, got {arr.size}")
    return arr.reshape(shape)


def problem_from_mapping(raw: dict) -> ProblemSpec:
    """Build a validated :class:`ProblemSpec` from a (possibly nested) mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping of keys to values")
    d = _flatten(raw)
    unknown = sorted(set(d) - _KNOWN)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in _REQUIRED:
        if key not in d:
            raise ConfigError(key, "missing")
    version = d.get("format_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError("format_version", f"unsupported version {version}")

    try:
        n, r, N = int(d["n"]), int(d["r"]), int(d["N"])
        alpha, T, h = float(d["alpha"]), float(d["T"]), float(d["h"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("<scalars>", str(exc)) from None
    try:
        check_order(alpha)
    except ValueError as exc:
        raise ConfigError("alpha", str(exc)) from None
    beta = float(d.get("beta", alpha))
    if beta < alpha:
        raise ConfigError("beta", f"beta must be >= alpha (beta={beta}, alpha={alpha})")
    grid = TimeGrid(T, h, N)

    kind = d["dynamics.kind"]
    if kind == "linear_delay":
        dyn: Dynamics = LinearDelay(
            n, r,
            A0=_matrix(d, "dynamics.A0", (n, n)), A1=_matrix(d, "dynamics.A1", (n, n)),
            B=_matrix(d, "dynamics.B", (n, r)), c=_matrix(d, "dynamics.c", (n,)),
        )
    elif kind == "bilinear_delay":
        for key in ("dynamics.A", "dynamics.B"):
            if key not in d:
                raise ConfigError(key, "missing")
        dyn = BilinearDelay(
            n, r, A=_matrix(d, "dynamics.A", (n, r)), B=_matrix(d, "dynamics.B", (n, n, r)),
            A0=_matrix(d, "dynamics.A0", (n, n)), A1=_matrix(d, "dynamics.A1", (n, n)),
        )
    elif kind == "builtin":
        name = d.get("dynamics.name")
        if name not in BUILTIN_DYNAMICS:
            raise ConfigError("dynamics.name", f"unknown builtin {name!r}")
        dyn = BUILTIN_DYNAMICS[name]()
        if (dyn.n, dyn.r) != (n, r):
            raise ConfigError("dynamics.name", f"builtin {name} has n={dyn.n}, r={dyn.r}")
    else:
        raise ConfigError("dynamics.kind", f"unknown kind {kind!r}")

    term = d["cost.terminal"]
    if term == "linear":
        terminal = TerminalCost.linear(_vector(d, "cost.coef", n))
    elif term == "quadratic":
        Q = _matrix(d, "cost.Q", (n, n))
        if Q is None:
            raise ConfigError("cost.Q", "missing")
        terminal = TerminalCost.quadratic(Q, _vector(d, "cost.coef", n, default=0.0))
    else:
        raise ConfigError("cost.terminal", f"unknown terminal cost {term!r}")

    running_kind = d.get("cost.running", "zero")
    if running_kind == "zero":
        running = RunningCost.zero(n, r)
    elif running_kind == "quadratic":
        Qy = _matrix(d, "cost.Qy", (n, n))
        Ru = _matrix(d, "cost.Ru", (r, r))
        running = RunningCost(np.zeros((n, n)) if Qy is None else Qy,
                              np.zeros((r, r)) if Ru is None else Ru)
    else:
        raise ConfigError("cost.running", f"unknown running cost {running_kind!r}")

    controls = ControlSet.box(_vector(d, "control.lower", r), _vector(d, "control.upper", r))
    y0 = _vector(d, "y0", n, default=0.0)
    history = HistorySegment.constant(y0, _vector(d, "history", n, default=0.0), grid)
    return ProblemSpec(alpha, grid, history, dyn, CostSpec(terminal, running, beta), controls,
                       name=str(d.get("name", "problem")))


def load_problem(config_text: str) -> ProblemSpec:
    """Parse a problem config (flat YAML with dotted keys)."""
    try:
        raw = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise ConfigError("<parse>", str(exc)) from None
    return problem_from_mapping(raw)


def problem_to_mapping(spec: ProblemSpec) -> dict[str, Any]:
    hist = spec.history.constant_value()
    if hist is None:
        raise ConfigError("history", "only constant histories can be written")
    out: dict[str, Any] = {
        "format_version": CONFIG_VERSION,
        "name": spec.name,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "T": spec.grid.T,
        "h": spec.grid.h,
        "N": spec.grid.N,
        "n": spec.n,
        "r": spec.r,
        "y0": spec.history.y0.tolist(),
        "history": hist.tolist(),
    }
    out.update(spec.dynamics.config_items())
    term = spec.cost.terminal
    out["cost.terminal"] = term.kind
    out["cost.coef"] = term.coef.tolist()
    if term.kind == "quadratic":
        out["cost.Q"] = term.Q.ravel().tolist()
    out["cost.running"] = spec.cost.running.kind
    if not spec.cost.running.is_zero:
        out["cost.Qy"] = spec.cost.running.Qy.ravel().tolist()
        out["cost.Ru"] = spec.cost.running.Ru.ravel().tolist()
    out["control.lower"] = spec.controls.lower.tolist()
    out["control.upper"] = spec.controls.upper.tolist()
    return out


def render_problem(spec: ProblemSpec) -> str:
    """Inverse of :func:`load_problem` for config-expressible problems."""
    return yaml.safe_dump(problem_to_mapping(spec), sort_keys=False, default_flow_style=None)


def load_problem_file(path) -> ProblemSpec:
    return load_problem(Path(path).read_text())


# }}}


def lipschitz_estimate(spec: ProblemSpec, radius: float = 2.0, samples: int = 400, seed: int = 0) -> float:
    """Finite-difference Lipschitz estimate of ``f`` on a bounding box.

    Pairs are drawn from ``[-radius, radius]^n`` for both state arguments and
    from the control box. This is a local screen only; a global constant
    cannot be certified numerically.
    """
    rng = np.random.default_rng(seed)
    n, lo, hi = spec.n, spec.controls.lower, spec.controls.upper
    worst = 0.0
    for _ in range(samples):
        t = rng.uniform(0.0, spec.grid.T)
        p = [rng.uniform(-radius, radius, n), rng.uniform(-radius, radius, n), rng.uniform(lo, hi)]
        q = [rng.uniform(-radius, radius, n), rng.uniform(-radius, radius, n), rng.uniform(lo, hi)]
        num = np.linalg.norm(spec.dynamics.f(t, *p) - spec.dynamics.f(t, *q))
        den = sum(np.linalg.norm(a - b) for a, b in zip(p, q))
        if den > 0:
            worst = max(worst, num / den)
    return worst
