"""Fundamental matrix of a linear fractional delay system.

For ``D^alpha y = a(t) y + b(t) y(t-h) + f(t)`` with zero history the solution
admits the representation

    y(t) = (1/Gamma(a)) int_0^t (t-tau)^(a-1) F(t,tau) f(tau) dtau + F1(t) y0,

where ``F(t, .)`` solves a backward Volterra equation in ``tau`` whose kernel
has the same doubly singular shape as the adjoint equation, and
``F1(t) = E + (1/Gamma(a)) int_0^t (t-tau)^(a-1) F(t,tau) [a(tau) + b(tau)] dtau``.

Every evaluation node needs its own ``F(t, .)``, so a full trajectory costs
``O(N**3)``. This path exists to cross-check :func:`fracdelay.forward.solve_fdde`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from fracdelay.forward import SolverError, Trajectory
from fracdelay.fracquad import (
    check_order,
    gamma_fn,
    graded_pair_weights,
)
from fracdelay.problem import CSV_VERSION, HistorySegment, LinearDelay, TimeGrid

MatrixField = Union[Callable[[float], np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """``F(t_k, tau_j)`` for ``j = 0..k`` (``values[j]``) and ``F1(t_k)``."""

    t_index: int
    grid: TimeGrid
    values: np.ndarray
    F1: np.ndarray | None = None
    _split: _Split | None = field(default=None, repr=False)

    @property
    def t(self) -> float:
        return self.t_index * self.grid.dt

    def to_csv(self, path) -> None:
        n = self.values.shape[1]
        cols = [f"F_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        with open(path, "w", newline="") as fh:
            fh.write(f"# fracdelay fundamental matrix v{CSV_VERSION} t={self.t:.12g}\n")
            w = csv.writer(fh)
            w.writerow(["tau"] + cols)
            for j, F in enumerate(self.values):
                w.writerow([f"{j * self.grid.dt:.12g}"] + [f"{x:.12g}" for x in F.ravel()])


def _nodal(field: MatrixField, grid: TimeGrid, upto: int) -> np.ndarray:
    """Sample a matrix coefficient at nodes ``0..upto``."""
    if callable(field):
        return np.array([np.asarray(field(t), dtype=float) for t in grid.nodes[: upto + 1]])
    arr = np.asarray(field, dtype=float)
    if arr.ndim == 2:
        return np.broadcast_to(arr, (upto + 1,) + arr.shape)
    return arr[: upto + 1]


# singular terms (t - p h - tau)**(q alpha - 1) are split off F while q alpha <= 1 + alpha
_ORDER_CAP = 1.0


@dataclass(frozen=True, eq=False)
class _Split:
    """``F = G + (t-tau)**(1-a) sum_i (t - p_i h - tau)_+**(q_i a - 1) Q_i``.

    ``terms[i] = (p_i, q_i)``; ``Q[i]`` holds nodes ``0..k - p_i m`` and its
    last entry is the limit value at the breakpoint.
    """

    G: np.ndarray
    terms: tuple[tuple[int, int], ...]
    Q: tuple[np.ndarray, ...]
    k: int
    m: int

    def tail(self, off: int) -> _Split:
        """The split for ``k - off`` of a constant-coefficient problem."""
        k = self.k - off
        kept = [(t, q[off:]) for t, q in zip(self.terms, self.Q) if k - t[0] * self.m >= 0]
        return _Split(self.G[off:], tuple(t for t, _ in kept), tuple(q for _, q in kept), k, self.m)


def _pair_nodal(alpha: float, L: int, upper: float) -> np.ndarray:
    """Nodal weights of ``sigma**(alpha-1) (L - sigma)**(upper-1)`` over ``L`` cells,
    indexed from the lower singular point, quadratic in ``(L - sigma)**alpha``."""
    return graded_pair_weights(upper, L, alpha, alpha)[::-1]


def _term_family(alpha: float, k: int, m: int) -> list[tuple[int, int]]:
    """Terms ``(p, q)`` ordered by ``q``; children of ``(p, q)`` are ``(p, q+1)``
    (first integral) and ``(p+1, q+1)`` (delayed integral)."""
    if k - m < 0:
        return []
    out = []
    q = 2
    while q == 2 or (q * alpha <= 1.0 + _ORDER_CAP * alpha):
        for p in range(1, q):
            if k - p * m >= 0:
                out.append((p, q))
        q += 1
    return out


def _march(k: int, A: np.ndarray, Bm: np.ndarray, alpha: float, grid: TimeGrid) -> _Split:
    n = A.shape[1]
    nn = n * n
    m, dt = grid.m, grid.dt
    E = np.eye(n)
    ga = gamma_fn(alpha)
    terms = _term_family(alpha, k, m)
    index = {t: i for i, t in enumerate(terms)}
    top = {}  # last node of each term
    for (p, q) in terms:
        top[(p, q)] = k - p * m

    G = np.zeros((k + 1, n, n))
    G[k] = E
    # products with the coefficients, flattened for vector-matrix contractions
    GA = np.zeros((k + 1, nn))
    GB = np.zeros((k + 1, nn))
    GA[k], GB[k] = A[k].ravel(), Bm[k].ravel()
    Q = [np.zeros((top[t] + 1, n, n)) for t in terms]
    QA = [np.zeros((top[t] + 1, nn)) for t in terms]
    QB = [np.zeros((top[t] + 1, nn)) for t in terms]

    def store(i, j, value):
        Q[i][j] = value
        QA[i][j], QB[i][j] = (value @ A[j]).ravel(), (value @ Bm[j]).ravel()

    def origins(p, q):
        """(origin index, via) pairs feeding term (p, q)."""
        out = []
        if (p, q - 1) in index:
            out.append((index[(p, q - 1)], "first"))
        if p >= 2 and (p - 1, q - 1) in index:
            out.append((index[(p - 1, q - 1)], "delayed"))
        return out

    feeds = {i: origins(*t) for i, t in enumerate(terms)}
    fed_first = {o for i in feeds for o, via in feeds[i] if via == "first"}
    fed_delayed = {o for i in feeds for o, via in feeds[i] if via == "delayed"}

    # limit values at each breakpoint: the integrals collapse onto their upper end
    for i, (p, q) in enumerate(terms):
        jt = top[(p, q)]
        if (p, q) == (1, 2):
            val = _beta(alpha, alpha) / ga * Bm[k]
        else:
            val = np.zeros((n, n))
            for o, via in feeds[i]:
                po, qo = terms[o]
                node = top[terms[o]]
                coef = A[node] if via == "first" else Bm[node]
                val = val + _beta(alpha, qo * alpha) / ga * Q[o][node] @ coef
        store(i, jt, val)

    def part(o, via, j, upto):
        # integral of term o over [tau, t - p_o h] ("first") or [tau + h, t - p_o h]
        eo = terms[o][1] * alpha
        cells = upto - j
        w = _pair_nodal(alpha, cells, eo)
        src = QA[o][j : top[terms[o]] + 1] if via == "first" else QB[o][j + m : top[terms[o]] + 1]
        return dt ** (alpha + eo - 1.0) * (w @ src)

    s_gg = dt ** (2.0 * alpha - 1.0)
    for j in range(k - 1, -1, -1):
        L = k - j
        pref = (L * dt) ** (1.0 - alpha) / ga

        # 1. leading term: G-part of the delayed integral plus folded delayed parts
        if terms and j < top[(1, 2)]:
            lead = s_gg * (_pair_nodal(alpha, L - m, alpha) @ GB[j + m : k + 1])
            for o, (po, qo) in enumerate(terms):
                if o not in fed_delayed and L - (po + 1) * m >= 1:
                    lead += part(o, "delayed", j, top[(po, qo)] - m)
            x = (top[(1, 2)] - j) * dt
            store(0, j, lead.reshape(n, n) / (ga * x ** (2.0 * alpha - 1.0)))

        # 2. remaining terms in order of q; their origins are already known at j
        for i, (p, q) in enumerate(terms):
            if i == 0 or j >= top[(p, q)]:
                continue
            total = np.zeros(nn)
            for o, via in feeds[i]:
                total += part(o, via, j, top[(p, q)])
            x = (top[(p, q)] - j) * dt
            store(i, j, total.reshape(n, n) / (ga * x ** (q * alpha - 1.0)))

        # 3. first integral: G-part with G_j implicit plus folded term parts
        w = _pair_nodal(alpha, L, alpha)
        known = s_gg * (w[1:] @ GA[j + 1 : k + 1])
        for o, (po, qo) in enumerate(terms):
            if o not in fed_first and j < top[(po, qo)]:
                known += part(o, "first", j, top[(po, qo)])

        rhs = E + pref * known.reshape(n, n)
        M = E - pref * s_gg * w[0] * A[j]
        try:
            Gj = np.linalg.solve(M.T, rhs.T).T
        except np.linalg.LinAlgError:
            raise SolverError(j, f"fundamental matrix block singular at t_index={k}") from None
        G[j] = Gj
        GA[j], GB[j] = (Gj @ A[j]).ravel(), (Gj @ Bm[j]).ravel()
    return _Split(G, tuple(terms), tuple(Q), k, m)


def _beta(a: float, b: float) -> float:
    return gamma_fn(a) * gamma_fn(b) / gamma_fn(a + b)


def _assemble(split: _Split, alpha: float, grid: TimeGrid) -> np.ndarray:
    """Nodal ``F`` from its regular and singular parts."""
    F = split.G.copy()
    dt, k = grid.dt, split.k
    for (p, q), Q in zip(split.terms, split.Q):
        top = k - p * split.m
        j = np.arange(top)
        fac = ((k - j) * dt) ** (1.0 - alpha) * ((top - j) * dt) ** (q * alpha - 1.0)
        F[:top] += fac[:, None, None] * Q[:top]
    return F


def _fractional_integral(split: _Split, g: np.ndarray, alpha: float, grid: TimeGrid) -> np.ndarray:
    """``(1/Gamma(a)) int_0^t (t-tau)**(a-1) F(t,tau) g(tau) dtau`` for nodal ``g``.

    The singular parts lose their ``(t-tau)`` factors against the kernel and
    are integrated against ``(t - p h - tau)**(q a - 1)`` directly.
    """
    k, dt = split.k, grid.dt
    Gg = np.einsum("jab,jb...->ja...", split.G, g[: k + 1])
    out = dt**alpha * np.tensordot(graded_pair_weights(alpha, k, alpha)[::-1], Gg, axes=(0, 0))
    for (p, q), Q in zip(split.terms, split.Q):
        top = k - p * split.m
        if top < 1:
            continue
        e = q * alpha
        Qg = np.einsum("jab,jb...->ja...", Q, g[: top + 1])
        out = out + dt**e * np.tensordot(graded_pair_weights(e, top, alpha)[::-1], Qg, axes=(0, 0))
    return out / gamma_fn(alpha)


def solve_F(t_index: int, a: MatrixField, b: MatrixField, alpha: float, grid: TimeGrid) -> FundamentalMatrix:
    """March ``F(t_k, tau_j)`` from ``tau = t_k`` down to ``tau = 0``.

    *a* and *b* are constant ``n x n`` arrays, callables of ``t``, or nodal
    arrays of shape ``(N+1, n, n)``. ``F`` multiplies the coefficients from
    the left.

    Below ``tau = t - h`` the delayed integral makes ``F`` behave like
    ``(t - h - tau)**(2 alpha - 1)``, which is singular for ``alpha < 1/2``.
    That part is carried as ``(t-tau)**(1-alpha) (t-tau-h)**(2alpha-1) Q(tau)``
    with a bounded ``Q`` and integrated against its exact kernel, while the
    remainder ``G`` is interpolated linearly in ``(t - tau)**alpha``. Each
    step solves the implicit block ``G_j (E - P l_0 a_j) = rhs``.
    """
    alpha = check_order(alpha)
    k = int(t_index)
    if not 1 <= k <= grid.N:
        raise ValueError(f"t_index must lie in 1..{grid.N}, got {t_index}")
    A = _nodal(a, grid, k)
    Bm = _nodal(b, grid, k)
    split = _march(k, A, Bm, alpha, grid)
    return FundamentalMatrix(k, grid, _assemble(split, alpha, grid), _split=split)


def solve_F1(t_index: int, F: FundamentalMatrix, a: MatrixField, b: MatrixField,
             alpha: float, grid: TimeGrid) -> np.ndarray:
    """``F1(t_k) = E + (1/Gamma(alpha)) int_0^{t_k} (t_k - tau)^(alpha-1) F (a + b) dtau``."""
    k = int(t_index)
    if F.t_index != k:
        raise ValueError("fundamental matrix was computed for a different node")
    n = F.values.shape[1]
    if k == 0:
        return np.eye(n)
    S = _nodal(a, grid, k) + _nodal(b, grid, k)
    return np.eye(n) + _fractional_integral(F._split, S, alpha, grid)


def _splits(An: np.ndarray, Bn: np.ndarray, alpha: float, grid: TimeGrid):
    """Yield ``(k, split)`` for ``k = 1..N``.

    With constant coefficients ``F(t_k, tau_j)`` depends on ``k - j`` only and
    the march for ``k = N`` contains every other one as a tail, so it is done
    once and sliced.
    """
    N, m = grid.N, grid.m
    if np.all(An == An[0]) and np.all(Bn == Bn[0]):
        full = _march(N, An, Bn, alpha, grid)
        for k in range(1, N + 1):
            yield k, full.tail(N - k)
        return
    for k in range(1, N + 1):
        yield k, _march(k, An, Bn, alpha, grid)


def representation_solution(
    lin: LinearDelay,
    forcing,
    y0,
    alpha: float,
    grid: TimeGrid,
    history: HistorySegment | None = None,
) -> Trajectory:
    """Assemble ``y(t_k)`` node by node from ``F(t_k, .)`` and ``F1(t_k)``.

    *forcing* is a callable of ``t`` or nodal values of shape ``(N+1, n)``.
    Only zero history is supported. The formula treats the delayed state on
    ``[0, h)`` as if it continued from ``y0``, so a nonzero ``y0`` is accepted
    only when the delay coefficient vanishes.
    """
    if not isinstance(lin, LinearDelay):
        raise TypeError("representation requires LinearDelay dynamics")
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    n = y0.size
    if history is not None and not history.is_zero:
        raise ValueError("representation is only available for zero history")
    a = lin._A0
    b = lin._A1
    Bn = _nodal(b, grid, grid.N)
    if np.any(y0) and np.any(Bn):
        raise ValueError("representation with y0 != 0 requires a vanishing delay coefficient")
    if callable(forcing):
        fvals = np.array([np.asarray(forcing(t), dtype=float) for t in grid.nodes])
    else:
        fvals = np.asarray(forcing, dtype=float)
    if fvals.shape != (grid.N + 1, n):
        raise ValueError(f"forcing must have shape {(grid.N + 1, n)}, got {fvals.shape}")

    An = _nodal(a, grid, grid.N)
    Y = np.zeros((grid.N + 1, n))
    Y[0] = y0
    S = An + Bn
    for k, split in _splits(An, Bn, alpha, grid):
        Y[k] = _fractional_integral(split, fvals, alpha, grid)
        if np.any(y0):
            Y[k] += (np.eye(n) + _fractional_integral(split, S, alpha, grid)) @ y0
    hist = history if history is not None else HistorySegment.constant(y0, np.zeros(n), grid)
    F_r = np.full((grid.N + 1, n), np.nan)
    return Trajectory(grid, Y, hist, F_r, F_r)
