"""Special functions and product-integration weights for weakly singular kernels.

Every integral in the package is one of two shapes on a uniform grid:

* a single power kernel ``(t - s)**(alpha - 1)`` (fractional integrals and the
  terminal weight of the cost functional);
* a product of two power kernels ``(T - s)**(alpha - 1) * (s - t)**(alpha - 1)``
  (adjoint equation and fundamental matrix).

Both are discretized by product integration: the smooth factor is replaced by
its piecewise-linear interpolant and the kernel moments on each cell are
evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
from scipy import special

if TYPE_CHECKING:
    from fracdelay.problem import TimeGrid

# Gauss-Legendre rule for the cell moments away from the singular cell. The
# integrands are analytic on a Bernstein ellipse of parameter >= 3 + sqrt(8),
# so 16 nodes are exact to rounding.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def check_order(alpha: float, name: str = "alpha") -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {alpha}")
    return alpha


def gamma_fn(x: float) -> float:
    """Euler's gamma function for positive arguments."""
    if not x > 0:
        raise ValueError(f"gamma_fn requires x > 0, got {x}")
    return math.gamma(x)


def incomplete_beta(a: float, b: float, z):
    """Non-regularized incomplete Beta ``int_0^z s**(a-1) (1-s)**(b-1) ds``.

    Vectorized over *z*. For ``z > 1/2`` the reflection
    ``I_z(a, b) = 1 - I_{1-z}(b, a)`` is used, since ``1 - z`` is exact there.
    """
    z = np.asarray(z, dtype=float)
    upper = z > 0.5
    reg = np.where(upper, 1.0 - special.betainc(b, a, np.where(upper, 1.0 - z, 0.0)),
                   special.betainc(a, b, np.where(upper, 0.0, z)))
    out = special.beta(a, b) * reg
    return out[()] if out.ndim == 0 else out


def beta_incomplete(alpha: float, z: float) -> float:
    """Symmetric incomplete Beta ``B_z(alpha, alpha)``."""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"beta_incomplete requires 0 <= z <= 1, got {z}")
    return float(incomplete_beta(alpha, alpha, z))


@dataclass(frozen=True)
class SingularWeightRow:
    """Quadrature row for ``int_0^{t_i} (t_i - s)**(exponent) g(s) ds``."""

    target_index: int
    weights: np.ndarray
    exponent: float

    def apply(self, values) -> np.ndarray:
        """Contract the row against nodal values ``g(t_0), ..., g(t_i)``.

        *values* may carry trailing dimensions (vectors, matrices).
        """
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values[: self.weights.size], axes=(0, 0))


@lru_cache(maxsize=64)
def product_cell_weights(alpha: float, kmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Dimensionless cell weights of the product trapezoidal rule.

    For a cell whose far end lies ``k`` steps before the evaluation node,
    ``left[k]`` and ``right[k]`` are the integrals of ``sigma**(alpha - 1)``
    against the hat functions of the cell's left and right nodes, with
    ``sigma`` the distance to the evaluation node in units of ``dt``. Physical
    weights are obtained by multiplying with ``dt**alpha``. Index 0 is unused.
    """
    left = np.zeros(kmax + 1)
    right = np.zeros(kmax + 1)
    if kmax < 1:
        return left, right
    # cell adjacent to the evaluation node: the only singular one
    left[1] = 1.0 / (alpha + 1.0)
    right[1] = 1.0 / (alpha * (alpha + 1.0))
    if kmax >= 2:
        k = np.arange(2, kmax + 1, dtype=float)[:, None]
        kernel = (k - 1.0 + _GL_X) ** (alpha - 1.0)
        left[2:] = kernel @ (_GL_W * _GL_X)
        right[2:] = kernel @ (_GL_W * (1.0 - _GL_X))
    left.setflags(write=False)
    right.setflags(write=False)
    return left, right


@lru_cache(maxsize=64)
def graded_start_weights(alpha: float, kmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell weights like :func:`product_cell_weights` for a cell that starts at
    a point where the integrand behaves like ``const + c * (s - b)**alpha``.

    On that cell the interpolant is linear in ``((s - b)/dt)**alpha``; index
    ``k`` is the distance of the evaluation node from the cell's far end.
    """
    left = np.zeros(kmax + 1)
    right = np.zeros(kmax + 1)
    if kmax < 1:
        return _frozen(left, right)
    full = 1.0 / alpha
    # k = 1: int_0^1 (1 - r)**(alpha-1) r**alpha dr
    right[1] = special.beta(alpha + 1.0, alpha)
    left[1] = full - right[1]
    if kmax >= 2:
        x, w = _jacobi_rule(20, alpha)      # absorbs r**alpha
        k = np.arange(2, kmax + 1, dtype=float)[:, None]
        kern = (k - x) ** (alpha - 1.0)
        right[2:] = kern @ w
        plain = (k[:, 0] ** alpha - (k[:, 0] - 1.0) ** alpha) / alpha
        left[2:] = plain - right[2:]
    return _frozen(left, right)


def riesz_weights(grid: TimeGrid, alpha: float, i: int) -> SingularWeightRow:
    """Weights ``w`` with ``sum_j w_j g(t_j) ~ int_0^{t_i} (t_i - s)**(alpha-1) g(s) ds``.

    Exact for piecewise-linear ``g``; second order for smooth ``g``. The
    ``1/Gamma(alpha)`` factor of the fractional integral is not included.
    """
    if not 0 <= i <= grid.N:
        raise ValueError(f"target index {i} outside 0..{grid.N}")
    if i == 0:
        return SingularWeightRow(0, np.zeros(1), alpha - 1.0)
    left, right = product_cell_weights(alpha, grid.N)
    w = np.zeros(i + 1)
    w[:i] += left[i:0:-1]
    w[1:] += right[i:0:-1]
    w *= grid.dt**alpha
    return SingularWeightRow(i, w, alpha - 1.0)


def terminal_weights(grid: TimeGrid, beta: float) -> SingularWeightRow:
    """Weights for ``int_0^T (T - t)**(beta - 1) g(t) dt`` on *grid*."""
    return riesz_weights(grid, beta, grid.N)


def double_singular_cell(t: float, a: float, b: float, T_eff: float, alpha: float) -> float:
    """Exact ``int_a^b (T_eff - s)**(alpha-1) (s - t)**(alpha-1) ds`` for ``t <= a < b <= T_eff``."""
    if a < t or b > T_eff or not a < b:
        raise ValueError(f"need t <= a < b <= T_eff, got t={t}, a={a}, b={b}, T_eff={T_eff}")
    span = T_eff - t
    za = min(max((a - t) / span, 0.0), 1.0)
    zb = min(max((b - t) / span, 0.0), 1.0)
    full = special.beta(alpha, alpha)
    diff = special.betainc(alpha, alpha, zb) - special.betainc(alpha, alpha, za)
    return float(span ** (2.0 * alpha - 1.0) * full * diff)


def _jacobi_rule(n: int, expo: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule on ``[0, 1]`` for the weight ``w**expo``."""
    x, w = special.roots_jacobi(n, 0.0, expo)
    return 0.5 * (x + 1.0), w * 0.5 ** (expo + 1.0)


@lru_cache(maxsize=40000)
def double_singular_table(alpha: float, L: int, graded: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Dimensionless hat weights of the double kernel over ``L`` cells.

    With ``sigma`` measured from the lower singular point in units of ``dt``
    and the upper singular point at ``sigma = L``, the kernel is
    ``sigma**(alpha-1) * (L - sigma)**(alpha-1)``. Returns ``(left, right)``
    where ``left[p]`` and ``right[p]`` integrate the kernel against the
    interpolation basis functions of nodes ``p`` and ``p + 1`` on cell
    ``[p, p+1]``. Physical values scale with ``dt**(2*alpha - 1)``.

    With ``graded=True`` the interpolant is linear in ``zeta = (L - sigma)**alpha``
    instead of ``sigma``. Solutions of the backward equations behave like
    ``const + c * (L - sigma)**alpha`` near the upper end, and this basis
    reproduces that term exactly.
    """
    a1 = alpha - 1.0
    left = np.zeros(L)
    right = np.zeros(L)
    if L == 1:
        full = special.beta(alpha, alpha)
        if graded:
            left[0] = special.beta(alpha, 2.0 * alpha)
            right[0] = full - left[0]
        else:
            right[0] = special.beta(alpha + 1.0, alpha)
            left[0] = full - right[0]
        return _frozen(left, right)

    def basis(sig, p):
        # weight of the right node p + 1 at sigma in cell [p, p+1]
        if not graded:
            return sig - p
        # (L-p)**alpha - (L-sig)**alpha without cancellation, over the same at sig = p+1
        num = -np.expm1(alpha * np.log1p(-(sig - p) / (L - p)))
        den = -np.expm1(alpha * np.log1p(-1.0 / (L - p)))
        return num / den

    # cell 0: singular at sigma = 0
    x, w = _jacobi_rule(20, a1)
    smooth = (L - x) ** a1
    phi = basis(x, 0)
    right[0] = w @ (smooth * phi)
    left[0] = w @ (smooth * (1.0 - phi))

    # cell L-1: singular at sigma = L; substitute s = L - sigma
    x, w = _jacobi_rule(20, a1)
    smooth = (L - x) ** a1
    if graded:
        xg, wg = _jacobi_rule(20, 2.0 * alpha - 1.0)
        left[L - 1] = wg @ ((L - xg) ** a1)
        right[L - 1] = w @ smooth - left[L - 1]
    else:
        left[L - 1] = w @ (smooth * x)
        right[L - 1] = w @ (smooth * (1.0 - x))

    if L > 2:
        p = np.arange(1, L - 1, dtype=float)[:, None]
        sig = p + _GL_X
        kern = _GL_W * (L - sig) ** a1 * sig**a1
        phi = basis(sig, p)
        right[1 : L - 1] = np.sum(kern * phi, axis=1)
        left[1 : L - 1] = np.sum(kern * (1.0 - phi), axis=1)
    return _frozen(left, right)


def _zeta_gap(w, wi, g: float):
    """``w**g - wi**g`` without cancellation (``wi > 0``)."""
    return wi**g * np.expm1(g * np.log(w / wi))


def _lagrange3(w, nodes, g: float):
    """Quadratic Lagrange basis in ``zeta = w**g`` on three positive nodes."""
    w0, w1, w2 = nodes
    d = [_zeta_gap(w, wi, g) for wi in nodes]
    z01, z02, z12 = _zeta_gap(w0, w1, g), _zeta_gap(w0, w2, g), _zeta_gap(w1, w2, g)
    return (d[1] * d[2] / (z01 * z02), d[0] * d[2] / (-z01 * z12), d[0] * d[1] / (z02 * z12))


def _first_pair(moments, g: float) -> np.ndarray:
    """Weights of the nodes ``w = 0, 1, 2`` from monomial moments of ``zeta = w**g``."""
    z = np.array([0.0, 1.0, 2.0**g])
    V = np.vander(z, 3, increasing=True)        # rows: node, cols: power
    coef = np.linalg.inv(V)                      # column i: coefficients of basis i
    return coef.T @ np.asarray(moments)


@lru_cache(maxsize=40000)
def graded_pair_weights(order: float, L: int, grade: float, lower: float | None = None) -> np.ndarray:
    """Nodal weights for ``int_0^L w**(order-1) (L - w)**(lower-1) g(w) dw``.

    ``g`` is interpolated by quadratics in ``zeta = w**grade`` on the cell pairs
    ``[0,2], [2,4], ...`` counted from the singular end ``w = 0``; an odd cell
    left over at ``w = L`` is interpolated linearly in ``zeta``. ``lower=None``
    drops the second factor. Entry ``i`` multiplies ``g(w = i)``; weights are
    dimensionless (``w`` in units of ``dt``).
    """
    e1 = order - 1.0
    two_sided = lower is not None
    l1 = (lower - 1.0) if two_sided else 0.0
    wts = np.zeros(L + 1)
    x20, w20 = _jacobi_rule(20, 0.0)

    def other(w):
        return (L - w) ** l1 if two_sided else np.ones_like(w)

    if L == 1:
        # one cell, linear in zeta: basis 1 - w**g and w**g
        if two_sided:
            full = special.beta(order, lower)
            top = special.beta(order + grade, lower)
        else:
            full, top = 1.0 / order, 1.0 / (order + grade)
        wts[0], wts[1] = full - top, top
        return _frozen(wts)[0]

    # first pair [0, 2]: monomial moments of w**(e1 + p*grade)
    if two_sided and L == 2:
        mom = [2.0 ** (order + p * grade + lower - 1.0) * special.beta(order + p * grade, lower)
               for p in range(3)]
    else:
        mom = []
        for p in range(3):
            xj, wj = _jacobi_rule(20, e1 + p * grade)
            mom.append(2.0 ** (order + p * grade) * (wj @ other(2.0 * xj)))
    wts[:3] += _first_pair(mom, grade)

    npairs = L // 2
    odd = L % 2 == 1
    last_pair_singular = two_sided and not odd and npairs >= 2
    # interior pairs [2r, 2r+2] by Gauss-Legendre
    r_hi = npairs - (1 if last_pair_singular else 0)
    if r_hi > 1:
        r = np.arange(1, r_hi, dtype=float)[:, None]
        w = 2.0 * r + 2.0 * _GL_X
        kern = 2.0 * _GL_W * w**e1 * other(w)
        nodes = (2.0 * r, 2.0 * r + 1.0, 2.0 * r + 2.0)
        for i, b in enumerate(_lagrange3(w, nodes, grade)):
            np.add.at(wts, (2 * r[:, 0] + i).astype(int), np.sum(kern * b, axis=1))
    if last_pair_singular:
        # pair [L-2, L] touches the second singular point: absorb (L - w)**l1
        xj, wj = _jacobi_rule(20, l1)
        w = L - 2.0 * xj
        kern = 2.0 ** (l1 + 1.0) * wj * w**e1
        for i, b in enumerate(_lagrange3(w, (L - 2.0, L - 1.0, float(L)), grade)):
            wts[L - 2 + i] += kern @ b
    if odd:
        # trailing cell [L-1, L], linear in zeta
        if two_sided:
            xj, wj = _jacobi_rule(20, l1)
            w = L - xj
            kern = wj * w**e1
        else:
            w = L - 1.0 + _GL_X
            kern = _GL_W * w**e1
        phi = _zeta_gap(w, L - 1.0, grade) / _zeta_gap(float(L), L - 1.0, grade)
        wts[L - 1] += kern @ (1.0 - phi)
        wts[L] += kern @ phi
    return _frozen(wts)[0]


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)
    return arrays
