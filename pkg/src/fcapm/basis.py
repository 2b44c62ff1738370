"""B-spline bases on [0, 1]: evaluation, Gram and roughness matrices, pre-smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

N_GRID = 78


class BasisError(ValueError):
    pass


def intraday_grid(n_points: int = N_GRID) -> np.ndarray:
    """Slot abscissae mapped affinely onto [0, 1]: u_i = (i - 1) / (n - 1)."""
    return np.linspace(0.0, 1.0, n_points)


def clamped_knots(n_basis: int, order: int) -> np.ndarray:
    breaks = np.linspace(0.0, 1.0, n_basis - order + 2)
    return np.concatenate([np.zeros(order - 1), breaks, np.ones(order - 1)])


def _basis_values(knots: np.ndarray, order: int, x: np.ndarray, deriv: int = 0) -> np.ndarray:
    n_basis = len(knots) - order
    if deriv >= order:
        return np.zeros((len(x), n_basis))
    spl = BSpline(knots, np.eye(n_basis), order - 1, extrapolate=False)
    if deriv:
        spl = spl.derivative(deriv)
    vals = spl(np.clip(x, 0.0, 1.0))
    # extrapolate=False returns nan exactly at the right end for order 1
    if order == 1:
        right = x >= 1.0
        vals[right] = 0.0
        vals[right, -1] = 1.0
    return np.nan_to_num(vals)


def _span_quadrature(knots: np.ndarray, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on every non-degenerate knot span."""
    ref_x, ref_w = np.polynomial.legendre.leggauss(n_nodes)
    breaks = np.unique(knots)
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    nodes = (lo[:, None] + half[:, None] * (ref_x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * ref_w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """Clamped B-spline system with uniform interior knots on [0, 1].

    ``gram[k, l] = int B_k B_l`` and ``penalty[k, l] = int B_k'' B_l''`` are
    computed with per-span Gauss-Legendre rules that are exact for the
    piecewise polynomial integrands involved.
    """

    n_basis: int
    order: int
    knots: np.ndarray
    grid: np.ndarray
    eval_matrix: np.ndarray
    gram: np.ndarray
    penalty: np.ndarray

    def evaluate(self, x, deriv: int = 0) -> np.ndarray:
        """Basis values at ``x``, shape (len(x), n_basis)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return _basis_values(self.knots, self.order, x, deriv)

    def curves(self, coefs: np.ndarray, x=None) -> np.ndarray:
        """Evaluate coefficient rows as curves on ``x`` (default: the grid)."""
        mat = self.eval_matrix if x is None else self.evaluate(x)
        return np.asarray(coefs) @ mat.T

    def greville(self) -> np.ndarray:
        k = self.order - 1
        if k == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        return np.array([self.knots[i + 1 : i + k + 1].mean() for i in range(self.n_basis)])


def make_basis(n_basis: int = 20, order: int = 4, grid: np.ndarray | None = None) -> BasisSystem:
    """Build a clamped B-spline system and its Gram/penalty matrices.

    Parameters
    ----------
    n_basis : int
        Number of basis functions (20 in the application).
    order : int
        Spline order, i.e. degree + 1. Cubic splines are order 4.
    grid : array, optional
        Abscissae for ``eval_matrix``. Defaults to the 78-point intraday grid.
    """
    if order < 1:
        raise BasisError(f"order must be >= 1, got {order}")
    if n_basis < order:
        raise BasisError(f"n_basis ({n_basis}) must be >= order ({order})")
    grid = intraday_grid() if grid is None else np.asarray(grid, dtype=float)

    knots = clamped_knots(n_basis, order)
    nodes, weights = _span_quadrature(knots, max(order, 1))

    vals = _basis_values(knots, order, nodes)
    gram = (vals * weights[:, None]).T @ vals
    d2 = _basis_values(knots, order, nodes, deriv=2)
    penalty = (d2 * weights[:, None]).T @ d2

    return BasisSystem(
        n_basis=n_basis,
        order=order,
        knots=knots,
        grid=grid,
        eval_matrix=_basis_values(knots, order, grid),
        gram=0.5 * (gram + gram.T),
        penalty=0.5 * (penalty + penalty.T),
    )


@dataclass(frozen=True, eq=False)
class CoefPanel:
    """Per-day basis coefficients (rows) of a panel of curves."""

    coefs: np.ndarray
    basis: BasisSystem

    @property
    def n_days(self) -> int:
        return self.coefs.shape[0]

    def curves(self, x=None) -> np.ndarray:
        return self.basis.curves(self.coefs, x)

    def take(self, rows) -> "CoefPanel":
        return CoefPanel(self.coefs[rows], self.basis)


def fit_coefs(curves, basis: BasisSystem, exclude_anchor: bool = False) -> CoefPanel:
    """Least-squares projection of each row of ``curves`` onto the basis.

    ``curves`` may be a raw ``(n_days, n_grid)`` array or any object with a
    ``curves`` array attribute (e.g. an excess-return panel). With
    ``exclude_anchor`` the first grid point, where a cumulative return is
    pinned to zero by construction, does not enter the fit.
    """
    values = np.asarray(getattr(curves, "curves", curves), dtype=float)
    values = np.atleast_2d(values)
    emat = basis.eval_matrix
    if values.shape[1] != emat.shape[0]:
        raise BasisError(f"curves have {values.shape[1]} points, basis grid has {emat.shape[0]}")
    if exclude_anchor:
        emat, values = emat[1:], values[:, 1:]
    if np.linalg.matrix_rank(emat) < basis.n_basis:
        raise BasisError("evaluation matrix is rank deficient on this grid")
    coefs, *_ = np.linalg.lstsq(emat, values.T, rcond=None)
    return CoefPanel(np.ascontiguousarray(coefs.T), basis)


def gram_sqrt(gram: np.ndarray, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of a PSD matrix.

    Eigenvalues below ``eps`` are clamped to ``eps``; anything below -1e-8 is
    treated as evidence that the input is not PSD.
    """
    gram = np.asarray(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise BasisError(f"expected a square matrix, got shape {gram.shape}")
    if not np.allclose(gram, gram.T, atol=1e-10, rtol=0.0):
        raise BasisError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    if vals.min() < -1e-8:
        raise BasisError(f"matrix is not positive semidefinite (min eigenvalue {vals.min():.3e})")
    vals = np.maximum(vals, eps)
    root = np.sqrt(vals)
    sqrt = (vecs * root) @ vecs.T
    inv_sqrt = (vecs / root) @ vecs.T
    return sqrt, inv_sqrt


def quad_weights(grid) -> np.ndarray:
    """Trapezoidal weights for integrating sampled values over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise BasisError("grid needs at least two abscissae")
    steps = np.diff(grid)
    if np.any(steps <= 0):
        raise BasisError("grid must be strictly increasing")
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * steps
    w[1:] += 0.5 * steps
    return w
