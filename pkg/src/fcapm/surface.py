"""Bivariate coefficient functions beta(u, v) on a tensor-product B-spline basis."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .basis import BasisSystem, quad_weights

GRAM = "gram"
QUADRATURE = "quadrature"


@dataclass(frozen=True, eq=False)
class BetaSurface:
    """beta(u, v) = E_x(u) @ coef @ E_y(v)^T plus the centring of the fit.

    Predictions follow ``y(v) = mean_y(v) + int beta(u, v) (x(u) - mean_x(u)) du``.
    ``integration`` selects how that integral is evaluated by default: exactly
    through the predictor Gram matrix (``"gram"``) or with trapezoidal weights
    on the predictor grid (``"quadrature"``). A causal surface is zero for
    u > v and always integrates on the grid with the u <= v mask applied.
    """

    coef: np.ndarray
    left_basis: BasisSystem
    right_basis: BasisSystem
    x_mean: np.ndarray
    y_mean: np.ndarray
    causal: bool = False
    integration: str = GRAM

    def __post_init__(self):
        if self.coef.shape != (self.left_basis.n_basis, self.right_basis.n_basis):
            raise ValueError(
                f"coef shape {self.coef.shape} does not match bases "
                f"({self.left_basis.n_basis}, {self.right_basis.n_basis})"
            )
        if self.integration not in (GRAM, QUADRATURE):
            raise ValueError(f"unknown integration rule {self.integration!r}")

    def with_causal(self, causal: bool = True) -> "BetaSurface":
        return replace(self, causal=causal)

    def evaluate(self, u=None, v=None) -> np.ndarray:
        """Surface values on the (u, v) grid, shape (len(u), len(v))."""
        u = self.left_basis.grid if u is None else np.atleast_1d(np.asarray(u, dtype=float))
        v = self.right_basis.grid if v is None else np.atleast_1d(np.asarray(v, dtype=float))
        vals = self.left_basis.evaluate(u) @ self.coef @ self.right_basis.evaluate(v).T
        if self.causal:
            vals = np.where(u[:, None] <= v[None, :], vals, 0.0)
        return vals

    def intercept(self) -> np.ndarray:
        """Response-basis coefficients of the fitted curve at x = 0."""
        return self.y_mean - self.x_mean @ self.left_basis.gram @ self.coef

    def predict_coefs(self, x_coefs) -> np.ndarray:
        """Response coefficients with the integral taken exactly (non-causal only)."""
        if self.causal:
            raise ValueError("a causal surface has no closed-form coefficient prediction")
        x = np.atleast_2d(np.asarray(x_coefs, dtype=float)) - self.x_mean
        return self.y_mean + x @ self.left_basis.gram @ self.coef

    def predict(self, x_coefs, weights=None) -> np.ndarray:
        """Fitted response curves on the response grid, one row per predictor row.

        ``weights`` are quadrature weights on the predictor grid; passing them
        (or having a causal or quadrature surface) integrates on the grid.
        """
        if weights is None and not self.causal and self.integration == GRAM:
            return self.right_basis.curves(self.predict_coefs(x_coefs))
        u = self.left_basis.grid
        w = quad_weights(u) if weights is None else np.asarray(weights, dtype=float)
        x = np.atleast_2d(np.asarray(x_coefs, dtype=float)) - self.x_mean
        x_grid = self.left_basis.curves(x)
        kernel = self.evaluate(u, self.right_basis.grid) * w[:, None]
        return self.right_basis.curves(self.y_mean) + x_grid @ kernel

    def to_csv(self, path) -> None:
        """Write the surface on grid x grid as a dense CSV (rows u, columns v)."""
        write_grid_csv(path, self.evaluate(), self.left_basis.grid, self.right_basis.grid)


def write_grid_csv(path, values: np.ndarray, u: np.ndarray, v: np.ndarray) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["u\\v", *(f"{x:.17g}" for x in v)])
        for ui, row in zip(u, values):
            writer.writerow([f"{ui:.17g}", *(f"{x:.17g}" for x in row)])


def read_grid_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    v = np.array([float(x) for x in rows[0][1:]])
    u = np.array([float(r[0]) for r in rows[1:]])
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return values, u, v
