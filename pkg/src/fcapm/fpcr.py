"""Functional principal component regression of the beta surface."""

from __future__ import annotations

import numpy as np

from .basis import CoefPanel
from .fpca import EigenSystem, ScoreMatrix, fpca
from .surface import GRAM, BetaSurface

# condition number of D'D beyond which the score regression is refused
MAX_CONDITION = 1e12


class FpcrError(ValueError):
    pass


def score_coefficients(x_scores: ScoreMatrix, y_scores: ScoreMatrix) -> np.ndarray:
    """OLS of response scores on predictor scores: (D'D)^{-1} D'C."""
    d, c = x_scores.scores, y_scores.scores
    if d.shape[0] != c.shape[0]:
        raise FpcrError(f"score matrices disagree on n_days: {d.shape[0]} vs {c.shape[0]}")
    dtd = d.T @ d
    cond = np.linalg.cond(dtd)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise FpcrError(f"predictor score cross-product is singular (condition number {cond:.3e})")
    return np.linalg.solve(dtd, d.T @ c)


def fit_fpcr(
    x_scores: ScoreMatrix,
    y_scores: ScoreMatrix,
    x_eig: EigenSystem,
    y_eig: EigenSystem,
    causal: bool = False,
) -> BetaSurface:
    """Assemble beta(u, v) = Psi(u)^T beta_hat Phi(v) in the B-spline bases."""
    beta_hat = score_coefficients(x_scores, y_scores)
    coef = x_eig.eigenfunction_coefs @ beta_hat @ y_eig.eigenfunction_coefs.T
    return BetaSurface(
        coef=coef,
        left_basis=x_eig.basis,
        right_basis=y_eig.basis,
        x_mean=x_eig.mean_coefs,
        y_mean=y_eig.mean_coefs,
        causal=causal,
        integration=GRAM,
    )


def fpcr(
    x_coefs: CoefPanel,
    y_coefs: CoefPanel,
    threshold: float = 0.95,
    y_threshold: float | None = None,
    causal: bool = False,
) -> BetaSurface:
    """FPCA both variables at the variance threshold and fit the score regression."""
    x_eig, x_scores = fpca(x_coefs, threshold)
    y_eig, y_scores = fpca(y_coefs, threshold if y_threshold is None else y_threshold)
    return fit_fpcr(x_scores, y_scores, x_eig, y_eig, causal=causal)


def predict(surface: BetaSurface, x_coefs, weights=None) -> np.ndarray:
    """Fitted response curves on the grid; see ``BetaSurface.predict``."""
    return surface.predict(x_coefs, weights)
