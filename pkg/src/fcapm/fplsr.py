"""Functional partial least squares regression of the beta surface.

With predictor coefficients A, response coefficients Z and Gram matrices
G (predictor) and P (response), the functional model becomes the
multivariate regression ``Z P^{1/2} = A G^{1/2} Omega + E`` with
``Omega = G^{1/2} beta P^{1/2}``. Omega is estimated by PLS on the centred
transformed blocks and mapped back as ``beta = G^{-1/2} Omega P^{-1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import CoefPanel, gram_sqrt
from .surface import GRAM, BetaSurface

_RANK_RTOL = 1e-10


class FplsrError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PlsModel:
    """PLS2 decomposition of the transformed problem.

    ``x_weights`` (W), ``x_loadings`` (P) and ``y_loadings`` (Q) give
    ``omega = W (P^T W)^{-1} Q^T``; ``x_scores`` (T) are the latent scores.
    """

    n_components: int
    x_weights: np.ndarray
    x_loadings: np.ndarray
    y_loadings: np.ndarray
    x_scores: np.ndarray
    omega: np.ndarray


def matrix_rank(x: np.ndarray) -> int:
    if x.size == 0:
        return 0
    s = np.linalg.svd(x, compute_uv=False)
    return int(np.count_nonzero(s > _RANK_RTOL * max(s[0], np.finfo(float).tiny)))


def nipals_pls(x: np.ndarray, y: np.ndarray, n_components: int) -> PlsModel:
    """PLS2 on already-centred blocks, deflating the predictor block only.

    Each weight vector is the dominant left singular vector of the current
    cross-product X^T Y, which is the fixed point of the NIPALS inner loop.
    """
    n, p = x.shape
    xk = x.copy()
    w_mat = np.zeros((p, n_components))
    p_mat = np.zeros((p, n_components))
    q_mat = np.zeros((y.shape[1], n_components))
    t_mat = np.zeros((n, n_components))
    for a in range(n_components):
        u, s, _ = np.linalg.svd(xk.T @ y, full_matrices=False)
        w = u[:, 0]
        w *= np.sign(w[np.abs(w).argmax()]) or 1.0
        t = xk @ w
        tt = t @ t
        if tt <= 0 or s[0] <= 0:
            raise FplsrError(f"component {a + 1} has a null score vector")
        p_vec = xk.T @ t / tt
        q_vec = y.T @ t / tt
        xk = xk - np.outer(t, p_vec)
        w_mat[:, a], p_mat[:, a], q_mat[:, a], t_mat[:, a] = w, p_vec, q_vec, t
    omega = w_mat @ np.linalg.solve(p_mat.T @ w_mat, q_mat.T)
    return PlsModel(n_components, w_mat, p_mat, q_mat, t_mat, omega)


def _transformed(x_coefs: CoefPanel, y_coefs: CoefPanel):
    if x_coefs.n_days != y_coefs.n_days:
        raise FplsrError(f"{x_coefs.n_days} predictor days vs {y_coefs.n_days} response days")
    gx_half, gx_inv_half = gram_sqrt(x_coefs.basis.gram)
    gy_half, gy_inv_half = gram_sqrt(y_coefs.basis.gram)
    x_mean = x_coefs.coefs.mean(axis=0)
    y_mean = y_coefs.coefs.mean(axis=0)
    xt = (x_coefs.coefs - x_mean) @ gx_half
    yt = (y_coefs.coefs - y_mean) @ gy_half
    return xt, yt, x_mean, y_mean, gx_half, gx_inv_half, gy_inv_half


def max_components(x_coefs: CoefPanel) -> int:
    """Rank of the centred, Gram-transformed predictor matrix."""
    gx_half, _ = gram_sqrt(x_coefs.basis.gram)
    return matrix_rank((x_coefs.coefs - x_coefs.coefs.mean(axis=0)) @ gx_half)


def fit_fplsr(
    x_coefs: CoefPanel, y_coefs: CoefPanel, n_components: int | None = None, causal: bool = False
) -> BetaSurface:
    """Estimate beta by PLS on the transformed blocks (all components if None)."""
    xt, yt, x_mean, y_mean, _, gx_inv_half, gy_inv_half = _transformed(x_coefs, y_coefs)
    rank = matrix_rank(xt)
    if n_components is None:
        n_components = rank
    if not 1 <= n_components <= rank:
        raise FplsrError(f"n_components={n_components} outside [1, {rank}] (rank of transformed predictors)")
    model = nipals_pls(xt, yt, n_components)
    coef = gx_inv_half @ model.omega @ gy_inv_half
    return BetaSurface(coef, x_coefs.basis, y_coefs.basis, x_mean, y_mean, causal=causal, integration=GRAM)


def fit_pls_model(x_coefs: CoefPanel, y_coefs: CoefPanel, n_components: int) -> PlsModel:
    xt, yt, *_ = _transformed(x_coefs, y_coefs)
    return nipals_pls(xt, yt, n_components)


def contiguous_folds(n: int, k: int) -> list[np.ndarray]:
    return [f for f in np.array_split(np.arange(n), k) if len(f)]


def cv_errors(x_coefs: CoefPanel, y_coefs: CoefPanel, k_folds: int = 5, max_components: int = 10) -> np.ndarray:
    """Mean out-of-fold integrated squared error for 1..max_components.

    Entries are ``inf`` for component counts beyond a training fold's rank.
    """
    n = x_coefs.n_days
    if k_folds < 2 or n < k_folds:
        raise FplsrError(f"need 2 <= k_folds <= n_days, got k_folds={k_folds}, n_days={n}")
    gram_y = y_coefs.basis.gram
    errs = np.zeros(max_components)
    for fold in contiguous_folds(n, k_folds):
        train = np.setdiff1d(np.arange(n), fold)
        xt, yt, x_mean, y_mean, gx_half, _, gy_inv_half = _transformed(x_coefs.take(train), y_coefs.take(train))
        rank = matrix_rank(xt)
        top = min(rank, max_components)
        if top < 1:
            errs[:] = np.inf
            continue
        model = nipals_pls(xt, yt, top)
        x_test = (x_coefs.coefs[fold] - x_mean) @ gx_half
        for a in range(1, top + 1):
            w, p, q = model.x_weights[:, :a], model.x_loadings[:, :a], model.y_loadings[:, :a]
            omega = w @ np.linalg.solve(p.T @ w, q.T)
            resid = y_mean + x_test @ omega @ gy_inv_half - y_coefs.coefs[fold]
            errs[a - 1] += np.einsum("ij,jk,ik->", resid, gram_y, resid) / n
        errs[top:] = np.inf
    return errs


def select_components(
    x_coefs: CoefPanel, y_coefs: CoefPanel, k_folds: int = 5, max_components: int = 10, tie_tol: float = 1e-8
) -> int:
    """Component count minimising contiguous-block CV error; ties go to fewer components."""
    if max_components <= 1:
        return 1
    errs = cv_errors(x_coefs, y_coefs, k_folds, max_components)
    best = np.min(errs)
    if not np.isfinite(best):
        return 1
    ok = errs <= best + tie_tol * max(1.0, abs(best))
    return int(np.flatnonzero(ok)[0] + 1)
