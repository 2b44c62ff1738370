"""Functional principal components of curves stored as B-spline coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSystem, CoefPanel, gram_sqrt

# eigenvalues below this fraction of the largest are treated as exact zeros
_REL_ZERO = 1e-12
_SHARE_SLACK = 1e-12


class FpcaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Retained eigenfunctions of a functional variable.

    Attributes
    ----------
    eigenvalues : (n_basis,) array
        All eigenvalues, descending and clipped at zero.
    eigenfunction_coefs : (n_basis, n_components) array
        B-spline coefficients of the retained eigenfunctions, orthonormal
        under the Gram inner product.
    n_components : int
    explained_fraction : float
        Cumulative variance share of the retained components.
    mean_coefs : (n_basis,) array
        Coefficients of the sample mean curve.
    basis : BasisSystem
    """

    eigenvalues: np.ndarray
    eigenfunction_coefs: np.ndarray
    n_components: int
    explained_fraction: float
    mean_coefs: np.ndarray
    basis: BasisSystem

    @property
    def gram(self) -> np.ndarray:
        return self.basis.gram

    def truncate(self, k: int) -> "EigenSystem":
        if not 1 <= k <= self.n_components:
            raise FpcaError(f"cannot truncate {self.n_components} components to {k}")
        total = self.eigenvalues.sum()
        return EigenSystem(
            eigenvalues=self.eigenvalues,
            eigenfunction_coefs=self.eigenfunction_coefs[:, :k],
            n_components=k,
            explained_fraction=float(self.eigenvalues[:k].sum() / total),
            mean_coefs=self.mean_coefs,
            basis=self.basis,
        )

    def project(self, coefs: np.ndarray) -> np.ndarray:
        """Scores of curves given by ``coefs`` (rows): <x - mean, phi_k>."""
        return (np.atleast_2d(coefs) - self.mean_coefs) @ self.gram @ self.eigenfunction_coefs


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray

    @property
    def n_days(self) -> int:
        return self.scores.shape[0]

    def take(self, cols) -> "ScoreMatrix":
        return ScoreMatrix(self.scores[:, cols])


def _select(eigenvalues: np.ndarray, threshold: float) -> int:
    total = eigenvalues.sum()
    share = np.cumsum(eigenvalues) / total
    n_pos = int(np.count_nonzero(eigenvalues > 0))
    k = int(np.searchsorted(share, threshold - _SHARE_SLACK) + 1)
    return max(1, min(k, n_pos))


def fpca(coefs: CoefPanel, threshold: float = 0.95) -> tuple[EigenSystem, ScoreMatrix]:
    """Eigen-decompose the sample covariance operator of a coefficient panel.

    The covariance uses divisor n. With Gram matrix G and coefficient
    covariance S, the operator's eigenproblem is the symmetric problem
    ``G^{1/2} S G^{1/2} w = lambda w``; eigenfunction coefficients are
    ``G^{-1/2} w``. The smallest number of components whose cumulative
    variance share reaches ``threshold`` is retained (at least one).
    """
    if not 0.0 < threshold <= 1.0:
        raise FpcaError(f"threshold must lie in (0, 1], got {threshold}")
    c = np.asarray(coefs.coefs, dtype=float)
    n_days = c.shape[0]
    if n_days < 2:
        raise FpcaError("need at least two curves")
    gram = coefs.basis.gram

    mean = c.mean(axis=0)
    centered = c - mean
    cov = centered.T @ centered / n_days
    g_half, g_inv_half = gram_sqrt(gram)
    op = g_half @ cov @ g_half
    vals, vecs = np.linalg.eigh(0.5 * (op + op.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # variance at rounding level of the coefficients counts as none
    if vals[0] <= (1e-12 * np.abs(c).max()) ** 2 * np.abs(gram).max():
        raise FpcaError("curves have zero total variance")
    vals = np.where(vals > _REL_ZERO * vals[0], vals, 0.0)

    k = _select(vals, threshold)
    phi = g_inv_half @ vecs[:, :k]
    # deterministic sign: largest-magnitude coefficient positive
    pivot = np.abs(phi).argmax(axis=0)
    signs = np.sign(phi[pivot, np.arange(k)])
    phi = phi * np.where(signs == 0, 1.0, signs)

    eig = EigenSystem(
        eigenvalues=vals,
        eigenfunction_coefs=phi,
        n_components=k,
        explained_fraction=float(vals[:k].sum() / vals.sum()),
        mean_coefs=mean,
        basis=coefs.basis,
    )
    return eig, ScoreMatrix(centered @ gram @ phi)


def reconstruct(eig: EigenSystem, scores: ScoreMatrix, mean_coefs: np.ndarray | None = None) -> CoefPanel:
    """Karhunen-Loeve reconstruction in coefficient space: mean + scores @ phi^T."""
    mean = eig.mean_coefs if mean_coefs is None else np.asarray(mean_coefs)
    s = scores.scores
    phi = eig.eigenfunction_coefs
    if s.shape[1] != phi.shape[1]:
        raise FpcaError(f"{s.shape[1]} score columns for {phi.shape[1]} eigenfunctions")
    return CoefPanel(mean + s @ phi.T, eig.basis)
