"""Penalized function-on-function regression with a tensor-product roughness penalty.

The surface is ``beta(u, v) = sum_{m,k} b[m, k] gamma_m(u) pi_k(v)``. For day t
the predictor enters through the quadrature contraction
``g_t[m] = sum_r w_r gamma_m(u_r) x_t(u_r)`` so the fitted response at v_i is
``(g_t kron pi(v_i)) . vec(b)`` with row-major ``vec``. The penalty
``int int (d2 beta/dv2)^2 + (d2 beta/du2)^2`` is ``vec(b)' (G kron P_y + P_x kron Pi) vec(b)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import BasisSystem, CoefPanel, quad_weights
from .surface import QUADRATURE, BetaSurface

LITERAL = "literal"
EFFECTIVE_DF = "effective_df"


class PflmError(ValueError):
    pass


def default_kappa_grid() -> np.ndarray:
    return np.logspace(-6, 4, 21)


def tensor_penalty(basis_x: BasisSystem, basis_y: BasisSystem) -> np.ndarray:
    return np.kron(basis_x.gram, basis_y.penalty) + np.kron(basis_x.penalty, basis_y.gram)


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Smoothing-parameter grid, penalty matrix and selection criterion.

    ``criterion="effective_df"`` charges ``ln N`` per effective degree of
    freedom (trace of the hat matrix); ``"literal"`` charges a single
    ``ln N`` regardless of kappa, which makes the criterion a monotone
    function of the residual sum of squares.
    """

    kappa_grid: np.ndarray
    penalty_matrix: np.ndarray
    criterion: str = EFFECTIVE_DF
    exclude_anchor: bool = True

    @classmethod
    def build(cls, basis_x: BasisSystem, basis_y: BasisSystem, kappa_grid=None, **kw) -> "PenaltySpec":
        grid = default_kappa_grid() if kappa_grid is None else np.atleast_1d(np.asarray(kappa_grid, dtype=float))
        if np.any(grid < 0) or not np.all(np.isfinite(grid)):
            raise PflmError("kappa grid must be finite and non-negative")
        return cls(np.sort(grid), tensor_penalty(basis_x, basis_y), **kw)

    def __post_init__(self):
        if self.criterion not in (LITERAL, EFFECTIVE_DF):
            raise PflmError(f"unknown criterion {self.criterion!r}")


@dataclass(frozen=True, eq=False)
class PflmFit:
    b_star: np.ndarray
    kappa_star: float
    bic_trace: list = field(default_factory=list)
    ssr_trace: list = field(default_factory=list)
    penalty_trace: list = field(default_factory=list)
    df_trace: list = field(default_factory=list)

    def write_bic_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("kappa,bic\n")
            for kappa, value in self.bic_trace:
                fh.write(f"{kappa:.17g},{value:.17g}\n")


def bic(residuals, df: float = 1.0) -> float:
    """N ln(sum of squared residuals) + df ln N, with N the number of residuals.

    Returns ``-inf`` (with a warning) when the residuals vanish.
    """
    r = np.asarray(residuals, dtype=float)
    if not np.all(np.isfinite(r)):
        raise PflmError("residuals must be finite")
    n = r.size
    ssr = float(np.sum(r * r))
    if ssr == 0.0:
        warnings.warn("zero residual sum of squares; BIC is -inf", RuntimeWarning, stacklevel=2)
        return -math.inf
    return n * math.log(ssr) + df * math.log(n)


@dataclass(frozen=True, eq=False)
class PflmProblem:
    """Centred design pieces shared by every kappa on the grid."""

    contracted: np.ndarray  # (n_days, n_x) quadrature-contracted centred predictors
    targets: np.ndarray  # (n_days, n_obs) centred responses on the fitted grid points
    resp_eval: np.ndarray  # (n_obs, n_y) response basis on the fitted grid points
    gram: np.ndarray  # design' design
    rhs: np.ndarray  # design' targets
    x_mean: np.ndarray
    y_mean: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.targets.size

    def fitted(self, b: np.ndarray) -> np.ndarray:
        return self.contracted @ b @ self.resp_eval.T

    def residuals(self, b: np.ndarray) -> np.ndarray:
        return self.targets - self.fitted(b)

    def design(self) -> np.ndarray:
        """Explicit (n_days * n_obs, n_x * n_y) design; rows ordered day-major."""
        return np.einsum("tm,ik->timk", self.contracted, self.resp_eval).reshape(
            self.targets.size, self.contracted.shape[1] * self.resp_eval.shape[1]
        )


def build_problem(x_coefs: CoefPanel, y_curves, basis_y: BasisSystem, exclude_anchor: bool = True) -> PflmProblem:
    """Assemble the normal equations through Kronecker identities.

    The intercept curve (unpenalised, in the response basis) is profiled
    out by centring the contracted predictors and subtracting the
    basis-projected mean response.
    """
    basis_x = x_coefs.basis
    y = np.asarray(getattr(y_curves, "curves", y_curves), dtype=float)
    if y.shape[0] != x_coefs.n_days:
        raise PflmError(f"{x_coefs.n_days} predictor days vs {y.shape[0]} response days")
    if y.shape[1] != len(basis_y.grid):
        raise PflmError("response curves do not match the response basis grid")

    w = quad_weights(basis_x.grid)
    x_mean = x_coefs.coefs.mean(axis=0)
    x_grid = basis_x.curves(x_coefs.coefs - x_mean)
    contracted = (x_grid * w) @ basis_x.eval_matrix

    rows = slice(1, None) if exclude_anchor else slice(None)
    resp_eval = basis_y.eval_matrix[rows]
    obs = y[:, rows]
    y_mean, *_ = np.linalg.lstsq(resp_eval, obs.mean(axis=0), rcond=None)
    targets = obs - resp_eval @ y_mean

    gram = np.kron(contracted.T @ contracted, resp_eval.T @ resp_eval)
    rhs = (contracted.T @ targets @ resp_eval).ravel()
    return PflmProblem(contracted, targets, resp_eval, gram, rhs, x_mean, y_mean)


def solve_penalized(problem: PflmProblem, penalty: np.ndarray, kappa: float) -> np.ndarray:
    """Solve (D'D + kappa/2 P) vec(b) = D'y; returns b as (n_x, n_y)."""
    lhs = problem.gram + 0.5 * kappa * penalty
    n_x = problem.contracted.shape[1]
    try:
        factor = linalg.cho_factor(lhs, lower=True, check_finite=False)
        sol = linalg.cho_solve(factor, problem.rhs, check_finite=False)
    except linalg.LinAlgError:
        if kappa <= 0:
            raise PflmError(
                "penalized system is singular at kappa=0 (rank-deficient design); use a positive kappa floor such as 1e-12"
            ) from None
        sol, *_ = linalg.lstsq(lhs, problem.rhs, check_finite=False)
    return sol.reshape(n_x, -1)


def df_spectrum(problem: PflmProblem, penalty: np.ndarray) -> np.ndarray:
    """Generalised eigenvalues mu of D'D v = mu (D'D + P) v, clipped to [0, 1].

    Since D'D + c P = V^{-T} diag(mu + c (1 - mu)) V^{-1}, the hat-matrix
    trace at any c is sum(mu / (mu + c (1 - mu))) from one decomposition.
    """
    mu = linalg.eigh(problem.gram, problem.gram + penalty, eigvals_only=True, check_finite=False)
    return np.clip(mu, 0.0, 1.0)


def effective_df(problem: PflmProblem, penalty: np.ndarray, kappa: float, spectrum=None) -> float:
    """trace((D'D + kappa/2 P)^{-1} D'D)."""
    mu = df_spectrum(problem, penalty) if spectrum is None else spectrum
    c = 0.5 * kappa
    denom = mu + c * (1.0 - mu)
    keep = mu > 0
    return float(np.sum(mu[keep] / denom[keep]))


def penalty_value(b: np.ndarray, penalty: np.ndarray) -> float:
    vec = b.ravel()
    return float(vec @ penalty @ vec)


def fit_pflm(
    x_coefs: CoefPanel,
    y_panel,
    basis_x: BasisSystem | None = None,
    basis_y: BasisSystem | None = None,
    spec: PenaltySpec | None = None,
    causal: bool = False,
) -> tuple[PflmFit, BetaSurface]:
    """Grid-search kappa by BIC and return the selected fit and its surface.

    ``y_panel`` holds raw response observations on the response grid; the
    predictor enters through its smoothed coefficients ``x_coefs``.
    """
    basis_x = x_coefs.basis if basis_x is None else basis_x
    if basis_x is not x_coefs.basis and basis_x.n_basis != x_coefs.basis.n_basis:
        raise PflmError("predictor coefficients do not belong to basis_x")
    basis_y = basis_x if basis_y is None else basis_y
    spec = PenaltySpec.build(basis_x, basis_y) if spec is None else spec

    problem = build_problem(x_coefs, y_panel, basis_y, spec.exclude_anchor)
    spectrum = df_spectrum(problem, spec.penalty_matrix) if spec.criterion == EFFECTIVE_DF else None
    best = None
    bics, ssrs, pens, dfs = [], [], [], []
    for kappa in spec.kappa_grid:
        b = solve_penalized(problem, spec.penalty_matrix, float(kappa))
        resid = problem.residuals(b)
        df = effective_df(problem, spec.penalty_matrix, float(kappa), spectrum) if spec.criterion == EFFECTIVE_DF else 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            score = bic(resid, df)
        bics.append((float(kappa), score))
        ssrs.append(float(np.sum(resid**2)))
        pens.append(penalty_value(b, spec.penalty_matrix))
        dfs.append(df)
        if best is None or score < best[0]:
            best = (score, float(kappa), b)

    _, kappa_star, b_star = best
    fit = PflmFit(b_star, kappa_star, bics, ssrs, pens, dfs)
    surface = BetaSurface(
        b_star, basis_x, basis_y, problem.x_mean, problem.y_mean, causal=causal, integration=QUADRATURE
    )
    return fit, surface
