"""Multivariate Gaussian log-density via Cholesky factorization.

Covariances arising from mixture fits on nearly saturated codes can be
numerically singular, so every factorization adds a small ridge first
(1e-6 on the diagonal, retried once at 1e-3) before giving up.
"""

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import NonPSDError, ShapeError
from .tape import as_tensor

RIDGE_PRIMARY = 1e-6
RIDGE_FALLBACK = 1e-3

_LOG_2PI = float(np.log(2.0 * np.pi))


def _failing_pivot(sigma: np.ndarray) -> int:
    """Index of the first non-positive pivot of a failed factorization."""
    r = sigma.shape[0]
    for k in range(1, r + 1):
        try:
            np.linalg.cholesky(sigma[:k, :k])
        except np.linalg.LinAlgError:
            return k - 1
    return r - 1


def cholesky_with_ridge(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``sigma + eps*I``, retrying a larger ridge.

    Raises NonPSDError carrying the first failing diagonal index if the
    matrix is not positive definite even at the fallback ridge.
    """
    sigma = as_tensor(sigma)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ShapeError(f"cholesky_with_ridge: expects a square matrix, got shape {sigma.shape}")
    eye = np.eye(sigma.shape[0])
    for eps in (RIDGE_PRIMARY, RIDGE_FALLBACK):
        try:
            return np.linalg.cholesky(sigma + eps * eye)
        except np.linalg.LinAlgError:
            continue
    raise NonPSDError(
        "covariance is not positive definite after ridge regularization",
        index=_failing_pivot(sigma + RIDGE_FALLBACK * eye),
    )


def mvn_logpdf_rows(X, mu, sigma) -> np.ndarray:
    """log N(x | mu, sigma) for every row x of ``X``.

    The log-determinant comes from the factor diagonal and the quadratic
    form from a single triangular solve over all rows.
    """
    X = np.atleast_2d(as_tensor(X))
    mu = as_tensor(mu)
    r = mu.shape[0]
    if X.shape[1] != r:
        raise ShapeError(f"mvn_logpdf: point dimension {X.shape[1]} does not match mean dimension {r}")
    L = cholesky_with_ridge(sigma)
    diff = X - mu[None, :]
    z = solve_triangular(L, diff.T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", z, z)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return -0.5 * (r * _LOG_2PI + logdet + quad)


def mvn_logpdf(x, mu, sigma) -> float:
    """log N(x | mu, sigma) for a single point."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"mvn_logpdf: expects a vector point, got shape {x.shape}")
    return float(mvn_logpdf_rows(x[None, :], mu, sigma)[0])
