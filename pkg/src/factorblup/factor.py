"""Factor dimension selection and maximum-likelihood factor model fitting.

Dimension selection is scree-based: the acceleration factor (second
finite difference of the sorted eigenvalue sequence) locates the elbow,
and eigenvalues >= 1 before that point are counted. The model itself is
fit by minimizing the ML discrepancy

    F = ln|LL' + Psi| + tr[R (LL' + Psi)^-1] - ln|R| - s

over the uniquenesses, with the loadings profiled out analytically: for
fixed Psi the optimal loadings follow from the top-m eigenpairs of
Psi^{-1/2} R Psi^{-1/2}, which collapses F to

    F(Psi) = sum_{i > m} (theta_i - ln theta_i - 1),

the classic concentrated form. Optimization runs in log-uniqueness space
with the analytic gradient diag(LL' + Psi - R) / psi.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import SymMatrix
from .errors import MatrixConditionError, ShapeError, TooFewTraitsError

log = logging.getLogger(__name__)

PSI_FLOOR = 0.005


@dataclass(frozen=True)
class ScreeProfile:
    """Eigenvalue sequence of a genetic correlation matrix with elbow diagnostics.

    acceleration[j] holds the second difference at position j+1 of the
    descending eigenvalue sequence (defined for the interior positions
    2..s-1, one-based). intercepts/slopes are the scree regression-line
    diagnostics for the same positions.
    """

    eigenvalues: np.ndarray
    acceleration: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray

    @property
    def elbow(self) -> int:
        """One-based eigenvalue position of maximum acceleration."""
        return int(np.argmax(self.acceleration)) + 2


@dataclass(frozen=True)
class FactorModel:
    """ML factor solution: loadings, uniquenesses and fit diagnostics."""

    loadings: np.ndarray
    uniquenesses: np.ndarray
    m_star: int
    fit_value: float
    converged: bool
    heywood: bool = False
    n_iter: int = 0

    @property
    def n_traits(self) -> int:
        return self.loadings.shape[0]

    def implied_matrix(self) -> np.ndarray:
        """Model-implied correlation matrix LL' + Psi."""
        return self.loadings @ self.loadings.T + np.diag(self.uniquenesses)

    def communalities(self) -> np.ndarray:
        return np.sum(self.loadings**2, axis=1)


def select_dimension(r_g: SymMatrix) -> tuple[int, ScreeProfile]:
    """Choose the factor dimension from a genetic correlation matrix.

    Counts eigenvalues >= 1 (Kaiser bound) occurring before the point of
    highest acceleration of the scree; at least one factor is always
    returned.
    """
    if r_g.kind != "correlation":
        raise MatrixConditionError("dimension selection expects a correlation matrix")
    s = r_g.dim
    if s < 3:
        raise TooFewTraitsError(f"need at least 3 traits for dimension selection, got {s}")
    delta = np.linalg.eigvalsh(r_g.values)[::-1]
    if delta[-1] <= 0:
        log.warning("correlation matrix is singular (min eigenvalue %.3e)", delta[-1])
    else:
        log.debug("correlation condition number %.3e", delta[0] / delta[-1])
    # Second difference at interior positions j = 2..s-1 (one-based).
    af = delta[2:] - 2.0 * delta[1:-1] + delta[:-2]
    # Scree regression-line diagnostics: the line through eigenvalue j+1
    # and the last eigenvalue, evaluated for j+1 = 2..s-1.
    j = np.arange(1, s - 1, dtype=float)
    slopes = (delta[-1] - delta[1:-1]) / (s - j - 1.0)
    intercepts = delta[1:-1] * (j + 1.0) - slopes * (j + 1.0)
    profile = ScreeProfile(delta, af, intercepts, slopes)
    s_prime = profile.elbow
    m_star = int(np.sum((delta >= 1.0) & (np.arange(1, s + 1) < s_prime)))
    return max(m_star, 1), profile


def _profile_loadings(psi: np.ndarray, r: np.ndarray, m: int) -> np.ndarray:
    """Optimal loadings for fixed uniquenesses (eigen-based inner solve)."""
    isq = 1.0 / np.sqrt(psi)
    sstar = r * isq[:, None] * isq[None, :]
    theta, vecs = np.linalg.eigh(sstar)
    top = slice(None, None, -1)
    theta = theta[top][:m]
    vecs = vecs[:, top][:, :m]
    return np.sqrt(psi)[:, None] * vecs * np.sqrt(np.maximum(theta - 1.0, 0.0))


def _discrepancy_and_grad(log_psi: np.ndarray, r: np.ndarray, m: int) -> tuple[float, np.ndarray]:
    psi = np.exp(log_psi)
    isq = 1.0 / np.sqrt(psi)
    sstar = r * isq[:, None] * isq[None, :]
    theta = np.linalg.eigvalsh(sstar)[::-1]
    tail = theta[m:]
    f = float(np.sum(tail - np.log(tail) - 1.0))
    lam = _profile_loadings(psi, r, m)
    implied_diag = np.sum(lam**2, axis=1) + psi
    grad = (implied_diag - np.diag(r)) / psi
    return f, grad


def fit_factor_model(
    r_g: SymMatrix,
    m_star: int,
    psi_floor: float = PSI_FLOOR,
    grad_tol: float = 1e-6,
    max_iter: int = 500,
) -> FactorModel:
    """Fit the ML factor model to a correlation matrix at a fixed dimension.

    Quasi-Newton descent on log-uniquenesses with the analytic gradient;
    loadings are recovered from the profiled eigen solution. Heywood
    cases are prevented by the uniqueness floor and flagged. A
    non-converged run returns a flagged result rather than raising.
    """
    r = r_g.values
    s = r.shape[0]
    if not (1 <= m_star < s):
        raise ShapeError(f"factor dimension must satisfy 1 <= m < {s}, got {m_star}")
    eigs = np.linalg.eigvalsh(r)
    if eigs[0] <= 1e-10 * eigs[-1]:
        raise MatrixConditionError(
            f"correlation matrix is not positive definite (min eigenvalue {eigs[0]:.3e})"
        )
    # Start at 1 - squared multiple correlations.
    psi0 = np.clip(1.0 / np.diag(np.linalg.inv(r)), psi_floor, 1.0)
    bounds = [(np.log(psi_floor), 0.0)] * s
    res = minimize(
        _discrepancy_and_grad,
        np.log(psi0),
        args=(r, m_star),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 1e-12},
    )
    psi = np.exp(res.x)
    lam = _profile_loadings(psi, r, m_star)
    lam = _fix_column_signs(lam)
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    converged = bool(res.success) or grad_norm < grad_tol
    heywood = bool(np.any(psi <= psi_floor * (1.0 + 1e-9)))
    if not converged:
        log.warning("factor fit did not converge in %d iterations (F=%.3e)", res.nit, res.fun)
    return FactorModel(
        loadings=lam,
        uniquenesses=psi,
        m_star=m_star,
        fit_value=float(res.fun),
        converged=converged,
        heywood=heywood,
        n_iter=int(res.nit),
    )


def _fix_column_signs(loadings: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive (deterministic output)."""
    out = loadings.copy()
    for k in range(out.shape[1]):
        j = int(np.argmax(np.abs(out[:, k])))
        if out[j, k] < 0:
            out[:, k] = -out[:, k]
    return out


def varimax_criterion(loadings: np.ndarray, normalize: bool = True) -> float:
    """Raw Varimax criterion: summed column variance of squared loadings."""
    lam = np.asarray(loadings, dtype=float)
    if normalize:
        h = np.sqrt(np.sum(lam**2, axis=1))
        h[h == 0.0] = 1.0
        lam = lam / h[:, None]
    sq = lam**2
    return float(np.sum(sq.var(axis=0)))


def varimax(
    loadings: np.ndarray,
    normalize: bool = True,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> np.ndarray:
    """Varimax rotation with Kaiser row normalization.

    The returned loadings are the input times an orthogonal matrix, so
    LL' is unchanged; columns carry a deterministic sign (largest entry
    positive). A single column is returned as-is up to that sign.
    """
    lam = np.asarray(loadings, dtype=float)
    if lam.ndim != 2:
        raise ShapeError("loadings must be a 2-d array")
    p, m = lam.shape
    if m == 1:
        return _fix_column_signs(lam)
    if normalize:
        h = np.sqrt(np.sum(lam**2, axis=1))
        h[h == 0.0] = 1.0
        lam = lam / h[:, None]
    rot = np.eye(m)
    d = 0.0
    for _ in range(max_iter):
        z = lam @ rot
        b = lam.T @ (z**3 - z @ np.diag(np.sum(z**2, axis=0)) / p)
        u, sv, vt = np.linalg.svd(b)
        rot = u @ vt
        d_old, d = d, float(np.sum(sv))
        if d < d_old * (1.0 + tol):
            break
    out = lam @ rot
    if normalize:
        out = out * h[:, None]
    return _fix_column_signs(out)


def sort_by_explained_variance(loadings: np.ndarray) -> np.ndarray:
    """Order factor columns by decreasing sum of squared loadings."""
    ss = np.sum(np.asarray(loadings, dtype=float) ** 2, axis=0)
    order = np.argsort(-ss, kind="stable")
    return loadings[:, order]
