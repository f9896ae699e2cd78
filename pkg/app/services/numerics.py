"""
Dense matrix kernels shared by every other service: norms, SVD,
thresholding operators and regularized solves.

All functions are pure; a DenseMatrix is a 2-D float64 numpy array.
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.config import POWER_ITER_MAX, POWER_ITER_TOL, POWER_ITER_WINDOW, RANK_TOL, SYMMETRY_TOL
from app.exceptions import NonConvergence, NonFinite, NotPositiveDefinite, ShapeMismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ThinSvd:
    u: np.ndarray       # m x k, orthonormal columns
    sigma: np.ndarray   # k, nonincreasing
    v: np.ndarray       # n x k, orthonormal columns

    def rank(self, tol: float = RANK_TOL) -> int:
        if self.sigma.size == 0 or self.sigma[0] == 0:
            return 0
        return int(np.count_nonzero(self.sigma > tol * self.sigma[0]))

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} has non-finite entries")
    return arr


# ==================== ELEMENTWISE / NORMS ====================

def soft_threshold(m: np.ndarray, tau: float) -> np.ndarray:
    """S_tau(m): sign(m) * max(|m| - tau, 0), entrywise."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    m = np.asarray(m, dtype=np.float64)
    return np.sign(m) * np.maximum(np.abs(m) - tau, 0.0)


def frobenius_norm(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(m))))


def _power_iteration(gram: np.ndarray, x: np.ndarray, tol: float, max_iter: int) -> float:
    """sqrt of the Rayleigh-quotient limit of gram from start x"""
    sigma_prev = None
    window_start = None
    for it in range(1, max_iter + 1):
        y = gram @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0  # start vector in the null space
        sigma = float(np.sqrt(max(x @ y, 0.0)))
        x = y / ny
        if sigma_prev is not None and abs(sigma - sigma_prev) <= tol * sigma:
            return sigma
        # windowed test: rounding jitter on clustered top eigenvalues
        if it % POWER_ITER_WINDOW == 0:
            if window_start is not None and abs(sigma - window_start) <= POWER_ITER_WINDOW * tol * sigma:
                return sigma
            window_start = sigma
        sigma_prev = sigma
    raise NonConvergence(f"power iteration did not reach tol={tol} in {max_iter} iterations")


def spectral_norm(m: np.ndarray, tol: float = POWER_ITER_TOL, max_iter: int = POWER_ITER_MAX) -> float:
    """
    Largest singular value by power iteration on the smaller Gram matrix.

    Runs from the normalized all-ones vector and from a fixed-seed Gaussian
    vector and keeps the larger limit, so a start orthogonal to the top
    singular vector cannot settle on a lower one. Converged when sigma
    changes by at most tol relative in one step, or on average over a
    window of POWER_ITER_WINDOW steps.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    m = as_matrix(m)
    if m.size == 0:
        return 0.0

    gram = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
    k = gram.shape[0]
    if np.trace(gram) == 0:
        return 0.0

    fallback = np.random.default_rng(0).standard_normal(k)
    starts = (np.ones(k) / np.sqrt(k), fallback / np.linalg.norm(fallback))
    limits = [_power_iteration(gram, x, tol, max_iter) for x in starts]
    if limits[1] > limits[0] * (1 + tol):
        logger.debug("all-ones start settled on %.6g, below %.6g", limits[0], limits[1])
    return max(limits)


# ==================== SVD-BASED ====================

def thin_svd(m: np.ndarray) -> ThinSvd:
    m = as_matrix(m)
    if min(m.shape) < 1:
        raise ShapeMismatch(f"thin_svd needs min(rows, cols) >= 1, got {m.shape}")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NonConvergence(f"SVD did not converge: {e}") from e
    return ThinSvd(u=u, sigma=s, v=vt.T)


def nuclear_norm(m: np.ndarray) -> float:
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    return float(np.sum(thin_svd(m).sigma))


def svt_shrink(m: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding: prox of tau * nuclear norm."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    m = as_matrix(m)
    if m.size == 0:
        return m.copy()
    svd = thin_svd(m)
    return (svd.u * soft_threshold(svd.sigma, tau)) @ svd.v.T


# ==================== SOLVES ====================

def solve_sym_pd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Solve a x = b for symmetric positive definite a via Cholesky.

    Accepts stacks: a of shape (..., n, n) and b of shape (..., n, k) or (..., n).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatch(f"solve_sym_pd needs square a, got {a.shape}")

    vector_rhs = b.ndim == a.ndim - 1
    if vector_rhs:
        b = b[..., None]
    if b.shape[-2] != a.shape[-1]:
        raise ShapeMismatch(f"a is {a.shape}, b is {b.shape}")

    scale = 1.0 + np.max(np.abs(a), initial=0.0)
    if np.max(np.abs(a - np.swapaxes(a, -1, -2)), initial=0.0) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")

    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {e}") from e
    y = np.linalg.solve(chol, b)
    x = np.linalg.solve(np.swapaxes(chol, -1, -2), y)
    return x[..., 0] if vector_rhs else x


def right_solve_sym_pd(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """x @ inv(g) for symmetric positive definite g."""
    return solve_sym_pd(g, x.T).T


def inv_regularized_gram(r: np.ndarray, c: float) -> np.ndarray:
    """
    (r'r + c I)^-1 through the SVD of r and the matrix inversion lemma:
    (1/c) [I - V diag(s^2 / (c + s^2)) V'].
    """
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    r = as_matrix(r, "r")
    f = r.shape[1]
    if r.shape[0] == 0:
        return np.eye(f) / c
    svd = thin_svd(r)
    s2 = svd.sigma ** 2
    shrink = s2 / (c + s2)
    return (np.eye(f) - (svd.v * shrink) @ svd.v.T) / c
