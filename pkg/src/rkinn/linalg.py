"""Dense linear-algebra kernels shared by every other module.

Matrices are plain row-major ``numpy.ndarray`` objects. All factorizations
apply a deterministic sign convention so that bases are reproducible across
runs and platforms: the largest-magnitude entry of each basis column is made
positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericalError(RuntimeError):
    """A numerical routine failed in a way that invalidates the result."""


# Default relative rank cutoff: singular values below RANK_TOL_FACTOR(A) * s_max
# are treated as zero (standard rank-revealing choice).
def default_rank_tol(shape: tuple[int, int]) -> float:
    return max(shape) * np.finfo(float).eps


def _check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite entries in {name}")
    return a


@dataclass
class SVDResult:
    """Full SVD A = U @ diag_rect(S) @ V.T with U (n x n), V (m x m) orthogonal
    and S the min(n, m) singular values in descending order."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def rank(self, tol: float | None = None) -> int:
        if tol is None:
            tol = default_rank_tol((self.U.shape[0], self.V.shape[0]))
        if self.S.size == 0 or self.S[0] == 0.0:
            return 0
        return int(np.sum(self.S > tol * self.S[0]))

    def reconstruct(self) -> np.ndarray:
        k = self.S.size
        return (self.U[:, :k] * self.S) @ self.V[:, :k].T


def _fix_signs(B: np.ndarray) -> np.ndarray:
    """Return the per-column sign flips that make each column's
    largest-magnitude entry positive (+1/-1 vector, deterministic)."""
    if B.shape[1] == 0:
        return np.ones(0)
    idx = np.argmax(np.abs(B), axis=0)
    lead = B[idx, np.arange(B.shape[1])]
    signs = np.where(lead < 0.0, -1.0, 1.0)
    return signs


def svd(A: np.ndarray) -> SVDResult:
    """Full singular-value decomposition with the deterministic sign convention.

    Raises NumericalError on non-finite input or LAPACK non-convergence
    (never silent).
    """
    A = _check_finite(A, "svd input")
    if A.ndim != 2:
        raise NumericalError("svd expects a 2-d array")
    try:
        U, S, Vt = np.linalg.svd(A, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    V = Vt.T
    k = S.size
    # Couple signs of paired columns; orient trailing (null) columns on their own.
    signs = _fix_signs(U[:, :k])
    U[:, :k] *= signs
    V[:, :k] *= signs
    if U.shape[1] > k:
        U[:, k:] *= _fix_signs(U[:, k:])
    if V.shape[1] > k:
        V[:, k:] *= _fix_signs(V[:, k:])
    return SVDResult(U=U, S=S, V=V)


def eig_sym(A: np.ndarray, asym_tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues descending, orthonormal eigenvectors as columns).
    Rejects matrices whose asymmetry exceeds ``asym_tol`` relative to the
    largest entry.
    """
    A = _check_finite(A, "eig_sym input")
    scale = max(1.0, np.abs(A).max() if A.size else 0.0)
    if np.abs(A - A.T).max(initial=0.0) > asym_tol * scale:
        raise NumericalError("eig_sym: input is not symmetric")
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"symmetric eigendecomposition failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    V = V * _fix_signs(V)
    return w, V


def cholesky_solve(A: np.ndarray, B: np.ndarray,
                   max_jitter_retries: int = 6) -> np.ndarray:
    """Solve A @ X = B for symmetric positive-definite A via Cholesky.

    Near-singular matrices are retried with a jitter ladder on the diagonal:
    1e-12 * trace/n, growing tenfold per retry. Raises NumericalError if the
    matrix stays indefinite after the last rung.
    """
    A = _check_finite(A, "cholesky A")
    B = _check_finite(np.asarray(B, dtype=float), "cholesky B")
    n = A.shape[0]
    if A.shape != (n, n):
        raise NumericalError("cholesky_solve: A must be square")
    scale = max(1.0, np.abs(A).max())
    if np.abs(A - A.T).max(initial=0.0) > 1e-8 * scale:
        raise NumericalError("cholesky_solve: A is not symmetric")
    A = 0.5 * (A + A.T)
    base = max(1e-12 * np.trace(A) / n, 1e-300)
    jitter = 0.0
    for attempt in range(max_jitter_retries + 1):
        try:
            L = np.linalg.cholesky(A + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            jitter = base * 10.0 ** attempt
            continue
        X = np.linalg.solve(L.T.conj(), np.linalg.solve(L, B))
        # an overflowing solve (denormal pivots) counts as a failed attempt
        if not np.all(np.isfinite(X)):
            jitter = base * 10.0 ** attempt
            continue
        return X
    raise NumericalError(
        f"cholesky_solve: matrix not positive definite after "
        f"{max_jitter_retries} jitter retries (last jitter {jitter:.3e})")


def pinv(A: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse; singular values below tol * s_max are
    treated as zero."""
    A = _check_finite(A, "pinv input")
    if tol is None:
        tol = default_rank_tol(A.shape)
    res = svd(A)
    # the absolute floor keeps denormal-scale matrices from overflowing 1/S
    if res.S.size == 0 or res.S[0] < 1e-290:
        return np.zeros(A.shape[::-1])
    r = res.rank(tol)
    if r == 0:
        return np.zeros(A.shape[::-1])
    return (res.V[:, :r] / res.S[:r]) @ res.U[:, :r].T


def nullspace(A: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthonormal columns spanning {v : A v = 0} (right nullspace)."""
    A = _check_finite(A, "nullspace input")
    if A.shape[0] == 0:
        # No constraints: the whole domain is the nullspace.
        return np.eye(A.shape[1])
    if tol is None:
        tol = default_rank_tol(A.shape)
    res = svd(A)
    r = res.rank(tol)
    return res.V[:, r:].copy()
