"""Elementary symmetric polynomials and the k-Hessian operator on matrices.

Pure functions on small dense symmetric matrices (n <= 8 at desk scale):
sigma_j of eigenvalue tuples, principal-minor sums, the derivative matrix of
the minor sum, Garding-cone membership, and the Newton-inequality gap used by
the degenerate-ellipticity argument.
"""

from __future__ import annotations

from itertools import combinations
from math import comb

import numpy as np


class DomainError(ValueError):
    """Raised when an order or index is outside its admissible range."""


def sigma(j: int, lam) -> float:
    """Elementary symmetric polynomial sigma_j of the tuple lam.

    sigma_0 = 1 (empty product); sigma_j for j > len(lam) is out of range.
    """
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 0 <= j <= n:
        raise DomainError(f"sigma order must be in [0, {n}], got {j}")
    # stable DP: e[m] accumulates sigma_m while sweeping entries
    e = np.zeros(j + 1)
    e[0] = 1.0
    for x in lam:
        for m in range(j, 0, -1):
            e[m] += x * e[m - 1]
    return float(e[j])


def sigma_batch(lams: np.ndarray, j: int) -> np.ndarray:
    """sigma_j along the last axis of a stacked array of tuples."""
    lams = np.asarray(lams, dtype=float)
    n = lams.shape[-1]
    if not 0 <= j <= n:
        raise DomainError(f"sigma order must be in [0, {n}], got {j}")
    e = [np.ones(lams.shape[:-1])] + [np.zeros(lams.shape[:-1]) for _ in range(j)]
    for i in range(n):
        x = lams[..., i]
        for m in range(j, 0, -1):
            e[m] = e[m] + x * e[m - 1]
    return e[j]


def sigma_partial(j: int, lam, i: int) -> float:
    """sigma_j of lam with the i-th entry deleted (1-based index)."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 1 <= i <= n:
        raise DomainError(f"index must be in [1, {n}], got {i}")
    if not 0 <= j <= n - 1:
        raise DomainError(f"order must be in [0, {n - 1}], got {j}")
    return sigma(j, np.delete(lam, i - 1))


def s_k_minors(M: np.ndarray, k: int) -> float:
    """Sum of all k-by-k principal minors of M.

    Each minor is evaluated by partial-pivoting LU (the LAPACK determinant);
    cost is combinatorial in n and fine at desk scale.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"minor order must be in [1, {n}], got {k}")
    idx = list(combinations(range(n), k))
    total = 0.0
    for S in idx:
        sub = M[np.ix_(S, S)]
        total += float(np.linalg.det(sub))
    return total


def s_k_minors_batch(Ms: np.ndarray, k: int) -> np.ndarray:
    """Principal-minor sum over a stacked array of matrices (..., n, n)."""
    Ms = np.asarray(Ms, dtype=float)
    n = Ms.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"minor order must be in [1, {n}], got {k}")
    total = np.zeros(Ms.shape[:-2])
    for S in combinations(range(n), k):
        S = list(S)
        sub = Ms[..., S, :][..., :, S]
        total = total + np.linalg.det(sub)
    return total


def s_k_eigen(M: np.ndarray, k: int) -> float:
    """sigma_k of the eigenvalues of the symmetric matrix M."""
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"order must be in [1, {n}], got {k}")
    lam = np.linalg.eigvalsh(M)
    return sigma(k, lam)


def s_k_batch(Ms: np.ndarray, k: int) -> np.ndarray:
    """Eigenvalue route of the minor sum, vectorized over stacked matrices."""
    lam = np.linalg.eigvalsh(np.asarray(Ms, dtype=float))
    return sigma_batch(lam, k)


def eigvals_desc(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending."""
    return np.linalg.eigvalsh(np.asarray(M, dtype=float))[..., ::-1]


def s_k_grad(M: np.ndarray, k: int) -> np.ndarray:
    """Matrix of partial derivatives of the minor sum with all n^2 entries
    treated as independent variables.

    Entry (i, j) is the sum, over principal k-subsets containing i and j, of
    the cofactor of position (i, j) in that submatrix.  With this convention
    d/dt s_k(M + tE)|_0 = sum_ij grad_ij E_ij for any perturbation E, so a
    symmetric bump of the pair (i, j), i != j, moves the minor sum by twice
    the off-diagonal entry; the quadratic form sum_ij grad_ij xi_i xi_j of the
    linearized operator needs exactly this normalization.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"order must be in [1, {n}], got {k}")
    G = np.zeros((n, n))
    for S in combinations(range(n), k):
        S = list(S)
        sub = M[np.ix_(S, S)]
        for a, i in enumerate(S):
            for b, j in enumerate(S):
                minor = np.delete(np.delete(sub, a, axis=0), b, axis=1)
                cof = (-1.0) ** (a + b) * (np.linalg.det(minor) if k > 1 else 1.0)
                G[i, j] += cof
    return G


def s_k_grad_batch(Ms: np.ndarray, k: int) -> np.ndarray:
    """Derivative matrices over stacked symmetric matrices (..., n, n).

    Uses the polynomial recursion T_0 = I, T_m = sigma_m(M) I - M T_{m-1};
    T_{k-1} equals the cofactor-sum matrix of s_k_grad (cross-checked in the
    test suite), and vectorizes over grids.
    """
    Ms = np.asarray(Ms, dtype=float)
    n = Ms.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"order must be in [1, {n}], got {k}")
    lam = np.linalg.eigvalsh(Ms)
    eye = np.broadcast_to(np.eye(n), Ms.shape).copy()
    T = eye.copy()
    for m in range(1, k):
        sig_m = sigma_batch(lam, m)
        T = sig_m[..., None, None] * eye - Ms @ T
    return T


def in_garding_cone(lam, k: int, strict: bool = True) -> bool:
    """True iff sigma_j(lam) > 0 (strict) or >= 0 (closure) for j = 1..k."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"order must be in [1, {n}], got {k}")
    for j in range(1, k + 1):
        s = sigma(j, lam)
        if strict and not s > 0.0:
            return False
        if not strict and s < 0.0:
            return False
    return True


def newton_gap(lam_minus_one, k: int) -> float:
    """Slack of the Newton inequality, in the normalization used by the
    degenerate-ellipticity proof, for an (n-1)-tuple.

    For a tuple of length n-1 returns
        (k-1)(n-k) / (k(n-k+1)) * sigma_{k-1}^2 - sigma_k sigma_{k-2},
    which is nonnegative for every real tuple.
    """
    lam = np.asarray(lam_minus_one, dtype=float)
    m = lam.shape[-1]
    n = m + 1
    if not 2 <= k <= n - 1:
        raise DomainError(f"order must be in [2, {n - 1}] for a tuple of length {m}")
    coef = ((k - 1) * (n - k)) / (k * (n - k + 1))
    return coef * sigma(k - 1, lam) ** 2 - sigma(k, lam) * sigma(k - 2, lam)


def binomial(n: int, k: int) -> int:
    return comb(n, k)
