from itertools import combinations
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from khess import symfun


def sigma_bruteforce(j, lam):
    """Independent oracle: explicit sum over j-subsets."""
    if j == 0:
        return 1.0
    total = 0.0
    for idx in combinations(range(len(lam)), j):
        total += float(np.prod([lam[i] for i in idx]))
    return total


finite_tuples = st.lists(
    st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=2, max_size=6)


# ---------------------------------------------------------------------------
# sigma and sigma_partial


def test_sigma_examples():
    assert symfun.sigma(2, (1, 1, 1)) == 3.0
    assert symfun.sigma(0, (3.0, -2.0, 7.0)) == 1.0
    # expand (x+1)(x+2)(x+3): sigma_2 is the coefficient 11
    assert symfun.sigma(2, (1, 2, 3)) == 11.0


def test_sigma_out_of_range():
    with pytest.raises(symfun.DomainError):
        symfun.sigma(4, (1, 2, 3))
    with pytest.raises(symfun.DomainError):
        symfun.sigma(-1, (1, 2, 3))


@given(finite_tuples, st.integers(min_value=0, max_value=6))
@settings(max_examples=200)
def test_sigma_matches_bruteforce(lam, j):
    if j > len(lam):
        return
    expected = sigma_bruteforce(j, lam)
    got = symfun.sigma(j, lam)
    assert abs(got - expected) <= 1e-9 * (1 + abs(expected))


def test_sigma_batch_agrees():
    rng = np.random.default_rng(0)
    lams = rng.normal(size=(40, 5))
    for j in range(6):
        batch = symfun.sigma_batch(lams, j)
        single = np.array([symfun.sigma(j, row) for row in lams])
        assert np.allclose(batch, single, rtol=1e-12, atol=1e-12)


def test_sigma_partial_examples():
    assert symfun.sigma_partial(1, (1, 2, 3), 1) == 5.0
    assert symfun.sigma_partial(2, (1, 2, 3, 4), 2) == 19.0  # sigma_2(1,3,4)
    # deleting any zero entry of (tau, 0, ..., 0) leaves sigma_{k-1} = prod tau
    tau = (2.0, 1.5, 1.0)
    lam = tau + (0.0, 0.0, 0.0)
    for j in range(4, 7):
        assert symfun.sigma_partial(3, lam, j) == pytest.approx(3.0, rel=1e-14)


def test_sigma_partial_range_errors():
    with pytest.raises(symfun.DomainError):
        symfun.sigma_partial(1, (1, 2, 3), 0)
    with pytest.raises(symfun.DomainError):
        symfun.sigma_partial(3, (1, 2, 3), 1)


# ---------------------------------------------------------------------------
# minor sums and the eigenvalue route


def test_monge_ampere_minor_sum():
    # Hessian of (1/2) sum_{i<n} y_i^2 + y_n^4 / 12 evaluated at y_n
    for n in (2, 3, 4):
        for yn in (0.0, 0.3, -1.2):
            M = np.eye(n)
            M[-1, -1] = yn**2
            assert symfun.s_k_minors(M, n) == pytest.approx(yn**2, abs=1e-14)


def test_identity_minor_sum():
    for n in (2, 3, 5):
        for k in range(1, n + 1):
            assert symfun.s_k_minors(np.eye(n), k) == comb(n, k)


def test_minor_sum_matches_eigen_route():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(4, 4))
    M = (A + A.T) / 2
    lam = np.linalg.eigvalsh(M)
    assert symfun.s_k_minors(M, 2) == pytest.approx(symfun.sigma(2, lam), rel=1e-12)


def test_homogeneous_tail_orders():
    # diag(tau, 0, ..., 0) annihilates every order from k on
    tau = (2.0, 1.0)
    n, k = 5, 3
    M = np.diag(list(tau) + [0.0] * (n - k + 1))
    for order in range(k, n + 1):
        assert symfun.s_k_eigen(M, order) == pytest.approx(0.0, abs=1e-12)
        assert symfun.s_k_minors(M, order) == pytest.approx(0.0, abs=1e-12)


def test_eigen_route_matches_minors_5x5():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(5, 5))
    M = (A + A.T) / 2
    for k in range(1, 6):
        a = symfun.s_k_minors(M, k)
        b = symfun.s_k_eigen(M, k)
        assert abs(a - b) <= 1e-9 * (1 + np.linalg.norm(M, 2) ** k)


def test_batch_routes_agree():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(30, 4, 4))
    Ms = (A + np.swapaxes(A, -1, -2)) / 2
    for k in range(1, 5):
        ref = np.array([symfun.s_k_minors(M, k) for M in Ms])
        assert np.allclose(symfun.s_k_minors_batch(Ms, k), ref, rtol=1e-10, atol=1e-10)
        assert np.allclose(symfun.s_k_batch(Ms, k), ref, rtol=1e-8, atol=1e-8)


# ---------------------------------------------------------------------------
# derivative matrix


def test_grad_diagonal_case():
    lam = (3.0, 2.0, 1.0, 0.5)
    M = np.diag(lam)
    for k in (1, 2, 3, 4):
        G = symfun.s_k_grad(M, k)
        expected = np.diag([symfun.sigma_partial(k - 1, lam, i + 1) for i in range(4)])
        assert np.allclose(G, expected, atol=1e-12)


def test_grad_k1_is_identity():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(5, 5))
    M = (A + A.T) / 2
    assert np.allclose(symfun.s_k_grad(M, 1), np.eye(5))


def test_grad_matches_entrywise_fd():
    # independent-entry derivative: bump one entry only (asymmetric probe)
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 4))
    M = (A + A.T) / 2
    h = 1e-5
    for k in (2, 3):
        G = symfun.s_k_grad(M, k)
        fd = np.zeros_like(G)
        for i in range(4):
            for j in range(4):
                Mp = M.copy()
                Mp[i, j] += h
                Mm = M.copy()
                Mm[i, j] -= h
                fd[i, j] = (symfun.s_k_minors(Mp, k) - symfun.s_k_minors(Mm, k)) / (2 * h)
        assert np.max(np.abs(G - fd)) <= 1e-6 * max(1.0, np.max(np.abs(G)))


def test_grad_symmetric_bump_convention():
    # a symmetric bump of the pair (i, j) moves the minor sum by twice the
    # off-diagonal derivative entry
    rng = np.random.default_rng(6)
    A = rng.normal(size=(4, 4))
    M = (A + A.T) / 2
    k, h = 3, 1e-5
    G = symfun.s_k_grad(M, k)
    i, j = 0, 2
    Mp = M.copy()
    Mp[i, j] += h
    Mp[j, i] += h
    Mm = M.copy()
    Mm[i, j] -= h
    Mm[j, i] -= h
    fd = (symfun.s_k_minors(Mp, k) - symfun.s_k_minors(Mm, k)) / (2 * h)
    assert fd == pytest.approx(2 * G[i, j], rel=1e-6)


def test_grad_batch_matches_cofactor_form():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(20, 5, 5))
    Ms = (A + np.swapaxes(A, -1, -2)) / 2
    for k in (2, 3, 4):
        batch = symfun.s_k_grad_batch(Ms, k)
        for m in range(0, 20, 5):
            ref = symfun.s_k_grad(Ms[m], k)
            assert np.allclose(batch[m], ref, rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# cone membership and the Newton gap


def test_garding_examples():
    assert symfun.in_garding_cone((1, 1, 1, 1), 3, strict=True)
    lam = (2.0, 1.0, 0.0, 0.0)
    assert symfun.in_garding_cone(lam, 3, strict=False)
    assert not symfun.in_garding_cone(lam, 3, strict=True)
    assert not symfun.in_garding_cone((3, -1, -1), 2, strict=True)  # sigma_2 = -5


def test_newton_gap_examples():
    # all-ones tuple is the equality case in this normalization
    for n, k in ((4, 2), (5, 3), (6, 4)):
        gap = symfun.newton_gap(np.ones(n - 1), k)
        assert abs(gap) < 1e-12
    # one zero entry shrinks the product term
    assert symfun.newton_gap((2.0, 1.0, 0.0), 2) >= 0.0


def test_newton_gap_random_battery():
    rng = np.random.default_rng(8)
    for _ in range(10_000):
        m = rng.integers(3, 6)
        lam = rng.normal(size=m) * 3
        k = rng.integers(2, m + 1)  # k <= n-1 = m
        assert symfun.newton_gap(lam, k) >= -1e-12 * max(1.0, np.max(np.abs(lam)) ** (2 * k))


# ---------------------------------------------------------------------------
# algebraic invariants (property tests)


@given(finite_tuples, st.integers(min_value=1, max_value=6),
       st.integers(min_value=1, max_value=6))
@settings(max_examples=200)
def test_expansion_identity(lam, k, i):
    # sigma_k = lam_i sigma_{k-1, i} + sigma_{k, i}
    n = len(lam)
    if not (1 <= k <= n - 1 and 1 <= i <= n):
        return
    lhs = symfun.sigma(k, lam)
    rhs = lam[i - 1] * symfun.sigma_partial(k - 1, lam, i) + symfun.sigma_partial(k, lam, i)
    scale = max(abs(lhs), abs(rhs), 1.0)
    assert abs(lhs - rhs) <= 1e-12 * scale


@given(finite_tuples)
@settings(max_examples=200)
def test_quadratic_identity(lam):
    # 2 sigma_2 = sigma_1^2 - sum lam_i^2
    lhs = 2 * symfun.sigma(2, lam)
    rhs = symfun.sigma(1, lam) ** 2 - sum(x**2 for x in lam)
    scale = max(abs(lhs), abs(rhs), 1.0)
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_orthogonal_invariance():
    rng = np.random.default_rng(9)
    for n in (3, 4, 6):
        A = rng.normal(size=(n, n))
        M = (A + A.T) / 2
        Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        M2 = Q @ M @ Q.T
        for k in range(1, n + 1):
            a = symfun.s_k_minors(M, k)
            b = symfun.s_k_minors(M2, k)
            assert abs(a - b) <= 1e-9 * (1 + np.linalg.norm(M, 2) ** k)
