"""Convexity certification and eigenstructure perturbation checks.

Strict convexity of a candidate solution is certified by the segment
criterion: for endpoints y != z and t in (0, 1), the double integral of the
Hessian along the family x(s, mu) = (s mu + (1-s) t) y + (s(1-mu) +
(1-s)(1-t)) z, contracted twice with y - z, must be positive.  This is
weaker than pointwise positive definiteness and is exactly what degenerate
problems admit: the model solution of det D2u = y_n^2 has a vanishing
Hessian eigenvalue at the origin yet positive segment margins.

The module also measures the diagonal-dominance margin of the tail Hessian
block of an assembled composite Hessian field, the flatness of the
perturbation field on the degenerate slice x'' = 0, and the eigenvalue /
eigenvector perturbation bounds for diag(tau, 0) + eps * hess(w~), with the
leading eigenvectors cross-computed by the elimination closed form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .approx import ProblemSpec
from .field import GridField, cnorm, derivative, hessian_entries, interior_slices


class QuadratureError(RuntimeError):
    """Quadrature orders q and q+4 disagree beyond tolerance."""


# ---------------------------------------------------------------------------
# segment convexity


@dataclass(frozen=True)
class SegmentTest:
    y: np.ndarray
    z: np.ndarray
    t: float
    order: int = 12

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if y.shape != z.shape or y.ndim != 1:
            raise ValueError("endpoints must be vectors of equal length")
        if np.allclose(y, z):
            raise ValueError("endpoints must differ")
        if not 0.0 < self.t < 1.0:
            raise ValueError("t must lie in (0, 1)")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)


def _segment_nodes(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    return nodes, weights


def _averaged_hessian(hess_fn, Y, Z, T, order):
    """Integral over (s, mu) of hess(x(s, mu)) for a batch of segments."""
    s, ws = _segment_nodes(order)
    a = s[:, None] * s[None, :] * 0.0  # placeholder shape (q, q)
    S = s[:, None]
    MU = s[None, :]
    coef = S * MU + (1.0 - S) * np.asarray(T, dtype=float)[:, None, None]
    X = coef[..., None] * Y[:, None, None, :] + (1.0 - coef)[..., None] * Z[:, None, None, :]
    H = hess_fn(X.reshape(-1, Y.shape[-1])).reshape(X.shape[:-1] + (Y.shape[-1],) * 2)
    W = (ws[:, None] * ws[None, :])[None, ..., None, None]
    return np.sum(H * W, axis=(1, 2))


def segment_margin_batch(hess_fn, Y, Z, T, order: int = 12) -> np.ndarray:
    """Margins of a batch of segment tests, with an order-escalation
    consistency check (orders q and q+4 must agree)."""
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    T = np.asarray(T, dtype=float)
    xi = Y - Z
    out = []
    for q in (order, order + 4):
        Hbar = _averaged_hessian(hess_fn, Y, Z, T, q)
        out.append(np.einsum("mij,mi,mj->m", Hbar, xi, xi))
    disagree = np.abs(out[0] - out[1])
    tol = 1e-8 * np.maximum(1.0, np.abs(out[0]))
    if np.any(disagree > tol):
        worst = int(np.argmax(disagree - tol))
        raise QuadratureError(
            f"orders {order} and {order + 4} disagree by {disagree[worst]:.3e} "
            f"on segment {worst}")
    return out[1]


def segment_convexity(hess_fn, test: SegmentTest) -> float:
    """Margin of one segment test (> 0 certifies strict convexity along it)."""
    return float(segment_margin_batch(hess_fn, test.y[None], test.z[None],
                                      np.array([test.t]), test.order)[0])


def segment_weight(Y, Z, T, k: int, order: int = 12) -> np.ndarray:
    """The tail quadratic weight b(t) = integral of |x''(s, mu)|^2 over the
    segment family (positive whenever the tail endpoints differ from zero on
    a set of positive measure)."""
    s, ws = _segment_nodes(order)
    S = s[:, None]
    MU = s[None, :]
    coef = S * MU + (1.0 - S) * np.asarray(T, dtype=float)[:, None, None]
    Yt = np.asarray(Y, dtype=float)[:, None, None, k - 1:]
    Zt = np.asarray(Z, dtype=float)[:, None, None, k - 1:]
    tail = coef[..., None] * Yt + (1.0 - coef)[..., None] * Zt
    W = (ws[:, None] * ws[None, :])[None, ...]
    return np.sum(np.sum(tail**2, axis=-1) * W, axis=(1, 2))


def random_segment_battery(spec: ProblemSpec, count: int, rng,
                           through_origin: int = 0):
    """Random (y, z, t) triples inside the working box; optionally the first
    through_origin of them are symmetric through the origin."""
    ext = spec.box_extents()
    Y = rng.uniform(-1.0, 1.0, size=(count, spec.n)) * ext
    Z = rng.uniform(-1.0, 1.0, size=(count, spec.n)) * ext
    T = rng.uniform(0.05, 0.95, size=count)
    for i in range(min(through_origin, count)):
        Z[i] = -Y[i]
    # drop accidental coincidences
    bad = np.all(np.abs(Y - Z) < 1e-15, axis=1)
    Z[bad] += ext * 1e-3
    return Y, Z, T


# ---------------------------------------------------------------------------
# diagonal dominance of the assembled composite Hessian


@dataclass(frozen=True)
class DominanceMarginReport:
    min_margin: float
    worst_point_index: tuple
    worst_axis: int
    mixed_block_constant: float
    roundoff: float

    @property
    def passed(self) -> bool:
        # the margin is exactly zero on the degenerate slice whenever the
        # model vanishes on it, so "nonnegative" is checked up to the
        # floating-point fan-in of the assembled entries
        return self.min_margin >= -self.roundoff


def dominance_margin(rfield: np.ndarray, grid, spec: ProblemSpec,
                     alpha: float | None = None) -> DominanceMarginReport:
    """min over the grid and tail axes j of
    r_jj - sum_{i >= k, i != j} |r_ij| - alpha eps^4 |x''|^2,
    plus the measured constant of the mixed-block bound
    |r_ij| <= C (eps^4 |x''| + eps^{9/2} |x''|^2) for i < k <= j."""
    if alpha is None:
        alpha = spec.alpha
    kk = spec.k - 1
    pts = grid.points()
    x2 = np.sum(pts[..., kk:] ** 2, axis=-1)
    tail = rfield[..., kk:, kk:]
    diag = np.diagonal(tail, axis1=-2, axis2=-1)
    offsum = np.sum(np.abs(tail), axis=-1) - np.abs(diag)
    margin = diag - offsum - (alpha * spec.epsilon**4 * x2)[..., None]
    flat = np.argmin(margin)
    worst = np.unravel_index(flat, margin.shape)

    mixed_c = 0.0
    if kk > 0:
        absx = np.sqrt(x2)
        denom = spec.epsilon**4 * absx + spec.epsilon**4.5 * x2
        mask = absx > 1e-12
        mixed = np.max(np.abs(rfield[..., :kk, kk:]), axis=(-2, -1))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mask, mixed / np.where(mask, denom, 1.0), 0.0)
        mixed_c = float(np.max(ratio))
    roundoff = 64.0 * np.finfo(float).eps * float(
        np.max(np.abs(rfield)) + alpha * spec.epsilon**4 * np.max(x2))
    return DominanceMarginReport(float(np.min(margin)), worst[:-1],
                                 int(worst[-1] + spec.k), mixed_c, roundoff)


# ---------------------------------------------------------------------------
# boundary flatness of the perturbation field


@dataclass(frozen=True)
class FlatnessReport:
    second_slice_max: float
    second_interior_max: float
    third_slice_max: float
    third_interior_max: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.second_slice_max, self.third_slice_max) <= self.tol

    @property
    def slice_ratio(self) -> float:
        """Slice maximum of the checked derivative fields relative to their
        interior maximum.

        At finite epsilon only the tail trace and tail diagonal entries
        vanish on the degenerate slice pointwise; the mixed entries vanish
        in the localization limit, so the flatness signal is normalized by
        the overall interior scale of the checked fields."""
        num = max(self.second_slice_max, self.third_slice_max)
        den = max(self.second_interior_max, self.third_interior_max, 1e-300)
        return num / den


def flatness_tol(h: float, theta_res: float, sigma_tau: float) -> float:
    """Discrete flatness budget: O(h^2) stencil error plus the residual-level
    trace slack theta / sigma_{k-1}(tau)."""
    return max(10.0 * h**2, 10.0 * theta_res / sigma_tau)


def boundary_flatness(w: GridField, spec: ProblemSpec,
                      theta_res: float = 0.0) -> FlatnessReport:
    """Maxima over the degenerate slice x'' = 0 of |d_i d_j w| (i or j in the
    tail block) and |d_i d_j d_p w| (p in the tail block), against the
    interior maxima of the same derivative fields."""
    grid = w.grid
    kk = spec.k - 1
    mid = tuple(slice(None) if a < kk else grid.shape[a] // 2
                for a in range(grid.n))
    hw = hessian_entries(w)
    s2_slice = s2_int = 0.0
    s3_slice = s3_int = 0.0
    for (i, j), vals in hw.items():
        if i < kk and j < kk:
            continue
        s2_slice = max(s2_slice, float(np.max(np.abs(vals[mid]))))
        s2_int = max(s2_int, float(np.max(np.abs(vals))))
        fij = GridField(vals, grid)
        for p in range(kk, grid.n):
            third = derivative(fij, p, 1).values
            s3_slice = max(s3_slice, float(np.max(np.abs(third[mid]))))
            s3_int = max(s3_int, float(np.max(np.abs(third))))
    h = max(grid.spacing(a) for a in range(kk, grid.n))
    tol = flatness_tol(h, theta_res, spec.sigma_tau)
    return FlatnessReport(s2_slice, s2_int, s3_slice, s3_int, tol)


# ---------------------------------------------------------------------------
# eigenvalue / eigenvector perturbation


class GapCollapseError(RuntimeError):
    """Leading eigenvalue gaps fell below the tolerance; eps too large."""


@dataclass(frozen=True)
class EigenPerturbation:
    """Pointwise eigenstructure of diag(tau, 0) + eps * hess(w~): eigenvalues
    sorted descending, the first k-1 unit eigenvector rows from the
    eigensolver and from the elimination closed form (both with positive
    diagonal sign convention)."""

    lam: np.ndarray          # grid.shape + (n,)
    T_eig: np.ndarray        # grid.shape + (k-1, n)
    T_closed: np.ndarray     # grid.shape + (k-1, n)
    gap_tol: float
    eps: float
    tau: tuple

    def closed_form_agreement(self) -> float:
        return float(np.max(np.abs(self.T_eig - self.T_closed)))


def _gap_tol(tau) -> float:
    diffs = [a - b for a, b in zip(tau, tau[1:])]
    diffs.append(tau[-1])  # separation of the last head eigenvalue from 0
    return 0.25 * min(diffs)


def eig_perturb(tau, w_tilde: GridField, eps: float) -> EigenPerturbation:
    """Eigen-decompose r = diag(tau, 0) + eps * hess(w~) at every grid point.

    The head eigenvectors (rows 1..k-1) are recomputed by eliminating the
    deleted row/column system (r - lam I restricted away from the pivot) and
    cross-checked against the eigensolver.  Collapsed head gaps raise
    GapCollapseError: eps is too large for the perturbation series.
    """
    grid = w_tilde.grid
    n = grid.n
    k = grid.k
    tau = tuple(float(t) for t in tau)
    if len(tau) != k - 1:
        raise ValueError("tau must have length k-1")
    c3 = cnorm(w_tilde, min(3, grid.norm_order_cap()))
    if c3 > 1.0 + 1e-9:
        warnings.warn(f"perturbation field C^3 norm {c3:.3g} exceeds 1",
                      stacklevel=2)
    hw = hessian_entries(w_tilde)
    P = int(np.prod(grid.shape))
    r = np.zeros((P, n, n))
    for (i, j), vals in hw.items():
        r[:, i, j] += eps * vals.reshape(-1)
        if i != j:
            r[:, j, i] += eps * vals.reshape(-1)
    for a, t in enumerate(tau):
        r[:, a, a] += t

    lam_asc, vec = np.linalg.eigh(r)
    lam = lam_asc[:, ::-1]
    vec = vec[:, :, ::-1]  # column m is the eigenvector of lam[:, m]

    gap_tol = _gap_tol(tau)
    head = lam[:, : k - 1]
    # separation of each head eigenvalue from every other eigenvalue
    for i in range(k - 1):
        others = np.concatenate([lam[:, :i], lam[:, i + 1:]], axis=1)
        sep = np.min(np.abs(others - head[:, i:i + 1]), axis=1)
        if np.min(sep) < gap_tol:
            raise GapCollapseError(
                f"head eigenvalue {i + 1} gap {np.min(sep):.3e} below "
                f"tolerance {gap_tol:.3e}; eps too large")

    T_eig = np.swapaxes(vec[:, :, : k - 1], 1, 2).copy()
    sign = np.sign(np.take_along_axis(
        T_eig, np.arange(k - 1)[None, :, None], axis=2))
    sign[sign == 0] = 1.0
    T_eig *= sign

    T_closed = np.zeros_like(T_eig)
    idx_all = np.arange(n)
    for i in range(k - 1):
        rest = np.delete(idx_all, i)
        B = r - lam[:, i, None, None] * np.eye(n)
        M = B[:, rest[:, None], rest[None, :]]
        rhs = -B[:, rest, i]
        v_rest = np.linalg.solve(M, rhs[..., None])[..., 0]
        v = np.zeros((P, n))
        v[:, i] = 1.0
        v[:, rest] = v_rest
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        T_closed[:, i, :] = v

    shape = grid.shape
    return EigenPerturbation(lam.reshape(shape + (n,)),
                             T_eig.reshape(shape + (k - 1, n)),
                             T_closed.reshape(shape + (k - 1, n)),
                             gap_tol, float(eps), tau)


@dataclass(frozen=True)
class PerturbationRatios:
    """Measured constants of the perturbation bounds: each is the grid max
    of the quantity divided by its asserted majorant."""

    head_eigenvalue: float   # sum_{i<k} |lam_i - tau_i| vs eps * sum |w~_ij|
    tail_eigenvalue: float   # sum_{i>=k} |lam_i| vs sqrt(eps * sum |w~_ij|)
    eigenvector: float       # diagonal deviation + off-diagonal mass vs eps * sum |w~_ij|
    derivative: float        # sum |D T_ij| vs eps * sum |w~_ijl|


def perturbation_ratios(ep: EigenPerturbation, w_tilde: GridField) -> PerturbationRatios:
    grid = w_tilde.grid
    k = grid.k
    hw = hessian_entries(w_tilde)
    wsum = np.zeros(grid.shape)
    for (i, j), vals in hw.items():
        wsum += np.abs(vals) * (1.0 if i == j else 2.0)
    mask = wsum > 1e-10 * max(1.0, float(np.max(wsum)))

    def masked_max(num, den):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mask, num / np.where(mask, den, 1.0), 0.0)
        return float(np.max(ratio))

    tau = np.asarray(ep.tau)
    head_dev = np.sum(np.abs(ep.lam[..., : k - 1] - tau), axis=-1)
    tail_dev = np.sum(np.abs(ep.lam[..., k - 1:]), axis=-1)
    r_head = masked_max(head_dev, ep.eps * wsum)
    r_tail = masked_max(tail_dev, np.sqrt(ep.eps * wsum))

    idx = np.arange(k - 1)
    diag = ep.T_eig[..., idx, idx]
    off = np.sum(np.abs(ep.T_eig), axis=-1) - np.abs(diag)
    vec_dev = np.sum(np.abs(diag - 1.0), axis=-1) + np.sum(off, axis=-1)
    r_vec = masked_max(vec_dev, ep.eps * wsum)

    # third-derivative mass and eigenvector gradients (closed-form rows)
    w3 = np.zeros(grid.shape)
    for (i, j), vals in hw.items():
        fij = GridField(vals, grid)
        for axis in range(grid.n):
            w3 += np.abs(derivative(fij, axis, 1).values) * (1.0 if i == j else 2.0)
    dT = np.zeros(grid.shape)
    for i in range(k - 1):
        for j in range(grid.n):
            f = GridField(ep.T_closed[..., i, j], grid)
            for axis in range(grid.n):
                dT += np.abs(derivative(f, axis, 1).values)
    mask3 = w3 > 1e-10 * max(1.0, float(np.max(w3)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask3, dT / np.where(mask3, ep.eps * w3, 1.0), 0.0)
    r_der = float(np.max(ratio))
    return PerturbationRatios(r_head, r_tail, r_vec, r_der)
