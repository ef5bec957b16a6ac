"""Assembly and solution of the regularized, weighted linearized problem.

The linearization of the scaled residual map at a perturbation field w has
coefficient matrix S_k^{ij} evaluated on the composite Hessian

    r(w) = diag(tau, 0) + corrector_hess(eps^2 x) + eps^{9/2} * hess(w)(x),

is degenerate elliptic after adding theta * Laplacian (theta the sup of the
residual), and is solved here after two standard transformations: the change
of unknown rho -> rho * exp(mu * sum_{j>=k} x_j^2), which produces drift and
zero-order coefficients and makes the bilinear form coercive, and a small
nu * Laplacian regularization that makes the discrete problem uniformly
elliptic.  Discretization is second-order centered finite differences for
every derivative including cross terms, periodic in x', homogeneous
Dirichlet on the x''-box faces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import symfun
from .approx import ApproxSolution
from .field import GridField, GridSpec, derivative, hessian_entries, sobolev_norm

# Extra smoothness budget for a right side depending on (y, u, Du); the
# pure-curvature case solved here needs none.
REGULARITY_SHIFT = 0


class SolverError(RuntimeError):
    """Linear solve failed to reach the requested residual."""


def default_weight_exponent(delta0: float) -> float:
    """Weight exponent mu: large enough for coercivity, small enough that
    mu * delta0 <= 1/2 keeps the zero-order coefficient bounded."""
    return 0.5 * min(1.0 / delta0, 4.0)


# ---------------------------------------------------------------------------
# composite Hessian field and raw residual


@lru_cache(maxsize=64)
def _fd2_axis_matrix(npoints: int, spacing: float, order: int,
                     periodic: bool) -> np.ndarray:
    """Second-order-accurate differentiation matrix matching the stencils of
    the assembled operator (centered; wrap if periodic, one-sided at the
    Dirichlet boundary rows, which carry no unknowns)."""
    D = np.zeros((npoints, npoints))
    h = spacing
    if order == 1:
        lo, hi = -0.5 / h, 0.5 / h
        for i in range(npoints):
            if periodic:
                D[i, (i - 1) % npoints] += lo
                D[i, (i + 1) % npoints] += hi
            elif i == 0:
                D[i, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
            elif i == npoints - 1:
                D[i, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
            else:
                D[i, i - 1] += lo
                D[i, i + 1] += hi
    elif order == 2:
        c = 1.0 / h**2
        for i in range(npoints):
            if periodic:
                D[i, (i - 1) % npoints] += c
                D[i, i] += -2.0 * c
                D[i, (i + 1) % npoints] += c
            elif i == 0:
                D[i, :4] = np.array([2.0, -5.0, 4.0, -1.0]) * c
            elif i == npoints - 1:
                D[i, -4:] = np.array([-1.0, 4.0, -5.0, 2.0]) * c
            else:
                D[i, i - 1] += c
                D[i, i] += -2.0 * c
                D[i, i + 1] += c
    else:
        raise ValueError("order must be 1 or 2")
    return D


def _apply_axis(values: np.ndarray, D: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    return np.moveaxis(moved @ D.T, -1, axis)


def consistent_hessian_entries(w: GridField) -> dict:
    """Second partials of w with the same second-order stencils the operator
    matrix uses, so the assembled linearization is the exact Jacobian of the
    discrete residual at the interior rows."""
    grid = w.grid
    mats1 = [_fd2_axis_matrix(grid.shape[a], grid.spacing(a), 1, grid.is_periodic(a))
             for a in range(grid.n)]
    mats2 = [_fd2_axis_matrix(grid.shape[a], grid.spacing(a), 2, grid.is_periodic(a))
             for a in range(grid.n)]
    firsts = [_apply_axis(w.values, mats1[a], a) for a in range(grid.n)]
    out = {}
    for i in range(grid.n):
        out[(i, i)] = _apply_axis(w.values, mats2[i], i)
        for j in range(i + 1, grid.n):
            out[(i, j)] = _apply_axis(firsts[i], mats1[j], j)
    return out


def hessian_field(w: GridField, approx: ApproxSolution,
                  stencil: str = "consistent") -> np.ndarray:
    """r(w) over the grid, shape grid.shape + (n, n).

    stencil 'consistent' differentiates w with the operator's own
    second-order stencils (discrete-Newton consistency); 'accurate' uses the
    spectral/FD4 derivatives of the field module.
    """
    spec = approx.spec
    grid = w.grid
    if (grid.n, grid.k) != (spec.n, spec.k):
        raise ValueError("grid and problem spec disagree on (n, k)")
    pts = grid.points()
    r = approx.corrector_hess(pts * spec.epsilon**2)
    scale = spec.epsilon ** 4.5
    if np.any(w.values):
        if stencil == "consistent":
            hw = consistent_hessian_entries(w)
        elif stencil == "accurate":
            hw = hessian_entries(w)
        else:
            raise ValueError(f"unknown stencil {stencil!r}")
        for (i, j), vals in hw.items():
            r[..., i, j] += scale * vals
            if i != j:
                r[..., j, i] += scale * vals
    for a, t in enumerate(spec.tau):
        r[..., a, a] += t
    return r


def raw_residual(w: GridField, approx: ApproxSolution) -> np.ndarray:
    """Scaled residual G(w) = eps^{-9/2} (S_k(r(w)) - target) on the grid."""
    spec = approx.spec
    r = hessian_field(w, approx)
    target = approx.target(w.grid.points() * spec.epsilon**2)
    return (symfun.s_k_batch(r, spec.k) - target) / spec.epsilon**4.5


# ---------------------------------------------------------------------------
# discrete operators on the interior unknowns


@dataclass(frozen=True)
class _Stencils:
    interior_shape: tuple
    n_unknowns: int
    full_flat: np.ndarray        # full-grid flat index of each unknown
    d1: tuple                    # first-derivative operators per axis
    d2: tuple                    # pure second derivatives per axis
    cross: dict                  # mixed second derivatives, keys (a, b), a < b
    volume_element: float


def _offset_links(grid: GridSpec, interior_shape, offsets):
    """Row/col index pairs of one stencil offset on the interior unknowns."""
    P = int(np.prod(interior_shape))
    multi = np.unravel_index(np.arange(P), interior_shape)
    valid = np.ones(P, dtype=bool)
    target = []
    for a in range(grid.n):
        if grid.is_periodic(a):
            idx = (multi[a] + offsets.get(a, 0)) % grid.shape[a]
        else:
            # full-grid index on a Dirichlet axis; neighbors landing on the
            # boundary rows (homogeneous data) are dropped
            full = multi[a] + 1 + offsets.get(a, 0)
            valid &= (full >= 1) & (full <= grid.shape[a] - 2)
            idx = np.clip(full - 1, 0, interior_shape[a] - 1)
        target.append(idx)
    rows = np.arange(P)[valid]
    cols = np.ravel_multi_index([t[valid] for t in target], interior_shape)
    return rows, cols


def _stencil_matrix(grid: GridSpec, interior_shape, terms) -> sp.csr_matrix:
    """Operator from a list of (offsets dict, weight)."""
    P = int(np.prod(interior_shape))
    rows, cols, vals = [], [], []
    for offsets, weight in terms:
        r, c = _offset_links(grid, interior_shape, offsets)
        rows.append(r)
        cols.append(c)
        vals.append(np.full(len(r), weight))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(P, P)).tocsr()


@lru_cache(maxsize=16)
def _stencils(grid: GridSpec) -> _Stencils:
    interior_shape = tuple(
        m if grid.is_periodic(a) else m - 2 for a, m in enumerate(grid.shape))
    P = int(np.prod(interior_shape))
    multi = np.unravel_index(np.arange(P), interior_shape)
    full_multi = [m if grid.is_periodic(a) else m + 1 for a, m in enumerate(multi)]
    full_flat = np.ravel_multi_index(full_multi, grid.shape)

    d1, d2 = [], []
    for a in range(grid.n):
        h = grid.spacing(a)
        d1.append(_stencil_matrix(grid, interior_shape,
                                  [({a: 1}, 0.5 / h), ({a: -1}, -0.5 / h)]))
        d2.append(_stencil_matrix(grid, interior_shape,
                                  [({a: 1}, 1.0 / h**2), ({a: 0}, -2.0 / h**2),
                                   ({a: -1}, 1.0 / h**2)]))
    cross = {}
    for a in range(grid.n):
        for b in range(a + 1, grid.n):
            ha, hb = grid.spacing(a), grid.spacing(b)
            w = 0.25 / (ha * hb)
            cross[(a, b)] = _stencil_matrix(grid, interior_shape, [
                ({a: 1, b: 1}, w), ({a: 1, b: -1}, -w),
                ({a: -1, b: 1}, -w), ({a: -1, b: -1}, w)])
    vol = float(np.prod([grid.spacing(a) for a in range(grid.n)]))
    return _Stencils(interior_shape, P, full_flat, tuple(d1), tuple(d2), cross, vol)


def extract_interior(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    st = _stencils(grid)
    return values.reshape(-1)[st.full_flat]


def embed_interior(grid: GridSpec, vec: np.ndarray) -> np.ndarray:
    st = _stencils(grid)
    full = np.zeros(int(np.prod(grid.shape)))
    full[st.full_flat] = vec
    return full.reshape(grid.shape)


# ---------------------------------------------------------------------------
# the linear problem


@dataclass(frozen=True)
class LinearProblem:
    """Coefficients of the weighted, regularized linearized equation
    sum a_ij d_i d_j rho + sum b_i d_i rho + c rho = g_rhs on the grid,
    with a_ij = S_k^{ij}(r(w)) + delta_ij (theta + nu)."""

    grid: GridSpec
    a: np.ndarray        # grid.shape + (n, n)
    b: np.ndarray        # grid.shape + (n,)
    c: np.ndarray        # grid.shape
    g_rhs: np.ndarray | None
    mu_weight: float
    nu: float
    theta: float

    def with_rhs(self, g: GridField) -> "LinearProblem":
        """Attach an (unweighted) right side; it is weighted here."""
        q = self._tail_square()
        weighted = np.exp(self.mu_weight * q) * g.values
        return LinearProblem(self.grid, self.a, self.b, self.c, weighted,
                             self.mu_weight, self.nu, self.theta)

    def with_weighted_rhs(self, values: np.ndarray) -> "LinearProblem":
        """Attach the right side of the weighted system as-is (manufactured
        solutions of the assembled operator)."""
        return LinearProblem(self.grid, self.a, self.b, self.c,
                             np.asarray(values, dtype=float),
                             self.mu_weight, self.nu, self.theta)

    def _tail_square(self) -> np.ndarray:
        pts = self.grid.points()
        return np.sum(pts[..., self.grid.k - 1:] ** 2, axis=-1)


def assemble_from_hessian(rfield: np.ndarray, grid: GridSpec, k: int,
                          theta: float, nu: float,
                          mu: float | None = None) -> LinearProblem:
    """Coefficients of the weighted regularized problem for a given
    composite-Hessian field: a = S_k^{ij}(r) + (theta + nu) I, with the
    drift b and zero-order c produced by the exponential change of unknown
    rho -> rho exp(mu sum_{j>=k} x_j^2)."""
    if not 0 < nu < 1:
        raise ValueError("nu must lie in (0, 1)")
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if mu is None:
        mu = default_weight_exponent(grid.delta0)
    Sg = symfun.s_k_grad_batch(rfield, k)
    n = grid.n
    kk = k - 1
    a = Sg + (theta + nu) * np.eye(n)

    pts = grid.points()
    mx = mu * pts  # mu * x_j fields
    # b_i = -4 sum_{j>=k} (mu x_j) S^{ij}  (- 4 mu x_i theta extra for i >= k)
    b = -4.0 * np.einsum("...j,...ij->...i", mx[..., kk:], Sg[..., :, kk:])
    b[..., kk:] -= 4.0 * theta * mx[..., kk:]
    # c = -2 mu sum_{i>=k} (S^{ii} + theta)
    #     + 4 sum_{i,j>=k} (mu x_i)(mu x_j) S^{ij} + 4 theta sum_{i>=k} (mu x_i)^2
    diag_tail = np.einsum("...ii->...i", Sg[..., kk:, kk:])
    c = (-2.0 * mu * (np.sum(diag_tail, axis=-1) + theta * (n - kk))
         + 4.0 * np.einsum("...i,...j,...ij->...",
                           mx[..., kk:], mx[..., kk:], Sg[..., kk:, kk:])
         + 4.0 * theta * np.sum(mx[..., kk:] ** 2, axis=-1))
    return LinearProblem(grid, a, b, c, None, float(mu), float(nu), float(theta))


def assemble(w: GridField, approx: ApproxSolution, theta: float, nu: float,
             mu: float | None = None, g: GridField | None = None) -> LinearProblem:
    """Pointwise coefficients of the weighted regularized problem at the
    composite Hessian r(w).

    A C-norm budget breach of w (the hypothesis under which the a priori
    estimates are proved) is a warning, not an error.
    """
    grid = w.grid
    spec = approx.spec
    budget_order = min(spec.n // 2 + 3, grid.norm_order_cap())
    from .field import cnorm  # local import to keep module load light
    wnorm = cnorm(w, budget_order)
    if wnorm > 1.0 + 1e-9:
        warnings.warn(
            f"perturbation C^{budget_order} norm {wnorm:.3g} exceeds 1; "
            "a priori estimates are no longer guaranteed", stacklevel=2)
    r = hessian_field(w, approx)
    prob = assemble_from_hessian(r, grid, spec.k, theta, nu, mu)
    if g is not None:
        prob = prob.with_rhs(g)
    return prob


def operator_matrix(prob: LinearProblem) -> sp.csr_matrix:
    """Sparse matrix of the discrete operator on the interior unknowns."""
    grid = prob.grid
    st = _stencils(grid)
    n = grid.n
    A = sp.csr_matrix((st.n_unknowns, st.n_unknowns))
    for i in range(n):
        coef = extract_interior(grid, prob.a[..., i, i])
        A = A + sp.diags(coef) @ st.d2[i]
        for j in range(i + 1, n):
            coef = extract_interior(grid, 2.0 * prob.a[..., i, j])
            A = A + sp.diags(coef) @ st.cross[(i, j)]
        bi = extract_interior(grid, prob.b[..., i])
        if np.any(bi):
            A = A + sp.diags(bi) @ st.d1[i]
    A = A + sp.diags(extract_interior(grid, prob.c))
    return A.tocsr()


def apply_operator(prob: LinearProblem, rho: GridField) -> GridField:
    """Discrete operator applied to a field (boundary rows return zero)."""
    A = operator_matrix(prob)
    vec = A @ extract_interior(prob.grid, rho.values)
    return GridField(embed_interior(prob.grid, vec), prob.grid)


def solve(prob: LinearProblem, rtol: float = 1e-10) -> GridField:
    """Solve the assembled problem and undo the exponential weight.

    Direct sparse factorization for 2D problems; ILU-preconditioned GMRES
    (direct fallback) for three axes and up.
    """
    if prob.g_rhs is None:
        raise ValueError("problem has no right side; use with_rhs")
    grid = prob.grid
    st = _stencils(grid)
    rhs = extract_interior(grid, prob.g_rhs)
    if not np.any(rhs):
        return GridField(np.zeros(grid.shape), grid)
    A = operator_matrix(prob)
    x = None
    if grid.n >= 3:
        try:
            ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=10.0)
            M = spla.LinearOperator(A.shape, ilu.solve)
            x, info = spla.gmres(A, rhs, M=M, rtol=rtol, atol=0.0,
                                 restart=60, maxiter=400)
            if info != 0:
                x = None
        except RuntimeError:
            x = None
    if x is None:
        try:
            x = spla.splu(A.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    res = float(np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs))
    if res > 1e-6:
        raise SolverError(f"linear solve stalled at relative residual {res:.3e}")
    weighted = embed_interior(grid, x)
    q = prob._tail_square()
    return GridField(weighted * np.exp(-prob.mu_weight * q), grid)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class EllipticityReport:
    min_form: float
    theta: float
    n_directions: int
    worst_point_index: tuple

    @property
    def passed(self) -> bool:
        return self.min_form >= -1e-8


def direction_battery(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Coordinate axes plus seeded random unit directions."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(max(count - n, 0), n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.vstack([np.eye(n), dirs])


def check_degenerate_ellipticity(w: GridField, approx: ApproxSolution,
                                 theta: float, directions: int = 1024,
                                 seed: int = 0) -> EllipticityReport:
    """Minimum over grid points and sampled unit directions of
    theta |xi|^2 + sum_ij S_k^{ij} xi_i xi_j."""
    spec = approx.spec
    r = hessian_field(w, approx)
    Sg = symfun.s_k_grad_batch(r, spec.k).reshape(-1, spec.n, spec.n)
    dirs = direction_battery(spec.n, directions, seed)
    best = np.inf
    worst = 0
    chunk = max(1, 2**22 // (dirs.shape[0] * spec.n))
    for start in range(0, Sg.shape[0], chunk):
        block = Sg[start:start + chunk]
        quad = np.einsum("pij,mi,mj->pm", block, dirs, dirs)
        quad = quad + theta  # theta |xi|^2 with unit directions
        m = float(np.min(quad))
        if m < best:
            best = m
            worst = start + int(np.argmin(np.min(quad, axis=1)))
    return EllipticityReport(best, theta, dirs.shape[0],
                             np.unravel_index(worst, w.grid.shape))


def ellipticity_threshold(w: GridField, approx: ApproxSolution,
                          eps_lo: float = 1e-4, eps_hi: float = 0.5,
                          directions: int = 512, seed: int = 0,
                          iters: int = 20) -> float:
    """Largest epsilon (bisection between eps_lo and eps_hi) at which the
    degenerate-ellipticity check still passes for this w, with theta
    recomputed from the residual at each epsilon."""
    from dataclasses import replace as _replace

    def passes(eps: float) -> bool:
        spec_e = _replace(approx.spec, epsilon=float(eps))
        ap_e = ApproxSolution(spec=spec_e, kmodel=approx.kmodel,
                              cutoff=approx.cutoff, alpha_used=approx.alpha_used,
                              exact_derivatives=approx.exact_derivatives)
        theta = float(np.max(np.abs(raw_residual(w, ap_e))))
        rep = check_degenerate_ellipticity(w, ap_e, theta, directions, seed)
        return rep.passed

    if not passes(eps_lo):
        return 0.0
    if passes(eps_hi):
        return eps_hi
    lo, hi = eps_lo, eps_hi
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


def apriori_ratio(prob: LinearProblem, rho: GridField, g: GridField, s: int) -> float:
    """||rho||_s / ||g||_s for a solved pair; 0/0 returns 0."""
    ng = sobolev_norm(g, s)
    nr = sobolev_norm(rho, s)
    if ng == 0.0:
        if nr == 0.0:
            return 0.0
        warnings.warn("zero right side with nonzero solution", stacklevel=2)
        return float("inf")
    return nr / ng


def coercivity_constant(prob: LinearProblem, fields) -> float:
    """Measured zero-order coercivity constant of the discrete bilinear form:
    min over the battery of (-<L rho, rho> - nu ||D rho||^2) / ||rho||^2."""
    grid = prob.grid
    st = _stencils(grid)
    A = operator_matrix(prob)
    best = np.inf
    for f in fields:
        v = extract_interior(grid, f.values)
        norm2 = st.volume_element * float(v @ v)
        if norm2 == 0.0:
            continue
        lv = st.volume_element * float((A @ v) @ v)
        grad2 = st.volume_element * sum(float((d @ v) @ (d @ v)) for d in st.d1)
        best = min(best, (-lv - prob.nu * grad2) / norm2)
    return best


def dump_coo(prob: LinearProblem, path) -> None:
    """Assembled sparse system in '(row, col, value)' text form, with the
    right side appended as rows 'rhs i value'."""
    A = operator_matrix(prob).tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} unknowns, {A.nnz} entries\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17g}\n")
        if prob.g_rhs is not None:
            rhs = extract_interior(prob.grid, prob.g_rhs)
            for i, v in enumerate(rhs):
                fh.write(f"rhs {i} {v:.17g}\n")
