"""Construction of the strictly convex approximate solution.

Given a curvature model K with K(0) = 0, vanishing gradient, and Hessian
diag(0, ..., 0, 2c_k, ..., 2c_n) at the origin, this module builds

  * the blended target: K glued to its pure quadratic normal form by a
    radial cutoff in the fast variables, so every coefficient entering the
    linearized equations is periodic in x';
  * the quartic corrector polynomial whose tail-trace reproduces the target
    up to the cubic remainder of K;
  * the approximate solution psi = (1/2) sum tau_j y_j^2 + corrector.

All evaluators are closed form, vectorized over point arrays (..., n).
Verification operations sample the identities the construction is supposed
to satisfy (tail-trace identity, diagonal dominance of the tail Hessian
block, sup-norm residual scaling in epsilon) and report measured errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import symfun
from .profiles import plateau


class ConfigError(ValueError):
    """Invalid problem configuration."""


class ModelError(ValueError):
    """Curvature model violates a structural assumption."""


# ---------------------------------------------------------------------------
# problem description


def alpha_bound(tau, curvatures, n: int, k: int) -> float:
    """Admissible upper bound for the cross-coupling weight alpha:
    min_j {c_j / (2 sigma_{k-1}(tau))} / (16 (n-k)^2 + 4 (n-k+1))."""
    sig = float(np.prod(tau))
    if sig <= 0:
        raise ConfigError("sigma_{k-1}(tau) must be positive")
    denom = 16.0 * (n - k) ** 2 + 4.0 * (n - k + 1)
    return min(c / (2.0 * sig) for c in curvatures) / denom


def choose_alpha(tau, curvatures, n: int, k: int) -> float:
    """Default alpha: half of the admissible bound."""
    bound = alpha_bound(tau, curvatures, n, k)
    if not bound > 0:
        raise ConfigError("alpha bound is non-positive; check tau and curvatures")
    return 0.5 * bound


@dataclass(frozen=True)
class ProblemSpec:
    """One equation instance: dimension n, order k, spectral data of the
    degeneracy (tau strictly decreasing positive, curvatures c_k..c_n > 0),
    localization scale epsilon, cross-coupling weight alpha, Dirichlet box
    half-width delta0."""

    n: int
    k: int
    tau: tuple
    curvatures: tuple
    epsilon: float
    delta0: float
    alpha: float | None = None

    def __post_init__(self):
        if not 2 <= self.k <= self.n:
            raise ConfigError(f"need 2 <= k <= n, got k={self.k}, n={self.n}")
        tau = tuple(float(t) for t in self.tau)
        cs = tuple(float(c) for c in self.curvatures)
        if len(tau) != self.k - 1:
            raise ConfigError(f"tau must have length k-1={self.k - 1}")
        if len(cs) != self.n - self.k + 1:
            raise ConfigError(f"curvatures must have length n-k+1={self.n - self.k + 1}")
        if any(t <= 0 for t in tau) or any(a <= b for a, b in zip(tau, tau[1:])):
            raise ConfigError("tau must be strictly decreasing and positive")
        if any(c <= 0 for c in cs):
            raise ConfigError("curvatures must be positive")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.delta0 <= 0:
            raise ConfigError("delta0 must be positive")
        if self.epsilon > self.delta0:
            raise ConfigError("epsilon must not exceed delta0")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "curvatures", cs)
        bound = alpha_bound(tau, cs, self.n, self.k)
        if self.alpha is None:
            object.__setattr__(self, "alpha", 0.5 * bound)
        elif not 0.0 < self.alpha < bound:
            raise ConfigError(
                f"alpha={self.alpha} outside the admissible range (0, {bound}): "
                "alpha must stay below min(c_j/(2 sigma_{k-1}(tau))) / "
                "(16(n-k)^2 + 4(n-k+1))")

    @property
    def sigma_tau(self) -> float:
        return float(np.prod(self.tau))

    def box_extents(self) -> np.ndarray:
        """Half-widths of the physical working box (y units)."""
        e2 = self.epsilon**2
        return np.array([np.pi * e2] * (self.k - 1)
                        + [self.delta0 * e2] * (self.n - self.k + 1))


def omega_samples(spec: ProblemSpec, count: int, rng) -> np.ndarray:
    """Uniform samples from the physical working box."""
    ext = spec.box_extents()
    return rng.uniform(-1.0, 1.0, size=(count, spec.n)) * ext


# ---------------------------------------------------------------------------
# multivariate polynomials (curvature models are polynomial by default)


@dataclass(frozen=True)
class Polynomial:
    """Sparse multivariate polynomial: sum_m coeffs[m] * prod_a y_a^expos[m, a]."""

    nvars: int
    coeffs: np.ndarray
    expos: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        e = np.atleast_2d(np.asarray(self.expos, dtype=int))
        if e.size == 0:
            e = np.zeros((0, self.nvars), dtype=int)
        if e.shape[0] != c.shape[0] or (e.size and e.shape[1] != self.nvars):
            raise ValueError("coefficient/exponent shapes do not match")
        if np.any(e < 0):
            raise ValueError("negative exponents")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "expos", e)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.coeffs.size == 0:
            return np.zeros(pts.shape[:-1])
        monos = np.prod(pts[..., None, :] ** self.expos, axis=-1)
        return monos @ self.coeffs

    def diff(self, axis: int) -> "Polynomial":
        keep = self.expos[:, axis] > 0
        c = self.coeffs[keep] * self.expos[keep, axis]
        e = self.expos[keep].copy()
        e[:, axis] -= 1
        return Polynomial(self.nvars, c, e)

    def restrict_tail(self, first_tail_axis: int) -> "Polynomial":
        """Set the coordinates from first_tail_axis on to zero."""
        keep = np.all(self.expos[:, first_tail_axis:] == 0, axis=1)
        return Polynomial(self.nvars, self.coeffs[keep], self.expos[keep])

    def terms_of_degree(self, d: int) -> "Polynomial":
        keep = self.expos.sum(axis=1) == d
        return Polynomial(self.nvars, self.coeffs[keep], self.expos[keep])


class PolynomialKModel:
    """Curvature model given by exact polynomial coefficient data.

    Structural requirements checked at construction: no constant or linear
    terms; quadratic part diagonal and supported on the tail axes with
    positive coefficients (these are the curvatures c_k..c_n).
    """

    exact_derivatives = True

    def __init__(self, n: int, k: int, poly: Polynomial):
        if poly.nvars != n:
            raise ModelError("polynomial variable count != n")
        self.n, self.k = n, k
        self.poly = poly
        deg0 = poly.terms_of_degree(0)
        deg1 = poly.terms_of_degree(1)
        if np.any(deg0.coeffs != 0) or np.any(deg1.coeffs != 0):
            raise ModelError("model must vanish to second order at the origin")
        quad = poly.terms_of_degree(2)
        curvs = np.zeros(n)
        for c, e in zip(quad.coeffs, quad.expos):
            if c == 0:
                continue
            axes = np.nonzero(e)[0]
            if len(axes) != 1:
                raise ModelError("cross quadratic terms not allowed at the origin")
            curvs[axes[0]] += c
        if np.any(curvs[: k - 1] != 0):
            raise ModelError("quadratic part must vanish in the first k-1 axes")
        if np.any(curvs[k - 1:] <= 0):
            raise ModelError("tail quadratic coefficients must all be positive")
        self.curvatures = tuple(curvs[k - 1:])
        self._grads = [poly.diff(a) for a in range(n)]
        self._hess = [[self._grads[a].diff(b) for b in range(n)] for a in range(n)]
        self._slice = poly.restrict_tail(k - 1)
        self._slice_grads = [self._slice.diff(a) for a in range(k - 1)]
        self._slice_hess = [[g.diff(b) for b in range(k - 1)] for g in self._slice_grads]
        self._axis2 = {}
        for j in range(k - 1, n):
            q = poly.diff(j).diff(j).restrict_tail(k - 1)
            qg = [q.diff(a) for a in range(k - 1)]
            qh = [[g.diff(b) for b in range(k - 1)] for g in qg]
            self._axis2[j] = (q, qg, qh)

    def value(self, y):
        return self.poly(y)

    def grad(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([g(y) for g in self._grads], axis=-1)

    def hess(self, y):
        y = np.asarray(y, dtype=float)
        rows = [np.stack([self._hess[a][b](y) for b in range(self.n)], axis=-1)
                for a in range(self.n)]
        return np.stack(rows, axis=-2)

    # restriction to the degenerate slice y'' = 0 (tail exponents are zero in
    # the restricted polynomials, so full y points can be passed directly)
    def slice_value(self, y):
        return self._slice(y)

    def slice_grad(self, y):
        y = np.asarray(y, dtype=float)
        return np.stack([g(y) for g in self._slice_grads], axis=-1)

    def slice_hess(self, y):
        y = np.asarray(y, dtype=float)
        kk = self.k - 1
        rows = [np.stack([self._slice_hess[a][b](y) for b in range(kk)], axis=-1)
                for a in range(kk)]
        return np.stack(rows, axis=-2)

    def axis_second_value(self, j, y):
        return self._axis2[j][0](y)

    def axis_second_grad(self, j, y):
        y = np.asarray(y, dtype=float)
        return np.stack([g(y) for g in self._axis2[j][1]], axis=-1)

    def axis_second_hess(self, j, y):
        y = np.asarray(y, dtype=float)
        kk = self.k - 1
        qh = self._axis2[j][2]
        rows = [np.stack([qh[a][b](y) for b in range(kk)], axis=-1) for a in range(kk)]
        return np.stack(rows, axis=-2)


class CallableKModel:
    """Finite-difference fallback around a black-box evaluator.

    Central differences with step h = 1e-5 * scale; derivative data is not
    exact, and reports built from this model carry exact_derivatives=False.
    """

    exact_derivatives = False

    def __init__(self, n: int, k: int, fun, curvatures, scale: float = 1.0):
        self.n, self.k = n, k
        self.fun = fun
        self.curvatures = tuple(float(c) for c in curvatures)
        self.h = 1e-5 * scale

    def value(self, y):
        return np.asarray(self.fun(np.asarray(y, dtype=float)), dtype=float)

    def _shift(self, y, axis, s):
        y2 = np.array(y, dtype=float, copy=True)
        y2[..., axis] += s
        return y2

    def grad(self, y):
        cols = [(self.value(self._shift(y, a, self.h))
                 - self.value(self._shift(y, a, -self.h))) / (2 * self.h)
                for a in range(self.n)]
        return np.stack(cols, axis=-1)

    def hess(self, y):
        h = self.h
        out = []
        for a in range(self.n):
            row = []
            for b in range(self.n):
                if a == b:
                    row.append((self.value(self._shift(y, a, h))
                                - 2 * self.value(y)
                                + self.value(self._shift(y, a, -h))) / h**2)
                else:
                    pp = self.value(self._shift(self._shift(y, a, h), b, h))
                    pm = self.value(self._shift(self._shift(y, a, h), b, -h))
                    mp = self.value(self._shift(self._shift(y, a, -h), b, h))
                    mm = self.value(self._shift(self._shift(y, a, -h), b, -h))
                    row.append((pp - pm - mp + mm) / (4 * h**2))
            out.append(np.stack(row, axis=-1))
        return np.stack(out, axis=-2)

    def _slice_pts(self, y):
        y2 = np.array(y, dtype=float, copy=True)
        y2[..., self.k - 1:] = 0.0
        return y2

    def slice_value(self, y):
        return self.value(self._slice_pts(y))

    def slice_grad(self, y):
        return self.grad(self._slice_pts(y))[..., : self.k - 1]

    def slice_hess(self, y):
        return self.hess(self._slice_pts(y))[..., : self.k - 1, : self.k - 1]

    def axis_second_value(self, j, y):
        p = self._slice_pts(y)
        return (self.value(self._shift(p, j, self.h)) - 2 * self.value(p)
                + self.value(self._shift(p, j, -self.h))) / self.h**2

    def axis_second_grad(self, j, y):
        h = self.h
        cols = [(self.axis_second_value(j, self._shift(y, a, h))
                 - self.axis_second_value(j, self._shift(y, a, -h))) / (2 * h)
                for a in range(self.k - 1)]
        return np.stack(cols, axis=-1)

    def axis_second_hess(self, j, y):
        h = self.h
        kk = self.k - 1
        rows = []
        for a in range(kk):
            row = [(self.axis_second_grad(j, self._shift(y, b, h))[..., a]
                    - self.axis_second_grad(j, self._shift(y, b, -h))[..., a]) / (2 * h)
                   for b in range(kk)]
            rows.append(np.stack(row, axis=-1))
        return np.stack(rows, axis=-2)


def load_kmodel(path, n: int, k: int) -> PolynomialKModel:
    """Read a polynomial model from a text file: one term per line,
    'coefficient e_1 ... e_n'; blank lines and # comments ignored."""
    coeffs, expos = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != n + 1:
                raise ModelError(f"{path}:{lineno}: expected coefficient + {n} exponents")
            coeffs.append(float(parts[0]))
            expos.append([int(p) for p in parts[1:]])
    return PolynomialKModel(n, k, Polynomial(n, np.array(coeffs), np.array(expos)))


def parse_kmodel_terms(text: str, n: int, k: int) -> PolynomialKModel:
    """Same format as load_kmodel but from an inline string."""
    coeffs, expos = [], []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != n + 1:
            raise ModelError(f"bad model term {line!r}: expected coefficient + {n} exponents")
        coeffs.append(float(parts[0]))
        expos.append([int(p) for p in parts[1:]])
    return PolynomialKModel(n, k, Polynomial(n, np.array(coeffs), np.array(expos)))


def quadratic_kmodel(n: int, k: int, curvatures) -> PolynomialKModel:
    """The pure normal form K = sum_j c_j y_j^2 over the tail axes."""
    cs = list(curvatures)
    expos = []
    for j in range(k - 1, n):
        e = [0] * n
        e[j] = 2
        expos.append(e)
    return PolynomialKModel(n, k, Polynomial(n, np.array(cs, dtype=float),
                                             np.array(expos, dtype=int)))


# ---------------------------------------------------------------------------
# cutoff


@dataclass(frozen=True)
class CutoffSpec:
    """Radial plateau bump in the fast variables: 1 for |x'| <= inner,
    0 for |x'| >= outer, C-infinity in between with closed-form radial
    derivatives up to order 4."""

    inner: float = np.pi / 2.0
    outer: float = np.pi

    def profile(self, rho, order: int = 0):
        return plateau(rho, self.inner, self.outer, order)

    def value(self, xp):
        xp = np.asarray(xp, dtype=float)
        rho = np.sqrt(np.sum(xp**2, axis=-1))
        return self.profile(rho)

    def grad(self, xp):
        xp = np.asarray(xp, dtype=float)
        rho = np.sqrt(np.sum(xp**2, axis=-1))
        d1 = self.profile(rho, 1)
        inv = np.where(rho > 1e-12, 1.0 / np.where(rho > 1e-12, rho, 1.0), 0.0)
        return d1[..., None] * xp * inv[..., None]

    def hess(self, xp):
        xp = np.asarray(xp, dtype=float)
        rho = np.sqrt(np.sum(xp**2, axis=-1))
        d1 = self.profile(rho, 1)
        d2 = self.profile(rho, 2)
        safe = rho > 1e-12
        inv = np.where(safe, 1.0 / np.where(safe, rho, 1.0), 0.0)
        unit = xp * inv[..., None]
        outer = unit[..., :, None] * unit[..., None, :]
        eye = np.eye(xp.shape[-1])
        return (d2[..., None, None] * outer
                + (d1 * inv)[..., None, None] * (eye - outer))


# ---------------------------------------------------------------------------
# the approximate solution


@dataclass(frozen=True)
class ApproxSolution:
    """psi = (1/2) sum tau_j y_j^2 + corrector, with exact derivative
    evaluators for the corrector, the blended target, and the remainder."""

    spec: ProblemSpec
    kmodel: object
    cutoff: CutoffSpec
    alpha_used: float
    exact_derivatives: bool = True

    # -- cutoff in physical coordinates (argument is x' = y' / epsilon^2)

    def chi(self, y):
        y = np.asarray(y, dtype=float)
        return self.cutoff.value(y[..., : self.spec.k - 1] / self.spec.epsilon**2)

    def _chi_pieces(self, y):
        e2 = self.spec.epsilon**2
        xp = np.asarray(y, dtype=float)[..., : self.spec.k - 1] / e2
        chi = self.cutoff.value(xp)
        chi_g = self.cutoff.grad(xp) / e2
        chi_h = self.cutoff.hess(xp) / e2**2
        return chi, chi_g, chi_h

    # -- corrector polynomial

    def _tail(self, y):
        return np.asarray(y, dtype=float)[..., self.spec.k - 1:]

    def corrector(self, y):
        y = np.asarray(y, dtype=float)
        sp = self.spec
        km = self.kmodel
        sig = sp.sigma_tau
        alpha = self.alpha_used
        nk = sp.n - sp.k
        tail = self._tail(y)
        s2 = np.sum(tail**2, axis=-1)
        chi = self.chi(y)
        out = chi * km.slice_value(y) * s2 / (2.0 * (nk + 1) * sig)
        for idx, j in enumerate(range(sp.k - 1, sp.n)):
            qj = km.axis_second_value(j, y) - 2.0 * sp.curvatures[idx]
            dj = sp.curvatures[idx] / sig - 4.0 * alpha * nk
            yj4 = y[..., j] ** 4
            out = out + chi * qj * yj4 / (24.0 * sig) + dj * yj4 / 12.0
        quart = np.sum(tail**4, axis=-1)
        out = out + alpha * (s2**2 - quart)
        return out

    def corrector_grad(self, y):
        y = np.asarray(y, dtype=float)
        sp = self.spec
        km = self.kmodel
        sig = sp.sigma_tau
        alpha = self.alpha_used
        kk = sp.k - 1
        nk = sp.n - sp.k
        tail = self._tail(y)
        s2 = np.sum(tail**2, axis=-1)
        chi, chi_g, _ = self._chi_pieces(y)

        g = np.zeros(y.shape)
        kb = km.slice_value(y)
        kb_g = km.slice_grad(y)
        a_g = chi_g * kb[..., None] + chi[..., None] * kb_g  # d(chi * Kb)/dy'
        g[..., :kk] += a_g * (s2 / (2.0 * (nk + 1) * sig))[..., None]
        for idx, j in enumerate(range(kk, sp.n)):
            qj = km.axis_second_value(j, y) - 2.0 * sp.curvatures[idx]
            qj_g = km.axis_second_grad(j, y)
            b_g = chi_g * qj[..., None] + chi[..., None] * qj_g
            yj = y[..., j]
            g[..., :kk] += b_g * (yj**4 / (24.0 * sig))[..., None]
            dj = sp.curvatures[idx] / sig - 4.0 * alpha * nk
            g[..., j] += (chi * kb * yj / ((nk + 1) * sig)
                          + chi * qj * yj**3 / (6.0 * sig)
                          + dj * yj**3 / 3.0
                          + 4.0 * alpha * yj * (s2 - yj**2))
        return g

    def corrector_hess(self, y):
        y = np.asarray(y, dtype=float)
        sp = self.spec
        km = self.kmodel
        sig = sp.sigma_tau
        alpha = self.alpha_used
        kk = sp.k - 1
        nk = sp.n - sp.k
        tail = self._tail(y)
        s2 = np.sum(tail**2, axis=-1)
        chi, chi_g, chi_h = self._chi_pieces(y)

        H = np.zeros(y.shape + (sp.n,))
        kb = km.slice_value(y)
        kb_g = km.slice_grad(y)
        kb_h = km.slice_hess(y)
        a_g = chi_g * kb[..., None] + chi[..., None] * kb_g
        a_h = (chi_h * kb[..., None, None]
               + chi_g[..., :, None] * kb_g[..., None, :]
               + chi_g[..., None, :] * kb_g[..., :, None]
               + chi[..., None, None] * kb_h)
        H[..., :kk, :kk] += a_h * (s2 / (2.0 * (nk + 1) * sig))[..., None, None]
        for idx, j in enumerate(range(kk, sp.n)):
            cj = sp.curvatures[idx]
            qj = km.axis_second_value(j, y) - 2.0 * cj
            qj_g = km.axis_second_grad(j, y)
            qj_h = km.axis_second_hess(j, y)
            b_g = chi_g * qj[..., None] + chi[..., None] * qj_g
            b_h = (chi_h * qj[..., None, None]
                   + chi_g[..., :, None] * qj_g[..., None, :]
                   + chi_g[..., None, :] * qj_g[..., :, None]
                   + chi[..., None, None] * qj_h)
            yj = y[..., j]
            H[..., :kk, :kk] += b_h * (yj**4 / (24.0 * sig))[..., None, None]
            mixed = (a_g * (yj / ((nk + 1) * sig))[..., None]
                     + b_g * (yj**3 / (6.0 * sig))[..., None])
            H[..., :kk, j] += mixed
            H[..., j, :kk] += mixed
            dj = cj / sig - 4.0 * alpha * nk
            H[..., j, j] += (chi * kb / ((nk + 1) * sig)
                             + chi * qj * yj**2 / (2.0 * sig)
                             + dj * yj**2
                             + 4.0 * alpha * (s2 - yj**2))
            for i in range(kk, sp.n):
                if i != j:
                    H[..., i, j] += 8.0 * alpha * y[..., i] * yj
        return H

    # -- approximate solution psi and the blended target

    def value(self, y):
        y = np.asarray(y, dtype=float)
        quad = 0.5 * sum(t * y[..., a] ** 2 for a, t in enumerate(self.spec.tau))
        return quad + self.corrector(y)

    def grad(self, y):
        y = np.asarray(y, dtype=float)
        g = self.corrector_grad(y)
        for a, t in enumerate(self.spec.tau):
            g[..., a] += t * y[..., a]
        return g

    def hess(self, y):
        y = np.asarray(y, dtype=float)
        H = self.corrector_hess(y)
        for a, t in enumerate(self.spec.tau):
            H[..., a, a] += t
        return H

    def target(self, y):
        """Blended right side: quadratic normal form outside the cutoff
        support, the true model inside the plateau."""
        y = np.asarray(y, dtype=float)
        chi = self.chi(y)
        tail = self._tail(y)
        quad = np.sum(np.asarray(self.spec.curvatures) * tail**2, axis=-1)
        return (1.0 - chi) * quad + chi * self.kmodel.value(y)

    def remainder(self, y):
        """Cubic-order remainder of the model around the degenerate slice:
        K - K(y', 0) - (1/2) sum_j d^2K/dy_j^2(y', 0) y_j^2."""
        y = np.asarray(y, dtype=float)
        km = self.kmodel
        out = km.value(y) - km.slice_value(y)
        for j in range(self.spec.k - 1, self.spec.n):
            out = out - 0.5 * km.axis_second_value(j, y) * y[..., j] ** 2
        return out


def build_corrector(kmodel, cutoff: CutoffSpec, spec: ProblemSpec,
                    alpha_override: float | None = None,
                    check_samples: int = 2000, seed: int = 0) -> ApproxSolution:
    """Assemble the approximate solution and run the sampled model checks.

    alpha_override bypasses the admissibility bound; it exists for violation
    experiments and is never used by the pipeline.
    """
    if tuple(np.round(kmodel.curvatures, 12)) != tuple(np.round(spec.curvatures, 12)):
        raise ConfigError("model curvatures disagree with the problem spec")
    alpha = spec.alpha if alpha_override is None else float(alpha_override)
    approx = ApproxSolution(spec=spec, kmodel=kmodel, cutoff=cutoff,
                            alpha_used=alpha,
                            exact_derivatives=kmodel.exact_derivatives)
    rng = np.random.default_rng(seed)
    pts = omega_samples(spec, check_samples, rng)
    kv = kmodel.value(pts)
    if np.min(kv) < -1e-12 * max(1.0, np.max(np.abs(kv))):
        raise ModelError("model is negative on the working box")
    tv = approx.target(pts)
    if np.min(tv) < -1e-12 * max(1.0, np.max(np.abs(tv))):
        raise ModelError("blended target is negative on the working box")
    _check_slice_vanishing(kmodel, spec)
    return approx


def build_target(kmodel, cutoff: CutoffSpec, spec: ProblemSpec):
    """Standalone evaluator of the blended right side."""
    approx = build_corrector(kmodel, cutoff, spec)
    return approx.target


def _check_slice_vanishing(kmodel, spec: ProblemSpec) -> None:
    """Sampled check that K(y', 0) = O(|y'|^4): the shell ratio
    max |K(y', 0)| / |y'|^4 must not grow as the shell radius shrinks."""
    rng = np.random.default_rng(1)
    kk = spec.k - 1
    base = np.pi * spec.epsilon**2
    ratios = []
    for scale in (1.0, 1e-1, 1e-2):
        d = rng.normal(size=(64, kk))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = np.zeros((64, spec.n))
        pts[:, :kk] = d * base * scale
        vals = np.abs(kmodel.slice_value(pts))
        ratios.append(np.max(vals) / (base * scale) ** 4)
    ratios = np.array(ratios)
    if ratios[0] > 0 and np.any(ratios[1:] > 50.0 * ratios[0]):
        raise ModelError(
            "K(y', 0) vanishes to order below four at the origin "
            f"(shell ratios {ratios})")


# ---------------------------------------------------------------------------
# verification reports


@dataclass(frozen=True)
class IdentityReport:
    max_abs_err: float
    scale: float
    n_samples: int
    worst_point: np.ndarray

    @property
    def rel_err(self) -> float:
        return self.max_abs_err / max(self.scale, 1e-300)


def verify_trace_identity(approx: ApproxSolution, samples: np.ndarray) -> IdentityReport:
    """Pointwise check of sigma_{k-1}(tau) * tail-trace(corrector Hessian)
    == target - chi * remainder."""
    pts = np.asarray(samples, dtype=float)
    sp = approx.spec
    H = approx.corrector_hess(pts)
    lhs = sp.sigma_tau * np.trace(H[..., sp.k - 1:, sp.k - 1:], axis1=-2, axis2=-1)
    rhs = approx.target(pts) - approx.chi(pts) * approx.remainder(pts)
    err = np.abs(lhs - rhs)
    worst = np.unravel_index(np.argmax(err), err.shape)
    scale = float(max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-300))
    return IdentityReport(float(np.max(err)), scale, pts.shape[0], pts[worst])


@dataclass(frozen=True)
class DominanceReport:
    min_margin: float
    worst_point: np.ndarray
    worst_axis: int
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.min_margin >= 0.0


def verify_diag_dominance(approx: ApproxSolution, samples: np.ndarray) -> DominanceReport:
    """Margin of the strengthened diagonal dominance of the tail Hessian
    block: P_jj - 2 alpha |y''|^2 - sum_{i != j} |P_ij| over tail axes."""
    pts = np.asarray(samples, dtype=float)
    sp = approx.spec
    kk = sp.k - 1
    H = approx.corrector_hess(pts)[..., kk:, kk:]
    tail = pts[..., kk:]
    s2 = np.sum(tail**2, axis=-1)
    diag = np.diagonal(H, axis1=-2, axis2=-1)
    offsum = np.sum(np.abs(H), axis=-1) - np.abs(diag)
    margin = diag - 2.0 * approx.alpha_used * s2[..., None] - offsum
    flat = np.argmin(margin)
    worst = np.unravel_index(flat, margin.shape)
    return DominanceReport(float(np.min(margin)), pts[worst[:-1]],
                           int(worst[-1] + sp.k), pts.shape[0])


def dominance_validity_radius(approx: ApproxSolution, seed: int = 0,
                              shells: int = 24, per_shell: int = 256) -> float:
    """Largest box-scaling factor in (0, 1] on which the sampled dominance
    margin stays nonnegative, located by bisection over scaled boxes."""
    rng = np.random.default_rng(seed)
    sp = approx.spec
    base = omega_samples(sp, per_shell * shells, rng)

    def ok(scale):
        rep = verify_diag_dominance(approx, base * scale)
        return rep.min_margin >= 0.0

    if ok(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class ResidualSweep:
    eps: np.ndarray
    sup_residual: np.ndarray
    slope: float

    def rows(self):
        return list(zip(self.eps.tolist(), self.sup_residual.tolist()))


def residual_sweep(approx: ApproxSolution, eps_list,
                   samples_per_axis: int = 33) -> ResidualSweep:
    """Sup-norm residual sup |S_k(hess psi) - target| over the working box,
    per epsilon, with the fitted log-log slope.

    The w = 0 residual is dominated by the cutoff-times-remainder term, so
    the slope is ~6 for models with a cubic remainder and ~8 without one.
    """
    sp = approx.spec
    eps_arr = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    axes = [np.linspace(-np.pi, np.pi, samples_per_axis)] * (sp.k - 1) \
        + [np.linspace(-sp.delta0, sp.delta0, samples_per_axis)] * (sp.n - sp.k + 1)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, sp.n)
    sups = []
    for e in eps_arr:
        spec_e = replace(sp, epsilon=float(e))
        ap_e = ApproxSolution(spec=spec_e, kmodel=approx.kmodel,
                              cutoff=approx.cutoff, alpha_used=approx.alpha_used,
                              exact_derivatives=approx.exact_derivatives)
        ypts = mesh * e**2
        sk = symfun.s_k_batch(ap_e.hess(ypts), sp.k)
        res = np.abs(sk - ap_e.target(ypts))
        sups.append(float(np.max(res)))
    sups = np.array(sups)
    good = sups > 0
    if np.count_nonzero(good) >= 2:
        slope = float(np.polyfit(np.log(eps_arr[good]), np.log(sups[good]), 1)[0])
    else:
        slope = float("inf")
    return ResidualSweep(eps_arr, sups, slope)
