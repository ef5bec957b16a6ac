"""Discrete scalar fields on the periodic x Dirichlet tensor box.

The working domain is a product of periodic axes on [-pi, pi) (the first
k-1 coordinates) and Dirichlet axes on [-delta0, delta0] (the remaining
n-k+1), stored boundary inclusive.  Dirichlet point counts are rounded up to
odd so the mid-slice x'' = 0 lies on the grid.  Derivatives are spectral
along periodic axes and 4th-order finite differences (one-sided at the
boundary) along Dirichlet axes.  The mixed norm combines a discrete Fourier
transform in x' with finite-difference Sobolev norms of the coefficient
functions in x''.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import product as iproduct

import numpy as np
import scipy.fft as sfft

from .profiles import plateau

MAX_POINTS = 2**21  # total grid-point budget


class ResolutionError(ValueError):
    """Grid too coarse for the requested derivative or norm order."""


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid over Q_pi^{k-1} x [-delta0, delta0]^{n-k+1}.

    periodic_points: points per periodic axis (even, FFT friendly).
    dirichlet_points: points per Dirichlet axis, boundary inclusive; rounded
    up to odd so that x'' = 0 is a grid slice.
    """

    n: int
    k: int
    periodic_points: tuple
    dirichlet_points: tuple
    delta0: float

    def __post_init__(self):
        if not 2 <= self.k <= self.n:
            raise ValueError(f"need 2 <= k <= n, got k={self.k}, n={self.n}")
        per = tuple(int(m) for m in self.periodic_points)
        dir_ = tuple(int(m) for m in self.dirichlet_points)
        if len(per) != self.k - 1 or len(dir_) != self.n - self.k + 1:
            raise ValueError("axis counts do not match (n, k)")
        if any(m < 8 or m % 2 for m in per):
            raise ValueError("periodic resolutions must be even and >= 8")
        if any(m < 8 for m in dir_):
            raise ValueError("Dirichlet resolutions must be >= 8")
        dir_ = tuple(m if m % 2 else m + 1 for m in dir_)
        if self.delta0 <= 0:
            raise ValueError("delta0 must be positive")
        object.__setattr__(self, "periodic_points", per)
        object.__setattr__(self, "dirichlet_points", dir_)
        if int(np.prod(self.shape)) > MAX_POINTS:
            raise ValueError(f"grid exceeds the point budget {MAX_POINTS}")

    @property
    def shape(self) -> tuple:
        return self.periodic_points + self.dirichlet_points

    @property
    def n_periodic(self) -> int:
        return self.k - 1

    def is_periodic(self, axis: int) -> bool:
        return axis < self.n_periodic

    def axis_coords(self, axis: int) -> np.ndarray:
        if self.is_periodic(axis):
            m = self.shape[axis]
            return -np.pi + 2.0 * np.pi * np.arange(m) / m
        m = self.shape[axis]
        return np.linspace(-self.delta0, self.delta0, m)

    def spacing(self, axis: int) -> float:
        if self.is_periodic(axis):
            return 2.0 * np.pi / self.shape[axis]
        return 2.0 * self.delta0 / (self.shape[axis] - 1)

    def points(self) -> np.ndarray:
        """All grid points, shape self.shape + (n,)."""
        axes = [self.axis_coords(a) for a in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def norm_order_cap(self) -> int:
        """Largest Sobolev/C-norm order the Dirichlet resolutions support."""
        return min(8, min((m - 1) // 4 for m in self.dirichlet_points))


@dataclass(frozen=True)
class GridField:
    """Real scalar field sampled on a GridSpec."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray) -> "GridField":
        return replace(self, values=values)

    def add(self, other: "GridField") -> "GridField":
        return self.with_values(self.values + other.values)

    def scaled(self, c: float) -> "GridField":
        return self.with_values(c * self.values)


def zero_field(grid: GridSpec) -> GridField:
    return GridField(np.zeros(grid.shape), grid)


def interior_slices(grid: GridSpec) -> tuple:
    """Index expression selecting the open domain (Dirichlet faces dropped)."""
    return tuple(slice(None) if grid.is_periodic(a) else slice(1, -1)
                 for a in range(grid.n))


def interior_max_abs(f: GridField) -> float:
    """Sup of |f| over the open domain; the working domain excludes the
    Dirichlet box faces, which carry boundary data rather than unknowns."""
    return float(np.max(np.abs(f.values[interior_slices(f.grid)])))


def field_from_function(grid: GridSpec, fun) -> GridField:
    """Sample fun(points) -> values on the grid (fun takes (..., n) arrays)."""
    return GridField(np.asarray(fun(grid.points()), dtype=float), grid)


# ---------------------------------------------------------------------------
# finite-difference weights (Fornberg) and derivative operators


def _fd_weights(xs: np.ndarray, x0: float, m: int) -> np.ndarray:
    """Weights of the m-th derivative at x0 on arbitrary nodes xs."""
    npts = len(xs)
    C = np.zeros((npts, m + 1))
    C[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, npts):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for s in range(mn, 0, -1):
                    C[i, s] = c1 * (s * C[i - 1, s - 1] - c5 * C[i - 1, s]) / c2
                C[i, 0] = -c1 * c5 * C[i - 1, 0] / c2
            for s in range(mn, 0, -1):
                C[j, s] = (c4 * C[j, s] - s * C[j, s - 1]) / c3
            C[j, 0] = c4 * C[j, 0] / c3
        c1 = c2
    return C[:, m]


@lru_cache(maxsize=128)
def _fd_matrix(npoints: int, spacing: float, order: int) -> np.ndarray:
    """Dense 4th-order differentiation matrix on a uniform Dirichlet axis."""
    if npoints < 7:
        raise ResolutionError("need at least 7 points per Dirichlet axis")
    width = 5 if order == 1 else 6  # one-sided stencil size for 4th order
    xs = spacing * np.arange(npoints)
    D = np.zeros((npoints, npoints))
    for i in range(npoints):
        if 2 <= i <= npoints - 3:
            sten = np.arange(i - 2, i + 3)
        elif i < 2:
            sten = np.arange(width)
        else:
            sten = np.arange(npoints - width, npoints)
        D[i, sten] = _fd_weights(xs[sten], xs[i], order)
    return D


def _apply_matrix(values: np.ndarray, D: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    out = moved @ D.T
    return np.moveaxis(out, -1, axis)


def _spectral_derivative(values: np.ndarray, axis: int, order: int) -> np.ndarray:
    m = values.shape[axis]
    freqs = np.arange(m // 2 + 1, dtype=float)
    mult = (1j * freqs) ** order
    if order % 2 == 1 and m % 2 == 0:
        mult[-1] = 0.0  # drop the unpaired Nyquist mode for odd orders
    shape = [1] * values.ndim
    shape[axis] = len(freqs)
    F = np.fft.rfft(values, axis=axis)
    F *= mult.reshape(shape)
    return np.fft.irfft(F, n=m, axis=axis)


def derivative(f: GridField, axis: int, order: int) -> GridField:
    """Partial derivative along one axis: spectral if periodic, FD4 if not."""
    if order not in (1, 2):
        raise ValueError("derivative order must be 1 or 2")
    grid = f.grid
    if grid.is_periodic(axis):
        vals = _spectral_derivative(f.values, axis, order)
    else:
        D = _fd_matrix(grid.shape[axis], grid.spacing(axis), order)
        vals = _apply_matrix(f.values, D, axis)
    return f.with_values(vals)


def derivative_multi(f: GridField, beta) -> GridField:
    """Repeated first derivatives per the multi-index beta (one per axis)."""
    out = f
    for axis, m in enumerate(beta):
        for _ in range(m):
            out = derivative(out, axis, 1)
    return out


def hessian_entries(f: GridField) -> dict:
    """All second partials of f as a dict {(i, j): ndarray}, i <= j."""
    n = f.grid.n
    firsts = [derivative(f, a, 1) for a in range(n)]
    out = {}
    for i in range(n):
        out[(i, i)] = derivative(f, i, 2).values
        for j in range(i + 1, n):
            out[(i, j)] = derivative(firsts[i], j, 1).values
    return out


# ---------------------------------------------------------------------------
# norms


def _multi_indices(d: int, max_total: int):
    for beta in iproduct(range(max_total + 1), repeat=d):
        if sum(beta) <= max_total:
            yield beta


def _dirichlet_quad_weights(grid: GridSpec) -> np.ndarray:
    """Trapezoid weights over the Dirichlet axes, shaped for broadcasting."""
    w = np.ones(grid.dirichlet_points)
    for a, m in enumerate(grid.dirichlet_points):
        h = 2.0 * grid.delta0 / (m - 1)
        wa = np.full(m, h)
        wa[0] = wa[-1] = h / 2.0
        shape = [1] * len(grid.dirichlet_points)
        shape[a] = m
        w = w * wa.reshape(shape)
    return w


def _periodic_coefficients(f: GridField) -> np.ndarray:
    """DFT coefficients along the periodic axes: alpha_l(x'') with the
    convention f = sum_l alpha_l e^{i l x'}."""
    axes = tuple(range(f.grid.n_periodic))
    scale = float(np.prod([f.grid.shape[a] for a in axes])) if axes else 1.0
    return np.fft.fftn(f.values, axes=axes) / scale


def _freq_squares(grid: GridSpec) -> np.ndarray:
    """\\sum l_i^2 over periodic frequency bins, broadcast over x''-axes."""
    per = grid.periodic_points
    total = np.zeros(per + (1,) * len(grid.dirichlet_points))
    for a, m in enumerate(per):
        ells = np.fft.fftfreq(m, d=1.0 / m)
        shape = [1] * (len(per) + len(grid.dirichlet_points))
        shape[a] = m
        total = total + (ells**2).reshape(shape)
    return total


def sobolev_norm(f: GridField, s: int) -> float:
    """Mixed norm: Fourier weight (1 + sum l_i^2)^t in x' combined with
    H^j finite-difference Sobolev norms of the coefficients in x''.

    norm^2 = sum_{t+j<=s} sum_l (1 + |l|^2)^t ||alpha_l||_{H^j}^2.
    """
    grid = f.grid
    if s < 0:
        raise ValueError("norm order must be >= 0")
    if s > grid.norm_order_cap():
        raise ResolutionError(
            f"norm order {s} above the resolution cap {grid.norm_order_cap()}")
    alpha = _periodic_coefficients(f)
    nper = grid.n_periodic
    ndir = grid.n - nper
    quad_w = _dirichlet_quad_weights(grid)
    dir_axes = tuple(range(nper, grid.n))
    dmats = [_fd_matrix(grid.shape[a], grid.spacing(a), 1) for a in dir_axes]

    # memoized D^beta alpha over Dirichlet axes
    cache = {(0,) * ndir: alpha}

    def d_beta(beta):
        if beta in cache:
            return cache[beta]
        a = next(i for i, m in enumerate(beta) if m > 0)
        parent = tuple(m - 1 if i == a else m for i, m in enumerate(beta))
        val = _apply_matrix(d_beta(parent), dmats[a], nper + a)
        cache[beta] = val
        return val

    # G[m](l) = sum_{|beta| = m} ||D^beta alpha_l||_{L^2}^2
    G = [np.zeros(grid.periodic_points) for _ in range(s + 1)]
    for beta in _multi_indices(ndir, s):
        A = d_beta(tuple(beta))
        contrib = np.sum((A.real**2 + A.imag**2) * quad_w,
                         axis=tuple(range(nper, grid.n)))
        G[sum(beta)] += contrib
    H = np.cumsum(np.stack(G, axis=0), axis=0)  # H[j] = sum_{m<=j} G[m]

    ell2 = _freq_squares(grid)[(Ellipsis,) + (0,) * ndir]
    total = 0.0
    for t in range(s + 1):
        pt = (1.0 + ell2) ** t
        for j in range(s - t + 1):
            total += float(np.sum(pt * H[j]))
    return float(np.sqrt(total))


def cnorm(f: GridField, r: int) -> float:
    """Max over the grid of |D^beta f| over all multi-indices |beta| <= r."""
    grid = f.grid
    if r < 0:
        raise ValueError("order must be >= 0")
    if r > grid.norm_order_cap():
        raise ResolutionError(
            f"C-norm order {r} above the resolution cap {grid.norm_order_cap()}")
    cache = {(0,) * grid.n: f.values}

    def d_beta(beta):
        if beta in cache:
            return cache[beta]
        a = next(i for i, m in enumerate(beta) if m > 0)
        parent = tuple(m - 1 if i == a else m for i, m in enumerate(beta))
        val = derivative(GridField(d_beta(parent), grid), a, 1).values
        cache[beta] = val
        return val

    best = 0.0
    for beta in _multi_indices(grid.n, r):
        best = max(best, float(np.max(np.abs(d_beta(tuple(beta))))))
    return best


# ---------------------------------------------------------------------------
# smoothing operators


@dataclass(frozen=True)
class SmoothingParams:
    """Low-pass profile for the smoothing family: symbol(x) = 1 on [0, 1],
    0 on [2, inf), smooth and nonincreasing in between."""

    t: float

    def __post_init__(self):
        if self.t < 1.0:
            raise ValueError("smoothing scale t must be >= 1")

    @staticmethod
    def symbol(x) -> np.ndarray:
        return plateau(x, 1.0, 2.0)


def smooth(f: GridField, t: float) -> GridField:
    """Frequency cutoff at scale t: Fourier multiplier symbol(|l|/t) on the
    periodic axes composed with per-axis sine-series multipliers
    symbol(kappa_m / t), kappa_m = pi m / (2 delta0), on the Dirichlet axes.

    Boundary values pass through unchanged (zero for homogeneous fields), so
    boundary zeros are preserved; for t beyond twice the largest grid
    frequency the operator is the identity.
    """
    params = SmoothingParams(t=float(t))
    grid = f.grid
    vals = f.values

    # periodic part: radial multiplier over the joint x'-frequency vector
    per_axes = tuple(range(grid.n_periodic))
    if per_axes:
        F = np.fft.fftn(vals, axes=per_axes)
        radial = np.sqrt(_freq_squares(grid))
        F = F * params.symbol(radial / params.t)
        vals = np.fft.ifftn(F, axes=per_axes).real

    # Dirichlet part: DST-I multiplier per axis on interior points
    for a in range(grid.n_periodic, grid.n):
        m_int = grid.shape[a] - 2
        kappa = np.pi * np.arange(1, m_int + 1) / (2.0 * grid.delta0)
        mult = params.symbol(kappa / params.t)
        moved = np.moveaxis(vals, a, -1)
        interior = moved[..., 1:-1]
        coeff = sfft.dst(interior, type=1, axis=-1)
        coeff *= mult
        moved = moved.copy()
        moved[..., 1:-1] = sfft.idst(coeff, type=1, axis=-1)
        vals = np.moveaxis(moved, -1, a)
    return f.with_values(vals)


# ---------------------------------------------------------------------------
# serialization


_MAGIC = "khess-field 1"


def save_field(path, f: GridField) -> None:
    """Flat binary array with a small text header (dims, axis types, delta0)."""
    g = f.grid
    header = "\n".join([
        _MAGIC,
        f"n {g.n}",
        f"k {g.k}",
        "periodic " + " ".join(str(m) for m in g.periodic_points),
        "dirichlet " + " ".join(str(m) for m in g.dirichlet_points),
        f"delta0 {g.delta0!r}",
        "---",
        "",
    ])
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_field(path) -> GridField:
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, payload = blob.partition(b"---\n")
    lines = head.decode("ascii").strip().splitlines()
    if lines[0] != _MAGIC:
        raise ValueError(f"not a field snapshot: {path}")
    kv = dict(line.split(None, 1) for line in lines[1:])
    grid = GridSpec(
        n=int(kv["n"]),
        k=int(kv["k"]),
        periodic_points=tuple(int(x) for x in kv["periodic"].split()),
        dirichlet_points=tuple(int(x) for x in kv["dirichlet"].split()),
        delta0=float(kv["delta0"]),
    )
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).copy()
    return GridField(values, grid)


def slice_to_csv(path, f: GridField, keep_axes=None, fixed=None) -> None:
    """Write a 1D or 2D slice as CSV (coordinates first, value last).

    keep_axes: one or two axis indices to vary (default: the last one or two);
    fixed: {axis: index} for the remaining axes (default: middle index).
    """
    grid = f.grid
    if keep_axes is None:
        keep_axes = list(range(max(0, grid.n - 2), grid.n))
    keep_axes = list(keep_axes)
    if len(keep_axes) not in (1, 2):
        raise ValueError("CSV export supports 1D or 2D slices")
    fixed = dict(fixed or {})
    index = []
    for a in range(grid.n):
        if a in keep_axes:
            index.append(slice(None))
        else:
            index.append(fixed.get(a, grid.shape[a] // 2))
    sub = f.values[tuple(index)]
    coords = [grid.axis_coords(a) for a in keep_axes]
    with open(path, "w") as fh:
        fh.write(",".join(f"x{a + 1}" for a in keep_axes) + ",value\n")
        if len(keep_axes) == 1:
            for x, v in zip(coords[0], sub):
                fh.write(f"{x:.17g},{v:.17g}\n")
        else:
            for i, xi in enumerate(coords[0]):
                for j, xj in enumerate(coords[1]):
                    fh.write(f"{xi:.17g},{xj:.17g},{sub[i, j]:.17g}\n")
