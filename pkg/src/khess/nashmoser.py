"""Nash-Moser iteration driver.

Starting from w_0 = 0, each step solves the regularized, weighted linearized
problem at the current perturbation field, smooths the increment with the
frequency cutoff S(mu_m), mu_m = sigma^{gamma^m}, and updates
w_{m+1} = w_m + S_m rho_m.  The residual map, its sup norm theta_m, the
schedule arithmetic that makes the formal convergence bookkeeping close, and
the per-step trace are all recorded here.

Two modes: 'faithful' runs the schedule exactly as the bookkeeping demands
(the exponents are enormous and the smoothing saturates any finite grid
almost immediately; it exists to exercise the arithmetic), while 'practical'
derives admissible exponents from the same arithmetic but caps the smoothing
scale at the largest frequency the grid carries.  Desk-scale convergence
studies use 'practical'.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import linsolve
from .approx import ApproxSolution, ConfigError
from .field import (GridField, GridSpec, cnorm, interior_max_abs, smooth,
                    sobolev_norm, zero_field)


class IterationError(RuntimeError):
    """A step could not be completed (ellipticity or linear-solve failure)."""


# ---------------------------------------------------------------------------
# parameters and schedule arithmetic


@dataclass(frozen=True)
class NashMoserParams:
    """Iteration schedule: smoothing scales mu_m = sigma_base^(gamma^m),
    decay exponent a_exp and target regularity s_star satisfying the two
    power-counting inequalities (checked against (n, k) at run start)."""

    sigma_base: float
    gamma: float
    a_exp: float
    s_star: float
    max_iter: int = 15
    stop_tol: float = 1e-5
    mode: str = "practical"
    trace_norm_s: int = 2
    nu_floor: float = 1e-6
    nu_scale: float = 0.1
    ellipticity_directions: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_base > 1.0:
            raise ConfigError("sigma_base must exceed 1")
        if not self.gamma > 1.0:
            raise ConfigError("gamma must exceed 1")
        if self.mode not in ("practical", "faithful"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.stop_tol > 0:
            raise ConfigError("stop_tol must be positive")

    @property
    def beta(self) -> float:
        return 4.0 / (self.gamma - 1.0)

    def mu(self, m: int, cap: float | None = None) -> float:
        log_mu = self.gamma**m * math.log(self.sigma_base)
        if cap is not None:
            log_mu = min(log_mu, math.log(cap))
        return math.exp(min(log_mu, 700.0))


@dataclass(frozen=True)
class ScheduleReport:
    """Feasibility of the power-counting conditions for given (gamma, n, k):
    condition 1:  2(k-2) + 2[n/2] + 6 + a*gamma <= 2a - 1,
    condition 2:  s* - [n/2] - 3 - beta >= a*gamma + 1."""

    feasible: bool
    gamma: float
    beta: float
    a_min: float
    s_star_min: float
    cond1_ok: bool
    cond2_ok: bool
    detail: str
    sigma_min_proxy: float | None = None


def check_schedule(params: NashMoserParams, n: int, k: int,
                   c_measured: float | None = None) -> ScheduleReport:
    """Verify the two schedule inequalities for the given exponents, report
    the feasibility frontier (minimal a and s* for this gamma), and, given a
    measured estimate constant, the base size sigma has to exceed so the
    m = 0 contraction bookkeeping closes (4 C^2 C_{s*} as a proxy)."""
    gamma = params.gamma
    half_n = n // 2
    load = 2 * (k - 2) + 2 * half_n + 7  # condition 1 reads a(2 - gamma) >= load
    if gamma <= 1.0:
        return ScheduleReport(False, gamma, float("inf"), float("inf"), float("inf"),
                              False, False,
                              "gamma must exceed 1 (beta = 4/(gamma-1) diverges)")
    beta = 4.0 / (gamma - 1.0)
    if gamma >= 2.0:
        return ScheduleReport(False, gamma, beta, float("inf"), float("inf"),
                              False, False,
                              "gamma >= 2 makes condition 1 unsatisfiable for any a")
    a_min = load / (2.0 - gamma)
    s_star_min = half_n + 4 + beta + gamma * a_min
    a = params.a_exp
    cond1 = 2 * (k - 2) + 2 * half_n + 6 + a * gamma <= 2 * a - 1 + 1e-12
    cond2 = params.s_star - half_n - 3 - beta >= a * gamma + 1 - 1e-12
    detail = "feasible" if (cond1 and cond2) else (
        f"condition 1 {'ok' if cond1 else 'fails'} (need a >= {a_min:g}); "
        f"condition 2 {'ok' if cond2 else 'fails'} "
        f"(need s* >= {half_n + 4 + beta + gamma * a:g} at a = {a:g})")
    proxy = None
    if c_measured is not None:
        proxy = 4.0 * c_measured**3
    return ScheduleReport(cond1 and cond2, gamma, beta, a_min, s_star_min,
                          cond1, cond2, detail, proxy)


def params_from_schedule(n: int, k: int, gamma: float = 1.2, sigma: float = 2.0,
                         **kwargs) -> NashMoserParams:
    """Admissible parameters for (n, k): minimal a and s* for this gamma."""
    probe = NashMoserParams(sigma_base=sigma, gamma=gamma, a_exp=1.0, s_star=1.0,
                            **{k_: v for k_, v in kwargs.items()
                               if k_ in ("mode", "seed")})
    rep = check_schedule(probe, n, k)
    if not math.isfinite(rep.a_min):
        raise ConfigError(rep.detail)
    return NashMoserParams(sigma_base=sigma, gamma=gamma, a_exp=rep.a_min,
                           s_star=math.ceil(rep.s_star_min), **kwargs)


def validate_params(params: NashMoserParams, n: int, k: int) -> None:
    rep = check_schedule(params, n, k)
    if not rep.feasible:
        raise ConfigError(f"schedule conditions violated: {rep.detail}")


def grid_frequency_cap(grid: GridSpec) -> float:
    """Largest frequency the grid represents; the practical smoothing scale
    saturates here (the cutoff is then the identity)."""
    caps = [m / 2 for m in grid.periodic_points]
    caps += [np.pi * (m - 2) / (2.0 * grid.delta0) for m in grid.dirichlet_points]
    return float(max(caps))


# ---------------------------------------------------------------------------
# residual and trace


def residual(w: GridField, approx: ApproxSolution):
    """Right side g = -G(w) of the next linearized problem and
    theta = sup |G(w)| over the open working domain (the Dirichlet faces
    carry boundary data, not unknowns, and the domain is open there)."""
    G = GridField(linsolve.raw_residual(w, approx), w.grid)
    return GridField(-G.values, w.grid), interior_max_abs(G)


@dataclass
class IterationTrace:
    m: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    g_norm0: list = field(default_factory=list)
    g_norm_inf: list = field(default_factory=list)
    w_norm_s: list = field(default_factory=list)
    rho_norm0: list = field(default_factory=list)
    d_analog: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    norm_s: int = 2
    m_proxy: float = float("nan")
    n_proxy: float = float("nan")
    proxy_order: int = 0
    status: str = "init"

    COLUMNS = ("m", "mu_m", "theta_m", "g_norm0", "g_norm_inf", "w_norm_s",
               "rho_norm0", "d_analog")

    def append(self, m, mu, theta, g0, ginf, wnorm, rho0, d, wall):
        self.m.append(int(m))
        self.mu.append(float(mu))
        self.theta.append(float(theta))
        self.g_norm0.append(float(g0))
        self.g_norm_inf.append(float(ginf))
        self.w_norm_s.append(float(wnorm))
        self.rho_norm0.append(float(rho0))
        self.d_analog.append(float(d))
        self.wall_ms.append(float(wall))

    def rows(self):
        for i in range(len(self.m)):
            yield (self.m[i], self.mu[i], self.theta[i], self.g_norm0[i],
                   self.g_norm_inf[i], self.w_norm_s[i], self.rho_norm0[i],
                   self.d_analog[i], self.wall_ms[i])


def trace_to_csv(trace: IterationTrace, path, include_wall: bool = True) -> None:
    """Write the trace as CSV.  Wall-clock times are excluded on request so
    repeated runs with the same seed produce byte-identical files."""
    cols = list(IterationTrace.COLUMNS) + (["wall_ms"] if include_wall else [])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in trace.rows():
            vals = row[:8] + ((row[8],) if include_wall else ())
            fh.write(",".join(_fmt(v) for v in vals) + "\n")


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    return f"{v:.17g}"


def estimate_proxies(approx: ApproxSolution, grid: GridSpec, g0: GridField,
                     s: int) -> tuple:
    """Computable stand-ins for the schedule majorants:
    M(s) = ||g0||_s + eps^4 sum_ij ||P_ij(eps^2 .)||_{s-1} and
    N(s) = M(s) + sum_ij ||P_ij(eps^2 .)||_{s+2} (1 + M([n/2]+1))."""
    spec = approx.spec
    pts = grid.points() * spec.epsilon**2
    H = approx.corrector_hess(pts)
    pnorm_lo = pnorm_hi = 0.0
    for i in range(spec.n):
        for j in range(spec.n):
            f = GridField(H[..., i, j], grid)
            pnorm_lo += sobolev_norm(f, max(s - 1, 0))
            pnorm_hi += sobolev_norm(f, s + 2)
    m_s = sobolev_norm(g0, s) + spec.epsilon**4 * pnorm_lo
    m_half = sobolev_norm(g0, min(spec.n // 2 + 1, s)) + spec.epsilon**4 * pnorm_lo
    n_s = m_s + pnorm_hi * (1.0 + m_half)
    return float(m_s), float(n_s)


# ---------------------------------------------------------------------------
# stepping


@dataclass
class IterationState:
    w: GridField
    g: GridField
    theta: float
    m: int
    trace: IterationTrace
    g0_inf: float


def start_state(approx: ApproxSolution, params: NashMoserParams, grid: GridSpec,
                w0: GridField | None = None, proxy_order: int | None = None) -> IterationState:
    w = w0 if w0 is not None else zero_field(grid)
    g, theta = residual(w, approx)
    trace = IterationTrace(norm_s=params.trace_norm_s)
    cap = grid.norm_order_cap()
    s_proxy = proxy_order if proxy_order is not None else min(4, cap - 2)
    s_proxy = max(0, min(s_proxy, cap - 2))
    trace.proxy_order = s_proxy
    trace.m_proxy, trace.n_proxy = estimate_proxies(approx, grid, g, s_proxy)
    return IterationState(w, g, theta, 0, trace, interior_max_abs(g))


def step(state: IterationState, params: NashMoserParams, approx: ApproxSolution,
         mu_weight: float | None = None, verbose: bool = False) -> IterationState:
    """One assemble -> solve -> smooth -> update cycle."""
    t0 = time.perf_counter()
    grid = state.w.grid
    m = state.m
    ell = linsolve.check_degenerate_ellipticity(
        state.w, approx, state.theta, params.ellipticity_directions,
        seed=params.seed + m)
    if not ell.passed:
        raise IterationError(
            f"step {m}: degenerate-ellipticity check failed "
            f"(min form {ell.min_form:.3e} at grid point {ell.worst_point_index})")

    nu = max(params.nu_floor, params.nu_scale * state.theta)
    nu = min(nu, 0.999)
    try:
        prob = linsolve.assemble(state.w, approx, state.theta, nu,
                                 mu=mu_weight, g=state.g)
        rho = linsolve.solve(prob)
    except linsolve.SolverError as exc:
        raise IterationError(f"step {m}: linear solve failed: {exc}") from exc

    cap = grid_frequency_cap(grid) if params.mode == "practical" else None
    mu_m = params.mu(m, cap)
    srho = smooth(rho, max(mu_m, 1.0))
    w_next = state.w.add(srho)

    budget = min(grid.n // 2 + 3, grid.norm_order_cap())
    wnorm_c = cnorm(w_next, budget)
    if wnorm_c > 1.0:
        warnings.warn(
            f"step {m}: C^{budget} norm of the iterate reached {wnorm_c:.3g} > 1; "
            "the convergence hypotheses no longer hold", stacklevel=2)

    g_norm0 = sobolev_norm(state.g, 0)
    g_inf = interior_max_abs(state.g)
    w_norm = sobolev_norm(state.w, params.trace_norm_s)
    rho0 = sobolev_norm(rho, 0)
    d_m = mu_m**params.a_exp * max(g_norm0, g_inf)
    wall = (time.perf_counter() - t0) * 1000.0
    state.trace.append(m, mu_m, state.theta, g_norm0, g_inf, w_norm, rho0, d_m, wall)
    if verbose:
        print(f"  step {m:3d}: mu={mu_m:10.3g} theta={state.theta:10.4e} "
              f"|g|_0={g_norm0:10.4e} |rho|_0={rho0:10.4e} wall={wall:7.1f} ms")

    g_next, theta_next = residual(w_next, approx)
    return IterationState(w_next, g_next, theta_next, m + 1, state.trace,
                          state.g0_inf)


@dataclass(frozen=True)
class RunResult:
    w: GridField
    trace: IterationTrace
    status: str
    approx: ApproxSolution
    params: NashMoserParams

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def run(approx: ApproxSolution, params: NashMoserParams, grid: GridSpec,
        w0: GridField | None = None, mu_weight: float | None = None,
        verbose: bool = False) -> RunResult:
    """Iterate to the stopping rule ||g_m||_inf <= stop_tol * ||g_0||_inf.

    Returns the final perturbation field and the full trace; the physical
    solution evaluator is assembled on demand by solution_evaluator."""
    spec = approx.spec
    validate_params(params, spec.n, spec.k)
    if (grid.n, grid.k) != (spec.n, spec.k):
        raise ConfigError("grid and problem spec disagree on (n, k)")
    state = start_state(approx, params, grid, w0)
    status = "max_iter"
    m_final = state.m
    while True:
        g_inf = interior_max_abs(state.g)
        if g_inf <= params.stop_tol * state.g0_inf or state.theta == 0.0:
            status = "converged"
            break
        if state.m >= params.max_iter:
            status = "max_iter"
            break
        try:
            state = step(state, params, approx, mu_weight, verbose)
        except IterationError as exc:
            status = f"aborted: {exc}"
            break
        m_final = state.m
    # terminal row: the state the run ended in (no solve performed)
    cap = grid_frequency_cap(grid) if params.mode == "practical" else None
    mu_m = params.mu(state.m, cap)
    g_norm0 = sobolev_norm(state.g, 0)
    g_inf = interior_max_abs(state.g)
    state.trace.append(state.m, mu_m, state.theta, g_norm0, g_inf,
                       sobolev_norm(state.w, params.trace_norm_s), 0.0,
                       mu_m**params.a_exp * max(g_norm0, g_inf), 0.0)
    state.trace.status = status
    return RunResult(state.w, state.trace, status, approx, params)


# ---------------------------------------------------------------------------
# physical solution


class SolutionEvaluator:
    """u(y) = (1/2) sum tau_j y_j^2 + corrector(y) + eps^{17/2} w(y/eps^2),
    with the w-part interpolated from the grid (cubic splines; the periodic
    axes are padded by wrap layers) and the corrector part exact."""

    def __init__(self, w: GridField, approx: ApproxSolution):
        from scipy.interpolate import RegularGridInterpolator

        self.approx = approx
        self.spec = approx.spec
        grid = w.grid
        self.grid = grid
        pad = 4

        def make_interp(values):
            vals = values
            coords = []
            for a in range(grid.n):
                c = grid.axis_coords(a)
                if grid.is_periodic(a):
                    m = grid.shape[a]
                    idx_lo = np.arange(m - pad, m)
                    idx_hi = np.arange(pad)
                    vals = np.concatenate(
                        [np.take(vals, idx_lo, axis=a),
                         vals,
                         np.take(vals, idx_hi, axis=a)], axis=a)
                    c = np.concatenate([c[-pad:] - 2 * np.pi, c, c[:pad] + 2 * np.pi])
                coords.append(c)
            return RegularGridInterpolator(tuple(coords), vals, method="cubic",
                                           bounds_error=True)

        from .field import hessian_entries
        self._w_value = make_interp(w.values)
        self._w_hess = {key: make_interp(vals)
                        for key, vals in hessian_entries(w).items()}

    def value(self, y):
        y = np.asarray(y, dtype=float)
        sp = self.spec
        x = y / sp.epsilon**2
        return self.approx.value(y) + sp.epsilon**8.5 * self._w_value(x)

    def hess(self, y):
        y = np.asarray(y, dtype=float)
        sp = self.spec
        x = y / sp.epsilon**2
        H = self.approx.hess(y)
        scale = sp.epsilon**4.5
        for (i, j), interp in self._w_hess.items():
            vals = scale * interp(x)
            H[..., i, j] += vals
            if i != j:
                H[..., j, i] += vals
        return H


def solution_evaluator(w: GridField, approx: ApproxSolution) -> SolutionEvaluator:
    return SolutionEvaluator(w, approx)
