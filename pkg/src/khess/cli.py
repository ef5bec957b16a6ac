"""Pipeline command line: construct -> solve -> certify, plus the epsilon
scaling study and the schedule feasibility arithmetic.

Configuration is a key-value sections file (INI); tabular output is CSV,
summaries are JSON, field snapshots are flat binary with a text header.
Every randomized battery derives from the config seed, and the deterministic
outputs (trace CSV, margins CSV, summaries) are byte-identical across
repeated runs with the same seed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import convexity, linsolve, nashmoser
from .approx import (ApproxSolution, ConfigError, CutoffSpec, ModelError,
                     ProblemSpec, build_corrector, dominance_validity_radius,
                     load_kmodel, omega_samples, parse_kmodel_terms,
                     residual_sweep, verify_diag_dominance, verify_trace_identity)
from .field import GridField, GridSpec, load_field, save_field, zero_field


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    kmodel: object
    cutoff: CutoffSpec
    grid: GridSpec
    params: nashmoser.NashMoserParams
    seed: int
    outdir: str


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    p = cp["problem"]
    n, k = p.getint("n"), p.getint("k")
    spec = ProblemSpec(
        n=n, k=k,
        tau=_floats(p.get("tau")),
        curvatures=_floats(p.get("curvatures")),
        epsilon=p.getfloat("epsilon"),
        delta0=p.getfloat("delta0"),
        alpha=p.getfloat("alpha") if p.get("alpha", fallback=None) else None,
    )
    km_sec = cp["kmodel"]
    if km_sec.get("file", fallback=None):
        base = os.path.dirname(os.path.abspath(path))
        km = load_kmodel(os.path.join(base, km_sec.get("file")), n, k)
    elif km_sec.get("terms", fallback=None):
        km = parse_kmodel_terms(km_sec.get("terms"), n, k)
    else:
        raise ConfigError("kmodel section needs 'file' or 'terms'")
    g = cp["grid"]
    per = _ints(g.get("periodic"))
    dir_ = _ints(g.get("dirichlet"))
    if len(per) == 1:
        per = per * (k - 1)
    if len(dir_) == 1:
        dir_ = dir_ * (n - k + 1)
    grid = GridSpec(n=n, k=k, periodic_points=per, dirichlet_points=dir_,
                    delta0=spec.delta0)
    nm = cp["nashmoser"] if cp.has_section("nashmoser") else {}
    mode = nm.get("mode", "practical") if nm else "practical"
    gamma = float(nm.get("gamma", 1.2)) if nm else 1.2
    sigma = float(nm.get("sigma", 2.0)) if nm else 2.0
    kwargs = dict(
        mode=mode,
        max_iter=int(nm.get("max_iter", 15)) if nm else 15,
        stop_tol=float(nm.get("stop_tol", 1e-5)) if nm else 1e-5,
    )
    run_sec = cp["run"] if cp.has_section("run") else {}
    seed = int(run_sec.get("seed", -1)) if run_sec else -1
    kwargs["seed"] = max(seed, 0)
    if nm and nm.get("a", fallback=None) and nm.get("s_star", fallback=None):
        params = nashmoser.NashMoserParams(
            sigma_base=sigma, gamma=gamma, a_exp=float(nm.get("a")),
            s_star=float(nm.get("s_star")), **kwargs)
    else:
        params = nashmoser.params_from_schedule(n, k, gamma=gamma, sigma=sigma,
                                                **kwargs)
    outdir = run_sec.get("outdir", "out") if run_sec else "out"
    return RunConfig(spec, km, CutoffSpec(), grid, params, seed, outdir)


def _require_seed(cfg: RunConfig, args) -> int:
    seed = args.seed if args.seed is not None else (cfg.seed if cfg.seed >= 0 else None)
    if seed is None:
        raise ConfigError("a seed is required (config [run] seed or --seed)")
    return int(seed)


def _ensure_outdir(cfg: RunConfig, args) -> str:
    out = args.outdir or cfg.outdir
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                str(v) if isinstance(v, int) else f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_construct(args) -> int:
    cfg = load_config(args.config)
    out = _ensure_outdir(cfg, args)
    spec = cfg.spec
    if args.alpha is not None:
        spec = replace(spec, alpha=args.alpha)  # refuses out-of-range alpha
    approx = build_corrector(cfg.kmodel, cfg.cutoff, spec)
    rng = np.random.default_rng(cfg.seed if cfg.seed >= 0 else 0)
    pts = omega_samples(spec, args.samples, rng)
    ident = verify_trace_identity(approx, pts)
    dom = verify_diag_dominance(approx, pts)
    radius = dominance_validity_radius(approx, seed=max(cfg.seed, 0))
    summary = {
        "alpha": approx.alpha_used,
        "sigma_tau": spec.sigma_tau,
        "trace_identity_max_err": ident.max_abs_err,
        "trace_identity_rel_err": ident.rel_err,
        "dominance_min_margin": dom.min_margin,
        "dominance_validity_radius": radius,
        "exact_derivatives": approx.exact_derivatives,
        "samples": args.samples,
    }
    checks_ok = ident.rel_err <= 1e-10 and dom.min_margin >= 0.0
    if args.eps_sweep:
        sw = residual_sweep(approx, _floats(args.eps_sweep))
        _write_csv(os.path.join(out, "residual_sweep.csv"),
                   ["epsilon", "sup_residual"], sw.rows())
        summary["residual_slope"] = sw.slope
    _write_json(os.path.join(out, "construct_summary.json"), summary)
    print(f"trace identity max err {ident.max_abs_err:.3e} "
          f"(rel {ident.rel_err:.3e})")
    print(f"dominance margin {dom.min_margin:.3e}, validity radius {radius:g}")
    if "residual_slope" in summary:
        print(f"residual slope {summary['residual_slope']:.3f}")
    print("construct: " + ("PASS" if checks_ok else "FAIL"))
    return 0 if checks_ok else 1


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    seed = _require_seed(cfg, args)
    out = _ensure_outdir(cfg, args)
    params = replace(cfg.params, seed=seed)
    if args.max_iter is not None:
        params = replace(params, max_iter=args.max_iter)
    approx = build_corrector(cfg.kmodel, cfg.cutoff, cfg.spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = nashmoser.run(approx, params, cfg.grid, verbose=not args.quiet)
    nashmoser.trace_to_csv(result.trace, os.path.join(out, "trace.csv"),
                           include_wall=False)
    nashmoser.trace_to_csv(result.trace, os.path.join(out, "timings.csv"),
                           include_wall=True)
    save_field(os.path.join(out, "w.field"),
               result.w)
    g_final, theta = nashmoser.residual(result.w, approx)
    save_field(os.path.join(out, "g.field"), g_final)
    ginf = result.trace.g_norm_inf
    summary = {
        "status": result.status,
        "steps": len(ginf) - 1,
        "theta_initial": ginf[0],
        "theta_final": theta,
        "reduction": ginf[0] / max(min(ginf), 1e-300),
        "seed": seed,
        "schedule_proxy_M": result.trace.m_proxy,
        "schedule_proxy_N": result.trace.n_proxy,
        "proxy_order": result.trace.proxy_order,
    }
    _write_json(os.path.join(out, "solve_summary.json"), summary)
    print(f"solve: {result.status}; residual sup {ginf[0]:.3e} -> {theta:.3e}")
    return 0 if not result.status.startswith("aborted") else 1


def cmd_certify(args) -> int:
    cfg = load_config(args.config)
    seed = _require_seed(cfg, args)
    out = _ensure_outdir(cfg, args)
    spec = cfg.spec
    approx = build_corrector(cfg.kmodel, cfg.cutoff, spec)
    snap = args.snapshot or os.path.join(out, "w.field")
    if os.path.exists(snap):
        w = load_field(snap)
    else:
        w = zero_field(cfg.grid)
    if args.scale_w != 1.0:
        w = w.scaled(args.scale_w)
    _, theta = nashmoser.residual(w, approx)

    rng = np.random.default_rng(seed)
    evaluator = nashmoser.solution_evaluator(w, approx)
    Y, Z, T = convexity.random_segment_battery(spec, args.segments, rng,
                                               through_origin=args.segments // 10)
    margins = convexity.segment_margin_batch(evaluator.hess, Y, Z, T)
    _write_csv(os.path.join(out, "segment_margins.csv"),
               ["t", "margin"], list(zip(T.tolist(), margins.tolist())))

    rfield = linsolve.hessian_field(w, approx)
    dom = convexity.dominance_margin(rfield, cfg.grid, spec,
                                     alpha=approx.alpha_used)
    flat = convexity.boundary_flatness(w, spec, theta_res=theta)

    wt_vals = (approx.corrector(cfg.grid.points() * spec.epsilon**2)
               + spec.epsilon**8.5 * w.values) / spec.epsilon**4
    wt = GridField(wt_vals, cfg.grid)
    ep = convexity.eig_perturb(spec.tau, wt, spec.epsilon**4)
    eig_agree = ep.closed_form_agreement()

    checks = {
        "segment_margins_positive": bool(np.min(margins) > 0.0),
        "dominance_nonnegative": bool(dom.passed),
        "flatness_within_tol": bool(flat.passed),
        "eigenvector_agreement": bool(eig_agree <= 1e-8),
    }
    summary = {
        "checks": checks,
        "min_segment_margin": float(np.min(margins)),
        "dominance_min_margin": dom.min_margin,
        "mixed_block_constant": dom.mixed_block_constant,
        "flatness_second_slice_max": flat.second_slice_max,
        "flatness_third_slice_max": flat.third_slice_max,
        "flatness_tol": flat.tol,
        "eig_closed_form_agreement": eig_agree,
        "theta_residual": theta,
        "segments": args.segments,
        "seed": seed,
    }
    _write_json(os.path.join(out, "certificate.json"), summary)
    ok = all(checks.values())
    for name, val in checks.items():
        print(f"{name}: {'PASS' if val else 'FAIL'}")
    print("certificate: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _ensure_outdir(cfg, args)
    approx = build_corrector(cfg.kmodel, cfg.cutoff, cfg.spec)
    eps_list = _floats(args.eps_list)
    sw = residual_sweep(approx, eps_list)
    rows = sw.rows()
    _write_csv(os.path.join(out, "residual_sweep.csv"),
               ["epsilon", "sup_residual"], rows)
    print("epsilon sweep (sup residual of the approximate solution):")
    for e, r in rows:
        print(f"  eps={e:<10g} sup={r:.6e}")
    print(f"fitted log-log slope: {sw.slope:.4f}")
    largest = None
    if args.runs:
        seed = _require_seed(cfg, args)
        statuses = []
        for e in sorted(eps_list, reverse=True):
            spec_e = replace(cfg.spec, epsilon=float(e))
            ap_e = build_corrector(cfg.kmodel, cfg.cutoff, spec_e)
            params = replace(cfg.params, seed=seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = nashmoser.run(ap_e, params, cfg.grid)
            statuses.append((e, res.status))
            if res.converged and (largest is None or e > largest):
                largest = e
            print(f"  eps={e:<10g} run status: {res.status}")
        _write_csv(os.path.join(out, "sweep_runs.csv"), ["epsilon", "converged"],
                   [(e, int(s == "converged")) for e, s in statuses])
        if largest is not None:
            print(f"largest epsilon with a converged run: {largest:g}")
    _write_json(os.path.join(out, "sweep_summary.json"),
                {"slope": sw.slope, "eps": list(sw.eps),
                 "sup_residual": list(sw.sup_residual),
                 "largest_converging_eps": largest})
    return 0


def cmd_schedule(args) -> int:
    cfg = load_config(args.config)
    n, k = cfg.spec.n, cfg.spec.k
    override = args.gamma is not None
    gamma = args.gamma if override else cfg.params.gamma
    try:
        probe = nashmoser.NashMoserParams(
            sigma_base=max(cfg.params.sigma_base, 1.0 + 1e-9), gamma=gamma,
            a_exp=cfg.params.a_exp, s_star=cfg.params.s_star)
    except ConfigError as exc:
        print(f"schedule: REJECTED ({exc})")
        return 1
    rep = nashmoser.check_schedule(probe, n, k, c_measured=args.c_measured)
    print(f"gamma = {rep.gamma:g}, beta = 4/(gamma-1) = {rep.beta:g}")
    if not np.isfinite(rep.a_min):
        print(f"schedule: REJECTED ({rep.detail})")
        return 1
    print(f"feasibility frontier: a >= {rep.a_min:g}, s* >= {rep.s_star_min:g}")
    if override:
        ok = True  # the frontier exists for this gamma
    else:
        ok = rep.feasible
        print(f"configured exponents: a = {probe.a_exp:g}, s* = {probe.s_star:g} "
              f"-> {rep.detail}")
    if rep.sigma_min_proxy is not None:
        print(f"base-size proxy: sigma >= {rep.sigma_min_proxy:g} "
              f"for measured constant {args.c_measured:g}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="khess",
        description="degenerate k-Hessian local solver: construction, "
                    "iteration, certification")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--outdir", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="seed for randomized batteries")

    c = sub.add_parser("construct", help="build and verify the approximate solution")
    common(c)
    c.add_argument("--alpha", type=float, default=None,
                   help="override the cross-coupling weight (validated)")
    c.add_argument("--samples", type=int, default=2000)
    c.add_argument("--eps-sweep", default=None,
                   help="comma list of epsilons for a residual table")
    c.set_defaults(fn=cmd_construct)

    s = sub.add_parser("solve", help="run the iteration to a discrete solution")
    common(s)
    s.add_argument("--max-iter", type=int, default=None)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=cmd_solve)

    t = sub.add_parser("certify", help="convexity certificate for a solved snapshot")
    common(t)
    t.add_argument("--snapshot", default=None, help="perturbation-field snapshot")
    t.add_argument("--segments", type=int, default=500)
    t.add_argument("--scale-w", type=float, default=1.0,
                   help="scale the loaded field (negative controls)")
    t.set_defaults(fn=cmd_certify)

    w = sub.add_parser("sweep", help="epsilon scaling study")
    common(w)
    w.add_argument("--eps-list", required=True,
                   help="comma list of epsilons, e.g. 0.25,0.125,0.0625")
    w.add_argument("--runs", action="store_true",
                   help="also run the iteration per epsilon")
    w.set_defaults(fn=cmd_sweep)

    h = sub.add_parser("schedule", help="schedule feasibility arithmetic")
    common(h)
    h.add_argument("--gamma", type=float, default=None)
    h.add_argument("--c-measured", type=float, default=None,
                   help="measured estimate constant for the base-size proxy")
    h.set_defaults(fn=cmd_schedule)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (linsolve.SolverError, nashmoser.IterationError,
            convexity.QuadratureError, convexity.GapCollapseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
