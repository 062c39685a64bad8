"""Scenario driver: configs in, certified fields and reports out.

Subcommands:
    run <config.json>                  execute one scenario
    sweep <config.json> --eps a,b,c    re-run the scenario across scales
    render <field.bin> <out.pgm>       rasterize a stored field
    validate <config.json>             check a config without computing

Exit codes: 0 success, 2 config error, 3 construction error,
4 convergence error, 5 certification failure.

Set NLBISTABLE_THREADS to cap BLAS/FFT thread pools (must be read before
the numeric stack is imported, hence the lazy imports below).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .errors import (
    CertificationError,
    ConfigError,
    ConstructionError,
    ConvergenceError,
    NLBistableError,
)

EXIT_CODES = {
    ConfigError: 2,
    ConstructionError: 3,
    ConvergenceError: 4,
    CertificationError: 5,
}

_SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "scenario", "name", "seed", "mode", "dimension",
    "kernel", "nonlinearity", "obstacle", "epsilon", "grid", "solver",
    "output_dir",
}
_KERNEL_KEYS = {"type", "support_radius", "shoulder"}
_NONLIN_KEYS = {"theta", "amplitude", "kappa", "delta"}
_OBSTACLE_KEYS = {"kind", "r0", "r1", "smoothing"}
_GRID_KEYS = {"spacing", "cells_per_support", "box_half_width", "box_x_max"}
_SOLVER_KEYS = {
    "k", "outer_tol", "max_outer", "lin_solve_tol", "classification_tol",
    "minimizer_max_iter",
}


def _reject_unknown(section, keys, allowed):
    extra = set(keys) - allowed
    if extra:
        raise ConfigError(
            f"unknown keys in {section}: {sorted(extra)} (configs are "
            "experiment records; unknown keys are rejected)"
        )


@dataclass
class ProblemConfig:
    """Validated scenario description (see README for the JSON schema)."""

    scenario: str
    name: str
    seed: int
    mode: str
    dimension: int
    kernel: dict
    nonlinearity: dict
    obstacle: dict
    epsilon: float
    grid: dict
    solver: dict
    output_dir: str

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown("config", raw.keys(), _TOP_KEYS)
        if raw.get("schema_version") != _SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version must be {_SCHEMA_VERSION}"
            )
        scenario = raw.get("scenario")
        if scenario not in ("annulus_trivial", "pipeline"):
            raise ConfigError(
                f"scenario must be 'annulus_trivial' or 'pipeline', "
                f"got {scenario!r}"
            )
        mode = raw.get("mode", "euclidean")
        if mode not in ("euclidean", "geodesic"):
            raise ConfigError("mode must be 'euclidean' or 'geodesic'")
        dim = int(raw.get("dimension", 2))
        if dim != 2:
            raise ConfigError("this build supports dimension 2")
        kernel = dict(raw.get("kernel", {}))
        _reject_unknown("kernel", kernel.keys(), _KERNEL_KEYS)
        kernel.setdefault("type", "tent")
        kernel.setdefault("support_radius", 0.5)
        nonlin = dict(raw.get("nonlinearity", {}))
        _reject_unknown("nonlinearity", nonlin.keys(), _NONLIN_KEYS)
        if "theta" not in nonlin or "amplitude" not in nonlin:
            raise ConfigError("nonlinearity needs theta and amplitude")
        nonlin.setdefault("kappa", None)
        nonlin.setdefault("delta", 0.05)
        obstacle = dict(raw.get("obstacle", {}))
        _reject_unknown("obstacle", obstacle.keys(), _OBSTACLE_KEYS)
        if "kind" not in obstacle:
            raise ConfigError("obstacle needs a kind")
        eps = float(raw.get("epsilon", 0.0))
        if not 0.0 < eps <= 1.0:
            raise ConfigError(
                "epsilon must lie in (0, 1]: the construction rescales the "
                "kernel to support eps*r and the reaction by eps^2"
            )
        grid = dict(raw.get("grid", {}))
        _reject_unknown("grid", grid.keys(), _GRID_KEYS)
        solver = dict(raw.get("solver", {}))
        _reject_unknown("solver", solver.keys(), _SOLVER_KEYS)
        solver.setdefault("k", 1.0)
        solver.setdefault("outer_tol", None)
        solver.setdefault("max_outer", 200_000)
        solver.setdefault("lin_solve_tol", 1e-12)
        solver.setdefault("classification_tol", 1e-3)
        solver.setdefault("minimizer_max_iter", 100_000)
        return cls(
            scenario=scenario,
            name=str(raw.get("name", "run")),
            seed=int(raw.get("seed", 0)),
            mode=mode,
            dimension=dim,
            kernel=kernel,
            nonlinearity=nonlin,
            obstacle=obstacle,
            epsilon=eps,
            grid=grid,
            solver=solver,
            output_dir=str(raw.get("output_dir", "runs")),
        )


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return ProblemConfig.from_dict(raw)


def _json_dump(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


class _RunLog:
    def __init__(self, path):
        self.path = Path(path)
        self.lines = []

    def note(self, msg):
        self.lines.append(str(msg))

    def flush(self):
        self.path.write_text("\n".join(self.lines) + "\n")


def build_plan(cfg):
    """Derive every numeric ingredient from a validated config.

    Raises ConfigError naming the violated model assumption whenever the
    requested data leaves the admissible family.
    """
    import numpy as np

    from . import construction as C
    from . import geometry as G
    from . import kernels as K
    from . import nonlinearity as NL

    if cfg.kernel["type"] == "tent":
        profile = K.tent_profile(cfg.dimension, cfg.kernel["support_radius"])
    elif cfg.kernel["type"] == "plateau":
        profile = K.plateau_profile(
            cfg.dimension, cfg.kernel["support_radius"],
            cfg.kernel.get("shoulder", 0.5),
        )
    else:
        raise ConfigError(f"unknown kernel type {cfg.kernel['type']!r}")
    checks = K.validate_kernel(profile)
    if not all(checks.values()):
        bad = [k for k, v in checks.items() if not v]
        raise ConfigError(
            f"kernel violates assumptions {bad} (unit mass, monotone radial "
            "decay, compact support, integrable weak derivative required)"
        )
    f = NL.make_cubic_bistable(
        cfg.nonlinearity["theta"], cfg.nonlinearity["amplitude"]
    )
    moments = K.compute_moments(profile, f)
    eps = cfg.epsilon
    prof_eps = K.rescale(profile, eps)
    supp = prof_eps.support_radius
    kind = cfg.obstacle["kind"]
    spec = G.ObstacleSpec(
        kind=kind,
        r0=float(cfg.obstacle.get("r0", 0.0)),
        r1=float(cfg.obstacle.get("r1", 0.0)),
        epsilon=eps,
        smoothing=cfg.obstacle.get("smoothing"),
    )
    spec.validate(cfg.dimension,
                  r0_star=moments.r0_star if kind == "channel_annulus" else None)
    h = cfg.grid.get("spacing")
    if h is None:
        cps = cfg.grid.get("cells_per_support") or 5
        h = supp / cps
        if kind == "channel_annulus":
            gamma = spec.channel_exponent(cfg.dimension)
            h = min(h, eps ** gamma / 4.0)
    h = float(h)
    if h > supp / 3.0:
        raise ConfigError(
            f"spacing {h} exceeds one third of the kernel support {supp}: "
            "the stencil needs at least 3 cells per support radius"
        )
    obstacle_extent = {
        "none": 0.0, "ball": spec.r0,
        "annulus": spec.r1, "channel_annulus": spec.r1,
    }[kind]
    w_t = cfg.grid.get("box_half_width")
    if w_t is None:
        w_t = obstacle_extent + 6.0 * supp
    w_t = float(w_t)
    if kind != "none" and w_t < obstacle_extent + 4.0 * supp:
        raise ConfigError(
            "box half-width must exceed the obstacle extent by at least "
            "four kernel support radii"
        )
    kappa = cfg.nonlinearity.get("kappa")
    if kappa is None:
        kappa = NL.default_kappa(f)
    x_max = cfg.grid.get("box_x_max")
    if cfg.scenario == "pipeline":
        extent = C.front_extent_estimate(
            f.theta, f.amplitude, moments.m2
        )
        r0_front_min = obstacle_extent + supp + 2 * h
        x_needed = r0_front_min + extent + 0.5
        if x_max is None:
            x_max = x_needed
        if x_max < x_needed - 1e-9:
            raise ConfigError(
                f"box_x_max={x_max} too small: the clipped front needs about "
                f"{x_needed:.2f} to reach its limit state at the far edge"
            )
    if x_max is None:
        x_max = w_t
    return {
        "profile": profile, "prof_eps": prof_eps, "f": f, "kappa": kappa,
        "moments": moments, "spec": spec, "h": h, "w_t": w_t,
        "x_max": float(x_max), "supp": supp,
    }


def _assemble_domain(cfg, plan):
    from . import geometry as G
    from . import kernels as K
    from . import nonlocal_op as NO

    h, supp, w_t, x_max = plan["h"], plan["supp"], plan["w_t"], plan["x_max"]
    dom = G.build_domain(
        plan["spec"], cfg.dimension, h,
        (-w_t, -w_t), (x_max, w_t), far_width=supp,
        r0_star=plan["moments"].r0_star
        if plan["spec"].kind == "channel_annulus" else None,
    )
    st = K.discretize(plan["prof_eps"], h, scale_epsilon=cfg.epsilon)
    profile_arg = plan["prof_eps"] if cfg.mode == "geodesic" else None
    ctx = NO.assemble(st, dom, mode=cfg.mode, profile=profile_arg)
    return dom, st, ctx


def _diagnostics(cfg, plan, ctx, extra=None):
    import numpy as np

    from . import energy as E
    from . import nonlinearity as NL

    m = plan["moments"]
    diag = {
        "epsilon": cfg.epsilon,
        "mode": cfg.mode,
        "kernel": {
            "m1": m.m1, "m2": m.m2, "grad_l1": m.grad_l1,
            "c_nj": m.c_nj, "r0_star": m.r0_star,
        },
        "reaction": {
            "theta": plan["f"].theta, "amplitude": plan["f"].amplitude,
            "c0": m.c0, "argmax": m.argmax_f, "kappa": plan["kappa"],
        },
        "grid": {
            "spacing": plan["h"], "shape": list(ctx.domain.shape),
            "cells": ctx.domain.n_cells,
        },
        "min_mass": ctx.min_mass(),
    }
    if extra:
        diag.update(extra)
    return diag


def run_scenario(config_path, output_dir=None):
    """Execute a scenario; returns (exit_code, report_dict)."""
    try:
        cfg = load_config(config_path)
        code, report = _run_validated(cfg, output_dir)
        return code, report
    except NLBistableError as exc:
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code, {"error": str(exc), "error_class": klass.__name__}
        return 1, {"error": str(exc), "error_class": "NLBistableError"}


def _run_validated(cfg, output_dir=None):
    import numpy as np

    from . import construction as C
    from . import energy as E
    from . import geometry as G
    from . import io_formats as IO
    from . import nonlinearity as NL
    from . import nonlocal_op as NO
    from . import solver as S

    out = Path(output_dir or cfg.output_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    log = _RunLog(out / "run.log")
    log.note(f"scenario={cfg.scenario} name={cfg.name} mode={cfg.mode} "
             f"epsilon={cfg.epsilon} seed={cfg.seed}")
    try:
        plan = build_plan(cfg)
        dom, st, ctx = _assemble_domain(cfg, plan)
        log.note(f"grid shape={dom.shape} cells={dom.n_cells} h={plan['h']}")
        IO.write_mask_pgm(out / "mask.pgm", dom)
        IO.write_field_binary(out / "mask.bin", dom,
                              np.where(dom.active, 1.0, 0.0))
        f = plan["f"]
        f_eps = NL.rescale_reaction(f, cfg.epsilon)
        tol = C.residual_tolerance(plan["h"], plan["moments"].grad_l1,
                                   cfg.epsilon)
        labels = None
        if plan["spec"].kind in ("annulus", "channel_annulus"):
            labels = G.classify_regions(dom, plan["spec"])
        extra = {}

        if cfg.scenario == "annulus_trivial":
            u, state, extra = _run_annulus_trivial(
                cfg, plan, dom, ctx, f_eps, tol, log, S, np)
        else:
            u, state, extra = _run_pipeline(
                cfg, plan, dom, st, ctx, f_eps, tol, log, out, extra)

        report = S.certify_solution(
            ctx, u, f_eps, tol,
            classification_tol=cfg.solver["classification_tol"],
            labels=labels, require=True,
        )
        report.iterations = state.iteration if state is not None else 0
        rep = report.to_dict()
        rep["scenario"] = cfg.scenario
        rep["name"] = cfg.name
        rep["mode"] = cfg.mode
        rep["epsilon"] = cfg.epsilon
        _json_dump(out / "report.json", rep)
        diag = _diagnostics(cfg, plan, ctx, extra)
        _json_dump(out / "diagnostics.json", diag)
        vals = u.values if hasattr(u, "values") else u
        IO.write_field_binary(out / "solution.bin", dom, vals)
        IO.write_field_csv(out / "solution.csv", dom, vals)
        IO.render_to_pgm(out / "solution.pgm", np.where(dom.active, vals, np.nan),
                         lo=0.0, hi=1.0)
        log.note(f"residual_max={report.residual_max:.3e} "
                 f"liouville={report.liouville_flag}")
        log.flush()
        return 0, rep
    except NLBistableError as exc:
        log.note(f"ERROR {type(exc).__name__}: {exc}")
        log.flush()
        raise


def _run_annulus_trivial(cfg, plan, dom, ctx, f_eps, tol, log, S, np):
    """The piecewise 0/1 state on the sealed annulus is an exact solution;
    build it directly and let the monotone scheme confirm idempotence."""
    spec = plan["spec"]
    if spec.kind != "annulus":
        raise ConfigError("annulus_trivial scenario needs an annulus obstacle")
    if plan["supp"] >= spec.r1 - spec.r0:
        raise ConfigError(
            "kernel support must stay below the annulus thickness so no "
            "jump bridges the inner ball to the outer field"
        )
    r = dom.radius_field()
    u0 = np.where(dom.active & (r > spec.r1), 1.0, 0.0)
    u, state = S.monotone_iterate(
        ctx, f_eps, u0, u0, k=cfg.solver["k"],
        outer_tol=cfg.solver["outer_tol"],
        lin_tol=cfg.solver["lin_solve_tol"],
        max_outer=cfg.solver["max_outer"],
    )
    log.note(f"trivial state confirmed in {state.iteration} outer step(s)")
    return u, state, {}


def _run_pipeline(cfg, plan, dom, st, ctx, f_eps, tol, log, out, extra):
    import numpy as np

    from . import construction as C
    from . import energy as E
    from . import io_formats as IO
    from . import nonlinearity as NL
    from . import nonlocal_op as NO
    from . import solver as S

    f = plan["f"]
    spec = plan["spec"]
    eps = cfg.epsilon
    rng = np.random.default_rng(cfg.seed)
    ext = NL.extend_tilde(f, plan["kappa"])
    ext_eps = ext.rescaled(eps)

    if spec.kind in ("annulus", "channel_annulus"):
        pot = NL.make_potential(ext, eps)
        R = spec.r1 + 4.0 * plan["supp"]
        tr = NO.restrict_to_ball(ctx, R)
        ectx = E.make_energy_context(tr, pot, inner_radius=spec.r0)
        aux = C.solve_auxiliary(
            ectx, max_iter=cfg.solver["minimizer_max_iter"])
        log.note(f"auxiliary solve: {aux.minimizer_report.iterations} "
                 f"iterations, residual {aux.ktr_residual:.3e}")
        sup = C.extend_super_solution(
            aux, ctx, ext_eps, plan["moments"].grad_l1, eps)
        extra["sigma"] = sup.sigma
        extra["sigma_eps"] = sup.sigma_eps
        extra["minimizer"] = {
            k: float(v) for k, v in aux.minimizer_report.diagnostics.items()
        }
        extra["coercivity_margin"] = C.coercivity_margin(ctx, ext_eps)
        pd = E.poincare_diagnostic(ectx, spec.r0, n_fields=20, rng=rng)
        extra["poincare"] = pd
    elif spec.kind in ("ball", "none"):
        # convex obstacle: the constant 1 is the admissible super-solution
        sup = C.SuperSolution(
            field=NO.Field(dom, np.where(dom.active, 1.0, 0.0)),
            sigma=math.inf, sigma_eps=math.inf, ball_radius=0.0, aux=None,
        )
        extra["coercivity_margin"] = C.coercivity_margin(ctx, ext_eps)
    else:
        raise ConfigError(f"pipeline cannot handle obstacle kind {spec.kind!r}")

    worst_sup, ok_sup = sup.verify(ctx, f_eps, tol)
    log.note(f"super-solution residual max {worst_sup:.3e} (tol {tol:.3e})")
    if not ok_sup:
        raise ConstructionError(
            f"super-solution residual {worst_sup:.3e} above +{tol:.3e}"
        )
    fd = NL.make_shifted(f, cfg.nonlinearity["delta"])
    fd_eps = NL.rescale_reaction(fd, eps)
    width = math.sqrt(
        plan["moments"].m2 / (2 * f.amplitude * f.theta * (1 - f.theta))
    )
    front = C.solve_front_1d(fd_eps, st, half_width=40.0 * width)
    log.note(f"front speed {front.speed:.4e}, residual {front.residual_max:.3e}")
    sub = C.embed_sub_solution(front, ctx, sup, f_eps)
    worst_sub, ok_sub = sub.verify(ctx, f_eps, tol)
    log.note(f"sub-solution residual min {worst_sub:.3e}")
    if not ok_sub:
        raise ConstructionError(
            f"sub-solution residual {worst_sub:.3e} below -{tol:.3e}"
        )
    IO.write_field_binary(out / "super.bin", dom, sup.field.values)
    IO.write_field_binary(out / "sub.bin", dom, sub.field.values)
    with open(out / "front.csv", "w") as fh:
        fh.write("x1,phi\n")
        for xx, pp in zip(front.x, front.profile):
            fh.write(f"{xx!r},{pp!r}\n")
    extra["front"] = {"speed": front.speed, "delta": front.delta,
                      "residual": front.residual_max, "r0": sub.r0}
    u, state = S.monotone_iterate(
        ctx, f_eps, sub.field, sup.field, k=cfg.solver["k"],
        outer_tol=cfg.solver["outer_tol"],
        lin_tol=cfg.solver["lin_solve_tol"],
        max_outer=cfg.solver["max_outer"],
    )
    log.note(f"monotone iteration: {state.iteration} outer steps, "
             f"{sum(state.inner_sweeps)} sweeps")
    return u, state, extra


def sweep_epsilon(config_path, eps_list, output_dir=None):
    """Re-run the scenario across scales; returns (exit_code, rows)."""
    cfg = load_config(config_path)
    rows = []
    import numpy as np

    for eps in eps_list:
        raw = json.loads(Path(config_path).read_text())
        raw["epsilon"] = eps
        raw["name"] = f"{cfg.name}_eps{eps:g}"
        row = {"epsilon": eps, "min_mass": math.nan,
               "coercivity_margin": math.nan, "barrier_margin": math.nan,
               "inner_ball_min": math.nan, "liouville_flag": "",
               "error": ""}
        try:
            sub_cfg = ProblemConfig.from_dict(raw)
            code, rep = _run_validated(sub_cfg, output_dir)
            diag_path = (Path(output_dir or sub_cfg.output_dir)
                         / sub_cfg.name / "diagnostics.json")
            diag = json.loads(diag_path.read_text())
            row["min_mass"] = diag.get("min_mass", math.nan)
            row["coercivity_margin"] = diag.get("coercivity_margin", math.nan)
            mini = diag.get("minimizer", {})
            row["barrier_margin"] = mini.get("delta0", math.nan)
            stats = rep.get("region_stats", {})
            if "inner_ball" in stats:
                row["inner_ball_min"] = stats["inner_ball"]["min"]
            row["liouville_flag"] = str(rep["liouville_flag"]).lower()
        except NLBistableError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["epsilon", "min_mass", "coercivity_margin", "barrier_margin",
            "inner_ball_min", "liouville_flag", "error"]
    with open(out / f"{cfg.name}_sweep.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[c]) for c in cols) + "\n")
    return 0, rows


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    return '"' + s.replace('"', "'") + '"' if "," in s else s


def render_field(field_path, out_path, lo=None, hi=None):
    import numpy as np

    from . import io_formats as IO

    meta, data = IO.read_field_binary(field_path)
    shape = meta.get("shape")
    if shape is None:
        n = int(round(math.sqrt(meta["count"])))
        if n * n != meta["count"]:
            raise ConfigError(
                "field is not square and carries no shape metadata"
            )
        shape = (n, n)
    vals = data.reshape(shape)
    IO.render_to_pgm(out_path, vals, lo=lo, hi=hi)
    return 0


def main(argv=None):
    threads = os.environ.get("NLBISTABLE_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = argparse.ArgumentParser(
        prog="nlbistable",
        description="Steady states of nonlocal bistable equations with obstacles",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    p_run = subs.add_parser("run", help="execute one scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_sweep = subs.add_parser("sweep", help="run a scenario across scales")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--eps", required=True,
                         help="comma-separated scale parameters")
    p_sweep.add_argument("--output-dir", default=None)
    p_render = subs.add_parser("render", help="rasterize a stored field")
    p_render.add_argument("field")
    p_render.add_argument("out")
    p_render.add_argument("--min", type=float, default=None)
    p_render.add_argument("--max", type=float, default=None)
    p_val = subs.add_parser("validate", help="validate a config")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            code, report = run_scenario(args.config, args.output_dir)
            if code != 0:
                print(f"error[{code}]: {report.get('error')}", file=sys.stderr)
            else:
                print(json.dumps(report, sort_keys=True))
            return code
        if args.command == "sweep":
            eps_list = [float(tok) for tok in args.eps.split(",") if tok]
            if not eps_list:
                raise ConfigError("sweep needs at least one epsilon")
            code, rows = sweep_epsilon(args.config, eps_list, args.output_dir)
            for row in rows:
                print(json.dumps(row, sort_keys=True))
            return code
        if args.command == "render":
            return render_field(args.field, args.out, args.min, args.max)
        if args.command == "validate":
            cfg = load_config(args.config)
            build_plan(cfg)
            print(f"config ok: scenario={cfg.scenario} name={cfg.name}")
            return 0
    except NLBistableError as exc:
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                print(f"error[{code}]: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
