"""Command-line entry point ``fracpar``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 acceptance failure.  Every output directory receives ``run_info.txt``
holding the configuration digest, the tool version and the resolved
configuration.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, RunConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 2, 3, 4
COMMANDS = ("frac", "extend", "dtn", "kernel", "dirichlet", "holder", "harnack", "validate")


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    """Deterministic CSV: fixed column order, ``%.17g`` floats, ``\\n`` line ends."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _prepare(cfg: RunConfig) -> str:
    from . import __version__
    os.makedirs(cfg.output, exist_ok=True)
    with open(os.path.join(cfg.output, "run_info.txt"), "w") as fh:
        fh.write(f"tool=fracpar {__version__}\nconfig_digest={cfg.digest()}\n")
        fh.write(cfg.canonical_text())
    return cfg.digest()


def _setup(cfg: RunConfig, time_mode: str | None = None):
    from .coefficients import CoefficientField
    from .grid import Grid, random_field, read_field
    from .operator import ParabolicOperator

    g = Grid(cfg.spatial_dims, cfg.nx, cfg.nt, cfg.Lx, cfg.Lt)
    if cfg.coefficients.startswith("file:"):
        coeffs = CoefficientField.read(cfg.coefficients[5:])
        if coeffs.grid != g:
            raise ConfigError("coefficient file grid does not match the configured grid")
    else:
        coeffs = CoefficientField.builtin(cfg.coefficients, g, cfg.coeff_scale)
    op = ParabolicOperator(coeffs, time_mode or cfg.time_mode, cfg.solver_tol, cfg.solver_max_iter)
    if cfg.input:
        u = read_field(cfg.input)
        if u.grid != g:
            raise ConfigError("input field grid does not match the configured grid")
    else:
        u = random_field(g, cfg.seed, cfg.field_kind)
    return g, op, u


def _yosida(cfg: RunConfig):
    from .semigroup import YosidaConfig
    return YosidaConfig(sigma=cfg.sigma_value(), poisson_tail_tol=cfg.poisson_tail_tol)


def cmd_frac(cfg: RunConfig) -> int:
    from .fractional import QuadratureSpec, hs_balakrishnan, hs_fourier, hs_semigroup
    from .grid import l2_norm, write_field

    _prepare(cfg)
    g, op, u = _setup(cfg)
    out = {}
    for route in cfg.route_list():
        if route == "fourier":
            out[route] = hs_fourier(u, cfg.s, op)
        elif route == "balakrishnan":
            out[route] = hs_balakrishnan(op, u, cfg.s, QuadratureSpec(cfg.quad_scheme, cfg.quad_nodes))
        else:
            out[route] = hs_semigroup(op, u, cfg.s, _yosida(cfg))
        write_field(os.path.join(cfg.output, f"hs_{route}.fp1"), out[route])
    routes = list(out)
    path = os.path.join(cfg.output, "route_errors.csv")
    if len(routes) == 1:
        open(path, "w").close()
    else:
        ref = out[routes[0]]
        rows = [(routes[0], r, l2_norm(out[r] - ref) / l2_norm(ref)) for r in routes[1:]]
        write_csv(path, ("reference", "route", "rel_err"), rows)
    return EXIT_OK


def _lambdas(cfg: RunConfig):
    from .extension import default_ladder
    lam = cfg.lambda_list()
    return sorted(lam) if lam else list(default_ladder())


def cmd_extend(cfg: RunConfig) -> int:
    from .extension import extension_profile
    from .grid import l2_norm

    digest = _prepare(cfg)
    g, op, u = _setup(cfg)
    p = extension_profile(op, u, cfg.s, _lambdas(cfg), _yosida(cfg))
    p.save(os.path.join(cfg.output, "profile"), digest)
    write_csv(os.path.join(cfg.output, "profile.csv"), ("lambda", "l2_norm"),
              [(float(lam), l2_norm(v)) for lam, v in zip(p.lambdas, p.slices)])
    return EXIT_OK


def cmd_dtn(cfg: RunConfig) -> int:
    from .extension import dtn_limit
    from .fractional import c_s, hs_fourier
    from .grid import l2_norm, write_field

    _prepare(cfg)
    g, op, u = _setup(cfg)
    r = dtn_limit(op, u, cfg.s, _yosida(cfg), lambda0=cfg.dtn_lambda0, rungs=cfg.dtn_rungs)
    write_field(os.path.join(cfg.output, "dtn.fp1"), r.field)
    ref = hs_fourier(u, cfg.s, op) * c_s(cfg.s) if op.is_constant else None
    rows = []
    for k, (h, q) in enumerate(zip(r.heights, r.quotients)):
        err = l2_norm(q - ref) / l2_norm(ref) if ref is not None else float("nan")
        rows.append((k, float(h), l2_norm(q), err))
    write_csv(os.path.join(cfg.output, "dtn_ladder.csv"), ("rung", "height", "quotient_norm", "rel_err"), rows)
    lim_err = l2_norm(r.field - ref) / l2_norm(ref) if ref is not None else float("nan")
    write_csv(os.path.join(cfg.output, "dtn_summary.csv"), ("s", "c_s", "limit_rel_err", "flux_constant"),
              [(cfg.s, c_s(cfg.s), lim_err, r.flux_constant)])
    return EXIT_OK


def cmd_kernel(cfg: RunConfig) -> int:
    from .kernels import fundamental_solution_column, gaussian_bound_fit, resolvent_kernel

    digest = _prepare(cfg)
    g, op, _ = _setup(cfg, "backward")
    sx = cfg.nx // 2 if cfg.source_x < 0 else cfg.source_x
    src = ((sx,) * g.spatial_dims, cfg.source_t)
    if cfg.kernel_sigma > 0:
        col = resolvent_kernel(op, cfg.kernel_sigma, cfg.kernel_m, src)
    else:
        horizon = cfg.horizon if cfg.horizon > 0 else None
        col = fundamental_solution_column(op, src, horizon, cfg.substeps)
    col.save(os.path.join(cfg.output, "kernel"), digest)
    mass = col.spatial_mass()
    lags = col.lags()
    v = col.values.values.real
    rows = [(j, float(lags[j]), float(mass[j]), float(v[j].min()), float(v[j].max()))
            for j in range(g.nt) if col.causal_mask[j]]
    write_csv(os.path.join(cfg.output, "kernel_slices.csv"), ("level", "lag", "mass", "min", "max"), rows)
    fit = gaussian_bound_fit(col)
    write_csv(os.path.join(cfg.output, "gaussian_fit.csv"),
              ("C", "c", "dominance", "points", "violations", "residual_rms"),
              [(fit.C, fit.c, fit.dominance, fit.points, fit.violations, fit.residual_rms)])
    return EXIT_OK


def _dirichlet(cfg: RunConfig):
    from .grid import Field, ParabolicCube, ParabolicPoint
    from .regularity import NonlocalDirichletProblem, hs_dense_matrix, rough_exterior, solve_nonlocal_dirichlet

    g, op, _ = _setup(cfg, "backward")
    cx = cfg.Lx / 2 if cfg.cube_x != cfg.cube_x else cfg.cube_x
    ct = cfg.Lt / 2 if cfg.cube_t != cfg.cube_t else cfg.cube_t
    cube = ParabolicCube(ParabolicPoint((cx,) * g.spatial_dims, ct), cfg.cube_radius)
    f = rough_exterior(cfg.seed, g) if cfg.exterior == "rough" else Field.constant(g, 1.0)
    route = "fourier" if op.is_constant else "balakrishnan"
    p = NonlocalDirichletProblem(cfg.s, cube, f, route)
    M = hs_dense_matrix(op, cfg.s, route)
    return g, cube, p, M, solve_nonlocal_dirichlet(p, op, M)


def _report_row(rep):
    return (rep.alpha_estimate if rep.alpha_estimate is not None else float("nan"),
            rep.holder_constant if rep.holder_constant is not None else float("nan"),
            rep.harnack_ratio if rep.harnack_ratio is not None else float("nan"),
            "x".join(str(n) for n in rep.resolution), rep.cube.radius, int(rep.defined),
            ";".join(rep.flags), rep.surrogate)


REPORT_HEADER = ("alpha", "c", "ratio", "resolution", "cube_radius", "defined", "flags", "surrogate")


def cmd_dirichlet(cfg: RunConfig) -> int:
    from .grid import write_field
    from .regularity import comparison_sign_report, interior_residual

    _prepare(cfg)
    g, cube, p, M, u = _dirichlet(cfg)
    write_field(os.path.join(cfg.output, "solution.fp1"), u)
    sr = comparison_sign_report(M)
    inner = cube.mask(g)
    write_csv(os.path.join(cfg.output, "dirichlet.csv"),
              ("min_interior", "max_interior", "interior_residual", "max_abs_row_sum", "max_offdiag", "route"),
              [(float(u.values.real[inner].min()), float(u.values.real[inner].max()),
                interior_residual(u, p, M), sr.max_abs_row_sum, sr.max_offdiag, p.route)])
    return EXIT_OK


def cmd_holder(cfg: RunConfig) -> int:
    from .regularity import holder_exponent_estimate

    _prepare(cfg)
    g, cube, p, M, u = _dirichlet(cfg)
    rep = holder_exponent_estimate(u, cube, d_min=cfg.holder_dmin or None)
    write_csv(os.path.join(cfg.output, "holder.csv"), REPORT_HEADER, [_report_row(rep)])
    return EXIT_OK


def cmd_harnack(cfg: RunConfig) -> int:
    from .regularity import harnack_ratio

    _prepare(cfg)
    g, cube, p, M, u = _dirichlet(cfg)
    rep = harnack_ratio(u, cube)
    write_csv(os.path.join(cfg.output, "harnack.csv"), REPORT_HEADER, [_report_row(rep)])
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    from .acceptance import run_acceptance

    _prepare(cfg)
    results = run_acceptance()
    write_csv(os.path.join(cfg.output, "acceptance.csv"), ("criterion", "title", "status", "measured", "required"),
              [(r.number, r.title, "pass" if r.passed else "fail", r.measured.replace(",", ";"),
                r.threshold.replace(",", ";")) for r in results])
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPT


HANDLERS = {"frac": cmd_frac, "extend": cmd_extend, "dtn": cmd_dtn, "kernel": cmd_kernel,
            "dirichlet": cmd_dirichlet, "holder": cmd_holder, "harnack": cmd_harnack, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracpar", description="Fractional powers of parabolic operators on a periodic grid.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key=value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a configuration key")
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP worker threads")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_CONFIG
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        print(f"invalid-config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"invalid-config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, ValueError, OSError) as exc:
        print(f"numerical-failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
