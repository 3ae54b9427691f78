"""Batch command line: ``cdconv {run,gradient-field,diagnose,sweep}``.

Exit status: 0 when every evaluated check passes (flagged checks included),
1 when a check fails, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__, cd, config as cfgmod, diagnostics as dg, expfam, io, kernels, oracle
from . import rng as rngmod
from .errors import NoInteriorMLEError

ENV_OUT = "CDCONV_OUT"
DEFAULT_OUT = "cdconv-out"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# worker pool

def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))  # map keeps submission order


# ---------------------------------------------------------------------------
# run

def _run_job(job):
    raw, start_idx, seed = job
    r = cfgmod.Resolved(cfgmod.parse(raw))
    data = expfam.sample_from_model(r.family, r.theta_star, r.cfg.data.n, r.cfg.data.seed)
    conf = cd.CDConfig(eta=r.eta, m=r.cfg.cd.m, steps=r.cfg.cd.steps, theta0=r.starts[start_idx],
                       domain=r.domain, projection=r.cfg.cd.projection, seed=seed)
    traj = cd.run_cd(r.family, r.kernel, data, conf)
    return io.trajectory_rows(traj), traj.clamped_steps


def cmd_run(r: cfgmod.Resolved, out: Path, jobs: int) -> tuple[int, dict]:
    n = r.require_n()
    raw = cfgmod.dump(r.cfg)
    jobs_list = [(raw, k, s) for k in range(len(r.starts)) for s in r.seeds]
    results = _pool_map(_run_job, jobs_list, jobs)
    outputs = []
    for (_, k, s), ((header, rows), clamped) in zip(jobs_list, results):
        name = f"traj_{k}_{s}.csv"
        io.write_csv(out / name, header, rows)
        outputs.append({"file": name, "start": r.starts[k].tolist(), "seed": s,
                        "clamped_steps": clamped})
    data = expfam.sample_from_model(r.family, r.theta_star, n, r.cfg.data.seed)
    extra = {"outputs": outputs, "mle": _mle_or_none(r.family, data)}
    return EXIT_OK, extra


def _mle_or_none(family, data):
    try:
        return expfam.mle(family, data).tolist()
    except NoInteriorMLEError:
        return None


# ---------------------------------------------------------------------------
# gradient field

def field_panels(d: int, axis_values: np.ndarray) -> list[tuple[str, np.ndarray]]:
    """Grid points per output file.

    ``d <= 2`` gives one full grid.  Otherwise one panel per coordinate pair
    ``(i, j)``, with every other coordinate pinned to the axis value nearest
    0.5 (ties go to the smaller value).
    """
    if d <= 2:
        mesh = np.meshgrid(*([axis_values] * d), indexing="ij")
        return [("", np.stack([m.ravel() for m in mesh], axis=-1))]
    pin = axis_values[np.argmin(np.abs(axis_values - 0.5))]
    panels = []
    for i in range(d):
        for j in range(i + 1, d):
            a, b = np.meshgrid(axis_values, axis_values, indexing="ij")
            pts = np.full((a.size, d), pin)
            pts[:, i], pts[:, j] = a.ravel(), b.ravel()
            panels.append((f"_{i + 1}_{j + 1}", pts))
    return panels


def gradient_field_rows(family, kernel, data, points, m, replicates, seed, panel_id=0):
    d = family.d
    header = (["point"] + [f"theta_{j + 1}" for j in range(d)] + [f"grad_{j + 1}" for j in range(d)]
              + ["replicate"] + [f"gcd_{j + 1}" for j in range(d)] + [f"dir_{j + 1}" for j in range(d)])
    rows = []
    for p, th in enumerate(points):
        g = expfam.exact_gradient(family, data, th)
        for rep in range(replicates):
            gen = rngmod.stream(seed, rngmod.GRADIENT_FIELD, panel_id, p, rep)
            gcd = cd.cd_gradient(family, kernel, data, th, m, gen)
            norm = np.linalg.norm(gcd)
            direction = gcd / norm if norm > 0 else np.zeros(d)
            rows.append([p, *th, *g, rep, *gcd, *direction])
    return header, rows


def angular_spread(directions: np.ndarray) -> float:
    """Circular spread ``1 - |mean unit vector|`` of a set of unit directions."""
    return float(1.0 - np.linalg.norm(np.asarray(directions).mean(axis=0)))


def _field_job(job):
    raw, seed, panel_id = job
    r = cfgmod.Resolved(cfgmod.parse(raw))
    grid = r.require_grid()
    data = expfam.sample_from_model(r.family, r.theta_star, r.cfg.data.n, r.cfg.data.seed)
    axis = np.linspace(grid.lower, grid.upper, grid.points_per_dim)
    suffix, pts = field_panels(r.family.d, axis)[panel_id]
    return suffix, gradient_field_rows(r.family, r.kernel, data, pts, r.cfg.cd.m,
                                       grid.replicates, seed, panel_id)


def cmd_gradient_field(r: cfgmod.Resolved, out: Path, jobs: int) -> tuple[int, dict]:
    r.require_n()
    grid = r.require_grid()
    raw = cfgmod.dump(r.cfg)
    n_panels = len(field_panels(r.family.d, np.linspace(grid.lower, grid.upper,
                                                        grid.points_per_dim)))
    jobs_list = [(raw, s, p) for s in r.seeds for p in range(n_panels)]
    outputs = []
    for (_, s, _), (suffix, (header, rows)) in zip(jobs_list, _pool_map(_field_job, jobs_list, jobs)):
        name = f"gradient_field{suffix}_{s}.csv"
        io.write_csv(out / name, header, rows)
        outputs.append({"file": name, "seed": s})
    return EXIT_OK, {"outputs": outputs}


# ---------------------------------------------------------------------------
# diagnose

def _exactness_records(family, kernel, data, theta, m, draws, replicates, seed) -> list[dg.Record]:
    table = family.table
    phi = expfam.suff_stat(family, expfam.draw(family, theta, draws,
                                               rngmod.stream(seed, rngmod.DIAGNOSE, 1)))
    mu, cov = oracle.exact_moments(table, theta)
    z_mean = np.abs(phi.mean(axis=0) - mu) / (phi.std(axis=0, ddof=1) / np.sqrt(draws))
    # centring on the exact mean keeps each product an unbiased i.i.d. estimate;
    # centring on the sample mean understates the error where p is near 1/2
    c = phi - mu
    prods = (c[:, :, None] * c[:, None, :]).reshape(draws, -1)
    se_cov = prods.std(axis=0, ddof=1) / np.sqrt(draws)
    z_cov = np.abs(prods.mean(axis=0) - cov.ravel()) / se_cov
    P = kernels.transition_matrix(kernel, theta).power(m)
    exact_g = oracle.exact_cd_gradient_mean(table, P, data.state_index)
    gs = dg.cd_gradient_replicates(family, kernel, data, theta, m, replicates, seed)
    z_g = np.abs(gs.mean(axis=0) - exact_g) / (gs.std(axis=0, ddof=1) / np.sqrt(replicates))
    inputs = {"theta": theta, "draws": draws}
    out = []
    for name, z, reps in (("exactness_mean", z_mean, draws), ("exactness_covariance", z_cov, draws),
                          ("exactness_cd_gradient", z_g, replicates)):
        zmax = float(np.nanmax(z))
        out.append(dg.Record(name, dict(inputs, m=m) if "gradient" in name else inputs,
                             4.0, zmax, 0.0, reps, bool(zmax <= 4.0), ["z-score"]))
    return out


def _spectral_record(r: cfgmod.Resolved, constants) -> dg.Record:
    g = r.cfg.diagnostics
    flags = dg.family_flags(r.family)
    if r.family.is_discrete and r.kernel.kind != kernels.EXACT_RESAMPLE:
        rep = kernels.alpha_sup_over_grid(r.kernel, r.domain, g.alpha_grid)
        inputs = {"points_per_dim": g.alpha_grid, "near_one": rep.near_one}
    else:
        inputs = {"method": "exact" if r.kernel.kind == kernels.EXACT_RESAMPLE else "autocorrelation",
                  "chain_length": g.alpha_chain_length}
    return dg.Record("spectral", inputs, 1.0, constants.alpha, 0.0, 0,
                     bool(constants.alpha < 1.0), flags)


def _unit(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def build_report(r: cfgmod.Resolved) -> dg.DiagnosticsReport:
    g = r.cfg.diagnostics
    checks = set(g.checks)
    n = r.require_n()
    seed = r.cfg.data.seed
    fam, ker, m, eta = r.family, r.kernel, r.cfg.cd.m, r.eta
    data = expfam.sample_from_model(fam, r.theta_star, n, seed)
    theta_hat = expfam.mle(fam, data)
    constants = dg.measured_drift_constants(
        fam, ker, r.theta_star, r.domain, m=m, eta=eta, n=n, gamma1=g.gamma1,
        lambda_grid=g.lambda_grid, lipschitz_grid=g.lipschitz_grid, alpha_grid=g.alpha_grid,
        alpha_chain_length=g.alpha_chain_length, seed=seed)
    beta = g.beta if g.beta is not None else dg.beta_schedule(n, g.gamma2)
    flags = dg.family_flags(fam)
    report = dg.DiagnosticsReport()

    def skipped(name, why):
        return dg.Record(name, {}, None, None, None, 0, None, flags + [why])

    if "spectral" in checks:
        report.add(_spectral_record(r, constants))
    if "exactness" in checks:
        if fam.is_discrete:
            report.extend(_exactness_records(fam, ker, data, r.theta_star, m, g.exactness_draws,
                                             g.replicates, seed))
        else:
            report.add(skipped("exactness", dg.NOT_COMPUTED))
    if "constraints" in checks:
        report.extend(dg.constraint_records(fam, data, r.theta_star, ker, m,
                                            r.domain.grid(g.constraint_grid), g.gamma1))
    if "drift_constants" in checks:
        rec = dg.drift_constants_record(constants, flags + ["L-simulation-only"])
        rec.inputs.update(beta=beta, lambda_grid=g.lambda_grid, lipschitz_grid=g.lipschitz_grid)
        report.add(rec)

    pts_rng = rngmod.stream(seed, rngmod.DIAGNOSE, 2)
    extra = r.domain.uniform(pts_rng, max(g.bias_points - 2, 0))
    points = np.vstack([theta_hat, r.theta_star, extra])[: max(g.bias_points, 1)]
    if "bias" in checks:
        for th in points:
            report.add(dg.bias_report(fam, ker, data, th, m, g.replicates, constants,
                                      theta_star=r.theta_star, seed=seed, theta_hat=theta_hat))
    if "variance" in checks:
        for th in points:
            report.add(dg.variance_report(fam, ker, data, th, m, g.replicates, seed))

    if "drift" in checks:
        if not constants.condition_holds:
            report.add(skipped("drift", dg.CONDITION_VIOLATED))
        else:
            dir_rng = rngmod.stream(seed, rngmod.DIAGNOSE, 3)
            for k in g.drift_radii:
                th = theta_hat + k * constants.radius(beta) * _unit(dir_rng, fam.d)
                rec = dg.drift_check(fam, ker, data, th, eta, m, constants, g.drift_replicates,
                                     beta=beta, seed=seed, theta_hat=theta_hat,
                                     domain=r.domain)
                rec.inputs["radius_multiple"] = k
                report.add(rec)
    if "hitting_time" in checks:
        if not constants.condition_holds:
            report.add(skipped("hitting_time", dg.CONDITION_VIOLATED))
        else:
            ball = dg.Ball.from_constants(theta_hat, constants, beta)
            report.extend(dg.hitting_time_check(fam, ker, data, eta, m, constants, ball, r.starts,
                                                g.hitting_replicates, g.hitting_horizon, seed))
    traj = None
    if "concentration" in checks or "lattice" in checks:
        steps = g.concentration_steps or r.cfg.cd.steps
        conf = cd.CDConfig(eta=eta, m=m, steps=steps, theta0=r.starts[0], domain=r.domain,
                           projection=r.cfg.cd.projection, seed=r.seeds[0])
        traj = cd.run_cd(fam, ker, data, conf) if steps > 0 else None
    if "concentration" in checks:
        if traj is None:
            report.add(skipped("concentration", dg.NOT_COMPUTED))
        else:
            report.add(dg.concentration_report(fam, traj, constants, beta,
                                               min(r.burn_in, traj.steps - 1), theta_hat))
    if "lattice" in checks:
        if not fam.is_discrete or traj is None:
            report.add(skipped("lattice", dg.NOT_COMPUTED))
        else:
            report.add(dg.lattice_check(traj, fam, data))
    return report


def cmd_diagnose(r: cfgmod.Resolved, out: Path, jobs: int) -> tuple[int, dict]:
    report = build_report(r)
    records = report.as_list()
    io.write_json(out / "report.json", records)
    io.atomic_write_text(out / "report.csv", io.report_csv_text(records))
    return (EXIT_FAIL if report.failed else EXIT_OK), {"outputs": [{"file": "report.json"},
                                                                   {"file": "report.csv"}]}


# ---------------------------------------------------------------------------
# sweep

def _sweep_job(job):
    raw, n, k = job
    r = cfgmod.Resolved(cfgmod.parse(raw))
    return dg.sweep_one(r.family, r.kernel, r.theta_star, n, r.eta, r.cfg.cd.m, r.cfg.cd.steps,
                        r.starts[0], r.domain, dg.sweep_seed(r.cfg.data.seed, n, k), r.burn_in)


def cmd_sweep(r: cfgmod.Resolved, out: Path, jobs: int) -> tuple[int, dict]:
    n_list = r.require_n_list()
    if r.cfg.cd.steps < 2:
        raise cfgmod.ConfigError("cd.steps: sweep needs at least 2 steps")
    raw = cfgmod.dump(r.cfg)
    jobs_list = [(raw, n, k) for n in n_list for k in range(r.cfg.data.seeds_per_n)]
    rows = _pool_map(_sweep_job, jobs_list, jobs)
    runs_header = ["n", "seed", *dg.SWEEP_FIELDS]
    io.write_csv(out / "sweep_runs.csv", runs_header,
                 [[row.n, row.seed, *(getattr(row, f) for f in dg.SWEEP_FIELDS)] for row in rows])
    summary = dg.summarize_sweep(rows)
    header = list(summary[0].keys())
    io.write_csv(out / "sweep.csv", header, [[s[h] for h in header] for s in summary])
    return EXIT_OK, {"outputs": [{"file": "sweep.csv"}, {"file": "sweep_runs.csv"}]}


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {"run": cmd_run, "gradient-field": cmd_gradient_field,
            "diagnose": cmd_diagnose, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdconv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="YAML experiment config")
        src.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="built-in config")
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default: ${ENV_OUT} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=_u64, default=None, help="override data and chain seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _out_dir(args, cfg) -> Path:
    if args.out is not None:
        return args.out
    if cfg.out is not None:
        return Path(cfg.out)
    return Path(os.environ.get(ENV_OUT, DEFAULT_OUT))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise cfgmod.ConfigError("--jobs: must be at least 1")
        cfg = cfgmod.preset(args.preset) if args.preset else cfgmod.load(args.config)
        if args.seed is not None:
            cfg = cfgmod.with_seed(cfg, args.seed)
        resolved = cfgmod.Resolved(cfg)
        out = _out_dir(args, cfg)
        status, extra = COMMANDS[args.command](resolved, out, args.jobs)
    except cfgmod.ConfigError as err:
        print(f"cdconv: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NoInteriorMLEError as err:
        print(f"cdconv: {err}", file=sys.stderr)
        return EXIT_FAIL
    resolved_raw = cfgmod.dump(cfg)
    tag = args.command.replace("-", "_")
    cfg_name = f"config_{tag}.yaml"
    io.atomic_write_text(out / cfg_name, yaml.safe_dump(resolved_raw, sort_keys=False))
    manifest = {"command": args.command, "version": __version__, "preset": args.preset,
                "long_running": args.preset in cfgmod.LONG_RUNNING, "config_file": cfg_name,
                "config": resolved_raw, **extra, "exit_status": status}
    io.write_json(out / f"manifest_{tag}.json", manifest)
    return status


if __name__ == "__main__":
    sys.exit(main())
