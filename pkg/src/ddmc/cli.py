"""Command-line front end: config in, CSV artifacts plus a run manifest out.

Exit codes: 0 success, 2 config parse error, 3 model validation error,
4 runtime error, 5 singular-sigma failure of the closed rate method.  Every
error path prints ``error-code: <name>`` as its final stderr line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import io as dio
from .config import load_experiment_config, load_model_config
from .errors import ConfigError, DdmcError, ModelValidationError, SigmaSingularError
from .experiments import (
    clt_check,
    lln_check,
    martingale_mean_check,
    mdp_estimate,
    tilt_from_profile,
)
from .fluid import solve_fluid, solve_lyapunov, uniform_grid
from .model import validate_model
from .ratefn import CandidatePath, rate_closed_form, rate_degenerate, variational_sup
from .simulate import gillespie, random_time_change

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4
EXIT_SIGMA_SINGULAR = 5

log = logging.getLogger("ddmc")


def _emit_error(message: str, code: str):
    print(f"ddmc: {message}", file=sys.stderr)
    print(f"error-code: {code}", file=sys.stderr, flush=True)


class _Run:
    """Collects output files and writes the manifest atomically last."""

    def __init__(self, args, config_text: str):
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.args = args
        self.config_text = config_text
        self.outputs: list[str] = []
        self.t_start = time.monotonic()

    def write_csv(self, name: str, writer_fn, *wargs):
        target = self.out_dir / name
        with open(target, "w", newline="") as fp:
            writer_fn(*wargs, fp)
        self.outputs.append(name)
        log.info("wrote %s", target)

    def finish(self, command: str) -> int:
        manifest = {
            "command": command,
            "argv": [str(a) for a in sys.argv[1:]],
            "config": self.config_text,
            "seed": getattr(self.args, "seed", None),
            "threads": getattr(self.args, "threads", None),
            "version": __version__,
            "timestamp_utc": datetime.now(timezone.utc).isoformat(),
            "duration_s": round(time.monotonic() - self.t_start, 6),
            "outputs": self.outputs,
        }
        tmp = self.out_dir / "manifest.json.tmp"
        with open(tmp, "w") as fp:
            json.dump(manifest, fp, indent=2, sort_keys=True)
            fp.write("\n")
        os.replace(tmp, self.out_dir / "manifest.json")
        return EXIT_OK


def _read_config_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")


def cmd_simulate(args) -> int:
    config_text = _read_config_text(args.model)
    spec = load_model_config(args.model)
    model = validate_model(spec, seed=args.seed)
    run = _Run(args, config_text)
    sampler = gillespie if args.sampler == "gillespie" else random_time_change
    path = sampler(model, args.n, args.t0, args.seed, rate_cap=args.rate_cap)
    run.write_csv("trajectory.csv", dio.write_trajectory_csv, path)
    return run.finish("simulate")


def cmd_fluid(args) -> int:
    config_text = _read_config_text(args.model)
    spec = load_model_config(args.model)
    model = validate_model(spec, seed=args.seed)
    run = _Run(args, config_text)
    fluid = solve_lyapunov(solve_fluid(model, args.t0, args.h))
    run.write_csv("fluid.csv", dio.write_fluid_csv, fluid)
    return run.finish("fluid")


def cmd_rate(args) -> int:
    config_text = _read_config_text(args.model)
    spec = load_model_config(args.model)
    model = validate_model(spec, seed=args.seed)
    t, f = dio.read_path_csv(args.path)
    fluid = solve_fluid(model, args.t0, args.h)
    if abs(t[0]) > 1e-9 or t[-1] < args.t0 - 1e-9:
        raise ConfigError(f"path file must cover [0, {args.t0}]", field="path-csv")
    if f.shape[1] != model.dimension:
        raise ConfigError(
            f"path has {f.shape[1]} coordinates, model has {model.dimension}",
            field="path-csv",
        )
    run = _Run(args, config_text)
    fg = np.stack([np.interp(fluid.grid, t, f[:, k]) for k in range(f.shape[1])], axis=1)
    if np.max(np.abs(fg[0])) < 1e-9:
        fg[0] = 0.0
    try:
        cpath = CandidatePath(fluid.grid, fg)
    except ValueError as exc:
        raise ConfigError(str(exc), field="path-csv")
    if args.method == "closed":
        try:
            report = rate_closed_form(fluid, cpath)
        except SigmaSingularError as exc:
            _emit_error(f"{exc} (rerun with --method degenerate)",
                        SigmaSingularError.code)
            return EXIT_SIGMA_SINGULAR
    elif args.method == "degenerate":
        report = rate_degenerate(fluid, cpath)
    else:
        report = variational_sup(fluid, cpath, basis_size=args.basis_size, seed=args.seed)
    run.write_csv("rate_report.csv", dio.write_rate_csv, report)
    if report.psi is not None:
        run.write_csv("rate_psi.csv", dio.write_psi_csv, fluid.grid, report.psi)
    return run.finish("rate")


def _experiment_records(kind, cfg):
    name = cfg.model.name
    if kind == "lln":
        res = lln_check(cfg)
        recs = [
            ("lln", name, r.n, float(r.n**cfg.alpha), cfg.alpha, f"eps={r.epsilon:g}",
             r.frequency, float("nan"), float(cfg.reps), float("nan"), float("nan"))
            for r in res.rows
        ]
        recs.append(("lln", name, 0, float("nan"), cfg.alpha, "slope",
                     res.slope, float("nan"), float("nan"), float("nan"), res.slope_pvalue))
        return recs
    if kind == "clt":
        rows = clt_check(cfg)
        return [
            ("clt", name, r.n, float(r.n**cfg.alpha), cfg.alpha,
             f"coordinate={r.coordinate};ks={r.ks_stat:.8g};var_ratio={r.sample_var / r.predicted_var:.8g}",
             r.p_value, float("nan"), float(cfg.reps), r.predicted_var, float("nan"))
            for r in rows
        ]
    if kind == "martingale":
        model = validate_model(cfg.model, seed=cfg.seed)
        grid = uniform_grid(cfg.t0, cfg.h)
        g = tilt_from_profile(grid, model.dimension, cfg.tilt_profile, cfg.tilt_amplitude)
        recs = []
        for n in cfg.n_list:
            mean, se = martingale_mean_check(
                model, n, g, cfg.alpha, cfg.reps, cfg.seed, threads=cfg.threads
            )
            recs.append(("martingale", name, n, float(n**cfg.alpha), cfg.alpha,
                         f"profile={cfg.tilt_profile};amplitude={cfg.tilt_amplitude:g}",
                         mean, se, float(cfg.reps), 1.0, float("nan")))
        return recs
    rows = mdp_estimate(cfg)
    ev = cfg.event
    param = f"{ev.kind}[{ev.coordinate}]>={ev.level:g}"
    return [
        ("mdp", name, r.n, r.a_n, cfg.alpha, f"{param};estimator={r.estimator}",
         r.p_hat, r.stderr, r.ess, r.reference_rate, r.minus_log_scaled)
        for r in rows
    ]


def cmd_experiment(args) -> int:
    config_text = _read_config_text(args.config)
    kind, cfg = load_experiment_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.h is not None:
        overrides["h"] = args.h
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    args.seed = cfg.seed
    args.threads = cfg.threads
    run = _Run(args, config_text)
    recs = _experiment_records(kind, cfg)
    run.write_csv("experiment.csv", dio.write_estimates_csv, recs)
    return run.finish("experiment")


def cmd_validate(args) -> int:
    _read_config_text(args.model)
    spec = load_model_config(args.model)
    model = validate_model(spec, samples=args.samples, seed=args.seed)
    print(f"OK: {spec.name} d={spec.dimension} jumps={len(spec.jumps)} "
          f"K1={model.lipschitz.k1:.6g}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, seed_default=0, threads_default=None):
    p.add_argument("--seed", type=int, default=seed_default, help="RNG seed")
    p.add_argument("--threads", type=int,
                   default=os.cpu_count() or 1 if threads_default is None else threads_default,
                   help="worker threads (default: available parallelism)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--h", type=float, default=1e-3, help="grid step (default 1e-3)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddmc",
        description="Simulate density-dependent Markov chains and analyze their "
                    "fluctuation costs and rare events.",
    )
    parser.add_argument("--version", action="version", version=f"ddmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample one trajectory")
    _add_common(p)
    p.add_argument("--model", required=True, help="model config TOML")
    p.add_argument("--n", type=int, required=True, help="population scale")
    p.add_argument("--t0", type=float, default=1.0, help="time horizon")
    p.add_argument("--sampler", choices=("gillespie", "time-change"), default="gillespie")
    p.add_argument("--rate-cap", type=float, default=1e12)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fluid", help="solve the fluid and covariance flows")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--t0", type=float, default=1.0)
    p.set_defaults(handler=cmd_fluid)

    p = sub.add_parser("rate", help="evaluate the path cost functional")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--path", required=True, help="candidate path CSV (t, f_1..f_d)")
    p.add_argument("--method", choices=("closed", "degenerate", "variational"),
                   default="closed")
    p.add_argument("--t0", type=float, default=1.0)
    p.add_argument("--basis-size", type=int, default=32)
    p.set_defaults(handler=cmd_rate)

    p = sub.add_parser("experiment", help="run a statistical experiment")
    p.add_argument("--config", required=True, help="experiment config TOML")
    p.add_argument("--reps", type=int, default=None)
    # None means: defer to the values in the experiment config file
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--h", type=float, default=None)
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("validate", help="check a model config")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, default=256)
    p.set_defaults(handler=cmd_validate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DDMC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        _emit_error(str(exc), ConfigError.code)
        return EXIT_CONFIG
    except ModelValidationError as exc:
        for issue in exc.issues:
            print(f"ddmc: invalid model: {issue}", file=sys.stderr)
        _emit_error(f"{len(exc.issues)} validation issue(s)", ModelValidationError.code)
        return EXIT_VALIDATION
    except DdmcError as exc:
        _emit_error(str(exc), exc.code)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - defensive
        _emit_error(f"unexpected failure: {exc}", "internal")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
