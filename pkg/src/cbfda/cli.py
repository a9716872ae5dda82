"""Command-line entry point.

Subcommands: check | simulate-truth | assimilate | ensemble | estimate-c0 | fit.
Every run is driven by one JSON config file (schema documented in README.md);
outputs embed the config echo and a version stamp so a run can be reproduced
bit-exactly from its own artifacts.

Exit codes: 0 success, 1 config error, 2 infeasible thresholds, 3 blow-up.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .dynamics import (
    AssimilationConfig,
    StepperConfig,
    run_trajectory,
    run_truth,
    write_trajectory_csv,
)
from .errors import BlowUpError, CFLViolationError, ConfigurationError, FitError
from .experiment import (
    fit_exponential_rate,
    fit_polynomial_rate,
    run_ensemble,
    write_ensemble_csv,
)
from .fields import Grid, VelocityField, load_field, random_divfree_field, save_field
from .interpolant import InterpolantSpec, estimate_c0
from .noise import NoiseCoefficient, QWienerSpec
from .operators import ModelParams
from .theory import check_config, strongest_guarantee

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_BLOWUP = 3

# seed stream tags for fields built from the master seed
TRUTH_INIT_TAG = 101
DA_INIT_TAG = 202
FORCING_TAG = 303


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}")


def _build_grid(cfg: dict) -> Grid:
    g = cfg.get("grid")
    if not isinstance(g, dict):
        raise ConfigurationError("config.grid: missing section")
    try:
        return Grid(dim=int(g["dim"]), n=int(g["n"]),
                    side_length=float(g.get("side_length", 2.0 * np.pi)),
                    dealias_fraction=float(g.get("dealias_fraction", 2.0 / 3.0)))
    except KeyError as exc:
        raise ConfigurationError(f"config.grid: missing field {exc}")


def _build_field(spec: dict, grid: Grid, master_seed: int, tag: int) -> VelocityField:
    kind = spec.get("kind", "random")
    if kind == "zero":
        return VelocityField.zero(grid)
    if kind == "file":
        return load_field(spec["path"], grid.dealias_fraction)
    if kind == "random":
        seed = spec.get("seed")
        seed = [int(master_seed), tag] if seed is None else int(seed)
        return random_divfree_field(grid, float(spec.get("slope", -4.0)), seed,
                                    rms=float(spec.get("rms", 1.0)))
    raise ConfigurationError(f"field kind must be zero|file|random, got {kind!r}")


def _build_params(cfg: dict, grid: Grid, master_seed: int) -> ModelParams:
    m = cfg.get("model")
    if not isinstance(m, dict):
        raise ConfigurationError("config.model: missing section")
    forcing_spec = m.get("forcing", {"kind": "none"})
    forcing = None
    if forcing_spec.get("kind", "none") != "none":
        forcing = _build_field(forcing_spec, grid, master_seed, FORCING_TAG)
    try:
        return ModelParams(mu=float(m["mu"]), alpha=float(m["alpha"]),
                           beta=float(m["beta"]), varpi=float(m["varpi"]),
                           dim=grid.dim, forcing=forcing)
    except KeyError as exc:
        raise ConfigurationError(f"config.model: missing field {exc}")


def _build_noise(cfg: dict, grid: Grid) -> NoiseCoefficient | None:
    n = cfg.get("noise", {"kind": "off"})
    kind = n.get("kind", "off")
    if kind == "off":
        return None
    spec = QWienerSpec(
        grid=grid,
        n_modes=None if n.get("n_modes") is None else int(n["n_modes"]),
        spectrum_decay=None if n.get("spectrum_decay") is None else float(n["spectrum_decay"]),
        trace_normalization=float(n.get("trace_normalization", 1.0)),
    )
    return NoiseCoefficient(kind=kind, epsilon=float(n.get("epsilon", 0.0)), spec=spec)


def _build_interpolant(cfg: dict) -> InterpolantSpec:
    i = cfg.get("interpolant")
    if not isinstance(i, dict):
        raise ConfigurationError("config.interpolant: missing section")
    c0 = i.get("c0")
    try:
        return InterpolantSpec(kind=i["kind"], theta=float(i["theta"]),
                               c0=None if c0 is None else float(c0))
    except KeyError as exc:
        raise ConfigurationError(f"config.interpolant: missing field {exc}")


def _build_stepper(cfg: dict) -> StepperConfig:
    s = cfg.get("stepper")
    if not isinstance(s, dict):
        raise ConfigurationError("config.stepper: missing section")
    try:
        return StepperConfig(dt=float(s["dt"]), t_end=float(s["t_end"]),
                             record_stride=int(s.get("record_stride", 1)),
                             include_convection=bool(s.get("include_convection", True)))
    except KeyError as exc:
        raise ConfigurationError(f"config.stepper: missing field {exc}")


def _sigma(cfg: dict) -> float:
    a = cfg.get("assimilation")
    if not isinstance(a, dict) or "sigma" not in a:
        raise ConfigurationError("config.assimilation.sigma: missing")
    return float(a["sigma"])


def _echo(cfg: dict) -> dict:
    return {"config_echo": cfg, "version": __version__}


def _header_lines(cfg: dict) -> list:
    return [f"version: {__version__}",
            "config: " + json.dumps(cfg, sort_keys=True)]


def _noise_required(cfg):
    noise = cfg.get("noise", {}).get("kind", "off")
    if noise == "off":
        raise ConfigurationError(
            "config.noise.kind: threshold evaluation needs additive or multiplicative noise")


def _reports_payload(reports):
    strongest = strongest_guarantee(reports)
    return {
        "reports": [r.as_dict() for r in reports],
        "strongest": None if strongest is None else strongest.as_dict(),
    }


def cmd_check(cfg: dict) -> int:
    grid = _build_grid(cfg)
    master_seed = int(cfg.get("master_seed", 0))
    params = _build_params(cfg, grid, master_seed)
    _noise_required(cfg)
    noise = _build_noise(cfg, grid)
    interp = _build_interpolant(cfg)
    if interp.kind == "volume" and interp.c0 is None:
        raise ConfigurationError(
            "config.interpolant.c0: unset for the volume kind; run estimate-c0 first")
    sigma = _sigma(cfg)
    reports = check_config(params, noise, interp, sigma)
    payload = _reports_payload(reports)
    payload.update(_echo(cfg))
    print(json.dumps(payload, indent=2, sort_keys=True))
    satisfied = any(r.sigma_in_window for r in reports)
    return EXIT_OK if satisfied else EXIT_INFEASIBLE


def _prepare_outdir(cfg) -> str:
    out = cfg.get("output_dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate_truth(cfg: dict) -> int:
    grid = _build_grid(cfg)
    master_seed = int(cfg.get("master_seed", 0))
    params = _build_params(cfg, grid, master_seed)
    noise = _build_noise(cfg, grid)
    stepper = _build_stepper(cfg)
    init_spec = cfg.get("init", {}).get("truth", {"kind": "random"})
    init = _build_field(init_spec, grid, master_seed, TRUTH_INIT_TAG)
    out = _prepare_outdir(cfg)
    try:
        traj = run_truth(init, params, noise, stepper, master_seed)
    except (BlowUpError, CFLViolationError) as exc:
        _summary(out, cfg, error=str(exc))
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    write_trajectory_csv(traj, os.path.join(out, "truth.csv"), _header_lines(cfg))
    if cfg.get("save_final_fields"):
        save_field(os.path.join(out, "truth_final.csv"), traj.final.zeta)
    _summary(out, cfg, truth_final_l2sq=float(traj.zeta_l2sq[-1]))
    return EXIT_OK


def _summary(out, cfg, **extra):
    payload = _echo(cfg)
    payload.update(extra)
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
    return payload


def _fit_or_none(times, values, kind="exponential"):
    try:
        fit = (fit_exponential_rate if kind == "exponential" else fit_polynomial_rate)(times, values)
        return {"rate": fit.rate, "intercept": fit.intercept,
                "r_squared": fit.r_squared, "window": list(fit.window),
                "kind": fit.kind, "n_samples": fit.n_samples}
    except FitError as exc:
        return {"error": str(exc)}


def cmd_assimilate(cfg: dict) -> int:
    grid = _build_grid(cfg)
    master_seed = int(cfg.get("master_seed", 0))
    params = _build_params(cfg, grid, master_seed)
    noise = _build_noise(cfg, grid)
    interp = _build_interpolant(cfg)
    stepper = _build_stepper(cfg)
    sigma = _sigma(cfg)
    init = cfg.get("init", {})
    truth0 = _build_field(init.get("truth", {"kind": "random"}), grid, master_seed, TRUTH_INIT_TAG)
    da0 = _build_field(init.get("da", {"kind": "random"}), grid, master_seed, DA_INIT_TAG)
    config = AssimilationConfig(
        sigma=sigma, interpolant=interp, truth_init=truth0, da_init=da0,
        implicit_nudging=bool(cfg.get("assimilation", {}).get("implicit_nudging", False)))
    out = _prepare_outdir(cfg)

    extra = {}
    if sigma == 0:
        extra["guarantee"] = "no guarantee applicable; null control"
    elif noise is not None:
        if interp.kind == "volume" and interp.c0 is None:
            raise ConfigurationError(
                "config.interpolant.c0: unset for the volume kind; run estimate-c0 first")
        reports = check_config(params, noise, interp, sigma)
        extra.update(_reports_payload(reports))

    try:
        traj = run_trajectory(params, noise, config, stepper, master_seed)
    except (BlowUpError, CFLViolationError) as exc:
        last = getattr(exc, "last_good_time", getattr(exc, "t", None))
        _summary(out, cfg, error=str(exc), last_good_time=last)
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    write_trajectory_csv(traj, os.path.join(out, "trajectory.csv"), _header_lines(cfg))
    if cfg.get("save_final_fields"):
        save_field(os.path.join(out, "truth_final.csv"), traj.final.zeta)
        save_field(os.path.join(out, "da_final.csv"), traj.final.z_da)
    extra["fitted_err_decay"] = _fit_or_none(traj.times, traj.err_l2sq)
    _summary(out, cfg, **extra)
    return EXIT_OK


def cmd_ensemble(cfg: dict) -> int:
    grid = _build_grid(cfg)
    master_seed = int(cfg.get("master_seed", 0))
    params = _build_params(cfg, grid, master_seed)
    noise = _build_noise(cfg, grid)
    interp = _build_interpolant(cfg)
    stepper = _build_stepper(cfg)
    sigma = _sigma(cfg)
    n_members = int(cfg.get("ensemble", {}).get("n_members", 0))
    if n_members < 2:
        raise ConfigurationError("config.ensemble.n_members: must be >= 2")
    init = cfg.get("init", {})
    truth0 = _build_field(init.get("truth", {"kind": "random"}), grid, master_seed, TRUTH_INIT_TAG)
    da0 = _build_field(init.get("da", {"kind": "random"}), grid, master_seed, DA_INIT_TAG)
    config = AssimilationConfig(
        sigma=sigma, interpolant=interp, truth_init=truth0, da_init=da0,
        implicit_nudging=bool(cfg.get("assimilation", {}).get("implicit_nudging", False)))
    out = _prepare_outdir(cfg)

    extra = {}
    if sigma == 0:
        extra["guarantee"] = "no guarantee applicable; null control"
    elif noise is not None:
        reports = check_config(params, noise, interp, sigma)
        extra.update(_reports_payload(reports))
    try:
        ens = run_ensemble(params, noise, config, stepper, n_members, master_seed,
                           config_echo=cfg)
    except (BlowUpError, CFLViolationError) as exc:
        _summary(out, cfg, error=str(exc))
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    write_ensemble_csv(ens, os.path.join(out, "ensemble.csv"), _header_lines(cfg))
    extra["n_members_kept"] = ens.n_members
    extra["n_excluded"] = ens.n_excluded
    extra["fitted_err_decay"] = _fit_or_none(ens.times, ens.mean_err_l2sq)
    _summary(out, cfg, **extra)
    return EXIT_OK


def cmd_estimate_c0(cfg: dict) -> int:
    grid = _build_grid(cfg)
    interp = _build_interpolant(cfg)
    est_cfg = cfg.get("c0_estimate", {})
    n_trials = int(est_cfg.get("n_trials", 200))
    slope = float(est_cfg.get("slope", -4.0))
    seed = int(cfg.get("master_seed", 0))
    raw = estimate_c0(interp, n_trials, seed, grid=grid, slope=slope)
    payload = {"kind": interp.kind, "theta": interp.theta,
               "raw_max_ratio": raw, "stored_c0": interp.c0,
               "n_trials": n_trials, "seed": seed}
    payload.update(_echo(cfg))
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def _read_csv(path):
    rows = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise ConfigurationError(f"no data rows in {path}")
    data = np.asarray(rows)
    return {name: data[:, i] for i, name in enumerate(header)}


def cmd_fit(args) -> int:
    table = _read_csv(args.csv)
    if "t" not in table or args.column not in table:
        raise ConfigurationError(
            f"csv must contain 't' and {args.column!r}; found {sorted(table)}")
    window = None if args.window is None else tuple(args.window)
    fitter = fit_exponential_rate if args.kind == "exponential" else fit_polynomial_rate
    try:
        fit = fitter(table["t"], table[args.column], window=window)
    except FitError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps({"rate": fit.rate, "intercept": fit.intercept,
                      "r_squared": fit.r_squared, "window": list(fit.window),
                      "kind": fit.kind, "n_samples": fit.n_samples,
                      "version": __version__}, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbfda",
                                     description="nudging-based data assimilation harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("check", "simulate-truth", "assimilate", "ensemble", "estimate-c0"):
        p = sub.add_parser(name)
        p.add_argument("config", help="path to the JSON run config")
    pf = sub.add_parser("fit")
    pf.add_argument("csv", help="trajectory or ensemble CSV")
    pf.add_argument("--column", default="err_l2sq")
    pf.add_argument("--kind", choices=("exponential", "polynomial"), default="exponential")
    pf.add_argument("--window", nargs=2, type=float, default=None, metavar=("T0", "T1"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args)
        cfg = _load_config(args.config)
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "simulate-truth":
            return cmd_simulate_truth(cfg)
        if args.command == "assimilate":
            return cmd_assimilate(cfg)
        if args.command == "ensemble":
            return cmd_ensemble(cfg)
        if args.command == "estimate-c0":
            return cmd_estimate_c0(cfg)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
