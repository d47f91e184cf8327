"""``aud`` command line: configuration parsing, sweep dispatch and CSV output.

Configuration files are INI-style with three optional sections::

    [scenario]
    n_users = 24
    theta_min = -3/7 pi
    snr_db = 0
    mu = inf

    [admm]
    beta = 1e-5
    baseline_threshold = calibrate

    [sweep]
    grid = -10, -5, 0, 5
    trials = 1000
    seed = 1710

Unset keys fall back to the base parameters. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

from .experiments import (
    BASELINE_THRESHOLD,
    DEFAULT_SEED,
    METHODS,
    ExperimentPlan,
    Scenario,
    SweepResult,
    calibrate_threshold,
    run_sweep,
)
from .solver_core import AdmmConfig

log = logging.getLogger("aud")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CALIBRATE = "calibrate"

CSV_COLUMNS = ("experiment", "sweep_param", "sweep_value", "method", "one_minus_A", "tpr", "tnr",
               "trials", "failed_trials", "std_err", "wall_ms_per_trial", "master_seed")

# experiment name -> (sweep variable, default grid)
EXPERIMENTS = {
    "snr": ("snr_db", (-10.0, -5.0, 0.0, 5.0)),
    "mu": ("mu", (0.5, 1.0, 2.0, 4.0, 8.0, math.inf)),
    "sigma": ("sigma", tuple(float(s) for s in range(11))),
    "pilot_length": ("T", (2, 4, 6, 8, 10, 12)),
    "num_users": ("N", (12, 16, 20, 24, 28, 32)),
    "num_active": ("K", (2, 4, 6, 8, 10, 12, 14)),
    "single": ("snr_db", None),
}

# config key -> (Scenario attribute, kind)
SCENARIO_KEYS = {
    "n_users": ("n_users", "int"),
    "n_active": ("n_active", "int"),
    "n_antennas": ("n_antennas", "int"),
    "carrier_frequency_hz": ("carrier_frequency", "float"),
    "pilot_length": ("pilot_length", "int"),
    "r_min": ("r_min", "float"),
    "r_max": ("r_max", "float"),
    "theta_min": ("theta_min", "angle"),
    "theta_max": ("theta_max", "angle"),
    "snr_db": ("snr_db", "float"),
    "mu": ("rician_mu", "float"),
    "sigma": ("location_error_std", "float"),
    "fixed_k": ("fixed_k", "bool"),
    "orthonormal_pilots": ("orthonormal_pilots", "bool"),
}
SOLVER_KEYS = {
    "beta": "float",
    "rho": "float",
    "eps0": "float",
    "outer_iterations": "int",
    "inner_iterations": "int",
}
SWEEP_KEYS = {"grid", "trials", "seed", "methods", "calibration_trials"}


class ConfigError(ValueError):
    pass


def parse_angle(text: str) -> float:
    """Parse ``"-3/7 pi"``-style rational multiples of pi, or plain radians."""
    s = text.strip().replace("−", "-").replace("*", " ")
    if s.endswith("pi"):
        coef = s[:-2].strip()
        if coef in ("", "+", "-"):
            coef += "1"
        try:
            return float(Fraction(coef.replace(" ", ""))) * math.pi
        except ValueError:
            raise ConfigError(f"cannot parse angle {text!r}") from None
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"cannot parse angle {text!r}") from None


def format_angle(theta: float) -> str:
    frac = Fraction(theta / math.pi).limit_denominator(1000)
    if float(frac) * math.pi == theta:
        return f"{frac} pi"
    return repr(theta)


def _parse_value(kind: str, text: str, key: str):
    text = text.strip()
    try:
        if kind == "int":
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "float":
            return float(text)
        if kind == "angle":
            return parse_angle(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    raise AssertionError(kind)


def _format_float(v: float) -> str:
    return "inf" if v == math.inf else repr(float(v))


@dataclass
class RunSettings:
    """Everything a configuration file can set."""

    scenario: Scenario = field(default_factory=Scenario)
    configs: Dict[str, AdmmConfig] = field(
        default_factory=lambda: {"admm_li": AdmmConfig(),
                                 "baseline": AdmmConfig(activity_threshold=BASELINE_THRESHOLD)})
    calibrated: Tuple[str, ...] = ("baseline",)
    calibration_trials: int = 1000
    grid: Optional[Tuple[float, ...]] = None
    trials: int = 1000
    seed: int = DEFAULT_SEED
    methods: Tuple[str, ...] = METHODS
    explicit_scenario_keys: frozenset = frozenset()


def parse_config_text(text: str) -> RunSettings:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown_sections = set(cp.sections()) - {"scenario", "admm", "sweep"}
    if unknown_sections:
        raise ConfigError(f"unknown section(s): {sorted(unknown_sections)}")
    settings = RunSettings()

    scen = {}
    if cp.has_section("scenario"):
        for key, raw in cp.items("scenario"):
            if key not in SCENARIO_KEYS:
                raise ConfigError(f"[scenario] unknown key {key!r}")
            attr, kind = SCENARIO_KEYS[key]
            scen[attr] = _parse_value(kind, raw, key)
    try:
        settings.scenario = Scenario(**scen).validate()
    except ValueError as exc:
        raise ConfigError(f"[scenario] {exc}") from None
    settings.explicit_scenario_keys = frozenset(scen)

    shared, per_method = {}, {m: {} for m in METHODS}
    thresholds = {}
    if cp.has_section("admm"):
        for key, raw in cp.items("admm"):
            if key in SOLVER_KEYS:
                shared[key] = _parse_value(SOLVER_KEYS[key], raw, key)
                continue
            method, _, sub = next(((m, "_", key[len(m) + 1:]) for m in METHODS
                                   if key.startswith(m + "_")), (None, "", ""))
            if method is None:
                raise ConfigError(f"[admm] unknown key {key!r}")
            if sub == "threshold":
                if raw.strip().lower() == CALIBRATE:
                    thresholds[method] = CALIBRATE
                else:
                    thresholds[method] = _parse_value("float", raw, key)
            elif sub in SOLVER_KEYS:
                per_method[method][sub] = _parse_value(SOLVER_KEYS[sub], raw, key)
            else:
                raise ConfigError(f"[admm] unknown key {key!r}")

    calibrated = list(settings.calibrated)
    for method in METHODS:
        values = {**shared, **per_method[method]}
        t = thresholds.get(method)
        if t == CALIBRATE:
            if method not in calibrated:
                calibrated.append(method)
        elif t is not None:
            values["activity_threshold"] = t
            if method in calibrated:
                calibrated.remove(method)
        try:
            settings.configs[method] = dataclasses.replace(settings.configs[method], **values)
        except ValueError as exc:
            raise ConfigError(f"[admm] {method}: {exc}") from None
    settings.calibrated = tuple(m for m in METHODS if m in calibrated)

    if cp.has_section("sweep"):
        for key, raw in cp.items("sweep"):
            if key not in SWEEP_KEYS:
                raise ConfigError(f"[sweep] unknown key {key!r}")
            if key == "grid":
                parts = [p for p in raw.replace(",", " ").split() if p]
                if not parts:
                    raise ConfigError("[sweep] grid is empty")
                settings.grid = tuple(_parse_value("float", p, "grid") for p in parts)
            elif key == "methods":
                settings.methods = _parse_methods(raw)
            elif key == "trials":
                settings.trials = _parse_value("int", raw, key)
            elif key == "seed":
                settings.seed = _parse_value("int", raw, key)
            elif key == "calibration_trials":
                settings.calibration_trials = _parse_value("int", raw, key)
    if settings.trials < 1:
        raise ConfigError(f"[sweep] trials must be >= 1, got {settings.trials}")
    if settings.calibration_trials < 1:
        raise ConfigError(f"[sweep] calibration_trials must be >= 1, got {settings.calibration_trials}")
    return settings


def parse_config(path) -> RunSettings:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def _parse_methods(raw: str) -> Tuple[str, ...]:
    methods = tuple(m.strip() for m in raw.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; expected a subset of {METHODS}")
    return methods


def format_config(settings: RunSettings) -> str:
    """Effective configuration as config-file text (parses back to ``settings``)."""
    s = settings.scenario
    lines = ["[scenario]"]
    for key, (attr, kind) in SCENARIO_KEYS.items():
        v = getattr(s, attr)
        if kind == "angle":
            text = format_angle(v)
        elif kind == "float":
            text = _format_float(v)
        elif kind == "bool":
            text = "true" if v else "false"
        else:
            text = str(v)
        lines.append(f"{key} = {text}")
    lines += ["", "[admm]"]
    for method in METHODS:
        cfg = settings.configs[method]
        for key, kind in SOLVER_KEYS.items():
            v = getattr(cfg, key)
            lines.append(f"{method}_{key} = {v if kind == 'int' else _format_float(v)}")
        thr = CALIBRATE if method in settings.calibrated else _format_float(cfg.activity_threshold)
        lines.append(f"{method}_threshold = {thr}")
    lines += ["", "[sweep]"]
    if settings.grid is not None:
        lines.append("grid = " + ", ".join(_format_float(g) for g in settings.grid))
    lines.append(f"trials = {settings.trials}")
    lines.append(f"seed = {settings.seed}")
    lines.append("methods = " + ", ".join(settings.methods))
    lines.append(f"calibration_trials = {settings.calibration_trials}")
    return "\n".join(lines) + "\n"


def build_plan(settings: RunSettings, experiment: str) -> ExperimentPlan:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {sorted(EXPERIMENTS)}")
    param, default_grid = EXPERIMENTS[experiment]
    scenario = settings.scenario
    if experiment == "num_active" and "fixed_k" not in settings.explicit_scenario_keys:
        scenario = dataclasses.replace(scenario, fixed_k=True)
    if experiment == "single":
        grid = (scenario.snr_db,)
    else:
        grid = settings.grid if settings.grid is not None else default_grid
    plan = ExperimentPlan(
        scenario=scenario,
        sweep_param=param,
        grid=tuple(grid),
        methods=tuple(settings.methods),
        trials=settings.trials,
        master_seed=settings.seed,
        configs=dict(settings.configs),
        calibrated=tuple(settings.calibrated),
        calibration_trials=settings.calibration_trials,
        name=experiment,
    )
    try:
        return plan.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def emit_csv(result: SweepResult, path) -> Path:
    """One row per (grid value, method), columns in ``CSV_COLUMNS`` order."""
    path = Path(path)
    plan = result.plan
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for p in result.points:
                w.writerow([plan.name, plan.sweep_param, _format_float(p.sweep_value), p.method,
                            repr(p.one_minus_a), repr(p.tpr), repr(p.tnr), p.trials,
                            p.failed_trials, repr(p.std_err), repr(p.wall_ms_per_trial),
                            plan.master_seed])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_plot_data(csv_path, out_dir) -> list:
    """Split a results CSV into gnuplot two-column files ``<experiment>_<method>.dat``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = {}
    with open(csv_path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["experiment"], row["method"])
            series.setdefault(key, []).append((row["sweep_param"], row["sweep_value"],
                                               row["one_minus_A"]))
    written = []
    for (experiment, method), rows in series.items():
        path = out_dir / f"{experiment}_{method}.dat"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# {rows[0][0]} one_minus_A\n")
            for _, x, y in rows:
                fh.write(f"{x} {y}\n")
        written.append(path)
    return written


def _apply_overrides(settings: RunSettings, args) -> RunSettings:
    if getattr(args, "seed", None) is not None:
        settings.seed = args.seed
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise ConfigError(f"--trials must be >= 1, got {args.trials}")
        settings.trials = args.trials
    if getattr(args, "methods", None):
        settings.methods = _parse_methods(args.methods)
    for item in getattr(args, "threshold", None) or ():
        method, sep, value = item.partition("=")
        if not sep or method not in METHODS:
            raise ConfigError(f"--threshold expects METHOD=VALUE with METHOD in {METHODS}, got {item!r}")
        calibrated = [m for m in settings.calibrated if m != method]
        if value.strip().lower() == CALIBRATE:
            calibrated.append(method)
        else:
            try:
                settings.configs[method] = dataclasses.replace(
                    settings.configs[method],
                    activity_threshold=_parse_value("float", value, "--threshold"))
            except ValueError as exc:
                raise ConfigError(f"--threshold {method}: {exc}") from None
        settings.calibrated = tuple(m for m in METHODS if m in calibrated)
    return settings


def _load(args) -> RunSettings:
    return parse_config(args.config) if args.config else RunSettings()


def cmd_run(args) -> int:
    settings = _apply_overrides(_load(args), args)
    plan = build_plan(settings, args.experiment)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.experiment}_config.ini").write_text(format_config(settings), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from None
    result = run_sweep(plan, threads=args.threads, progress=lambda msg: print(msg, flush=True))
    path = emit_csv(result, out / f"{args.experiment}.csv")
    if result.failures:
        with open(out / f"{args.experiment}_failures.csv", "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("sweep_value", "trial_index", "trial_seed", "method", "message"))
            for f in result.failures:
                w.writerow((f.sweep_value, f.trial_index, f.trial_seed, f.method, f.message))
        print(f"{len(result.failures)} failed trial(s) excluded", file=sys.stderr)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    settings = _load(args)
    for name in EXPERIMENTS:
        build_plan(settings, name)
    sys.stdout.write(format_config(settings))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    settings = _apply_overrides(_load(args), args)
    cfg = settings.configs[args.method]
    res = calibrate_threshold(settings.scenario, args.method, cfg,
                              args.trials or settings.calibration_trials, settings.seed,
                              threads=args.threads)
    print(f"method = {args.method}")
    print(f"threshold = {res.threshold!r}")
    print(f"one_minus_A = {res.one_minus_a!r}")
    return EXIT_OK


def cmd_plot_data(args) -> int:
    for p in emit_plot_data(args.csv, args.out):
        print(p)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aud", description="Near-field active user detection experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a parameter sweep and write CSV")
    run.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    run.add_argument("--config")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--methods", help="comma separated subset of " + ",".join(METHODS))
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--threshold", action="append", metavar="METHOD=VALUE",
                     help="fixed threshold or 'calibrate'; repeatable")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config file and print the effective settings")
    val.add_argument("--config")
    val.set_defaults(func=cmd_validate)

    cal = sub.add_parser("calibrate-threshold", help="tune a detector threshold on held-out trials")
    cal.add_argument("--config")
    cal.add_argument("--method", default="baseline", choices=METHODS)
    cal.add_argument("--trials", type=int)
    cal.add_argument("--seed", type=int)
    cal.add_argument("--threads", type=int, default=1)
    cal.set_defaults(func=cmd_calibrate)

    plot = sub.add_parser("plot-data", help="split a results CSV into gnuplot .dat files")
    plot.add_argument("--csv", required=True)
    plot.add_argument("--out", required=True)
    plot.set_defaults(func=cmd_plot_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
