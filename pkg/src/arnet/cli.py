"""Command-line interface: ``arnet {simulate,fit,diagnose,compare,forecast}``.

Configs are JSON documents validated against the schemas below before any
work starts; unknown keys are rejected.  Command-line flags override the
matching config keys.  Outputs are deterministic for a fixed config and
seed; the only varying field is the top-level ``timestamp``.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 optimizer failure on
every start.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import textwrap
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from .core import KERNEL_IDS, ParameterSet, SeriesFormatError, load_series, normalize_kernel_id, save_series
from .estimate import (DEFAULT_INIT_GRID, DEFAULT_TAU_GRID, DEFAULT_TAU_GRID_LOCAL, METHODS, EstimationConfig,
                       EstimationError, _jsonable, fit, fit_all_starts, replicate, summarize_replications)

__all__ = ["main", "build_parser", "SIM_SCHEMA", "FIT_SCHEMA", "COMPARE_SCHEMA", "ConfigError"]

log = logging.getLogger("arnet")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_OPTIMIZER = 0, 2, 3, 4
SERIES_FORMATS = ("matrix-text", "edge-csv")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


def _num(desc):
    return {"type": "number", "description": desc}


def _int(desc, minimum=None):
    d = {"type": "integer", "description": desc}
    if minimum is not None:
        d["minimum"] = minimum
    return d


def _vec(desc):
    return {"description": desc,
            "oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "items": {"type": "number", "minimum": 0}}]}


_MODEL = {"type": "string", "enum": list(KERNEL_IDS), "description": "kernel id: " + ", ".join(KERNEL_IDS)}

_SIM_PROPS = {
    "model": _MODEL,
    "p": _int("number of nodes", 2),
    "n": _int("number of retained snapshots", 1),
    "burn_in": _int("snapshots simulated and discarded before the retained ones (default 200)", 0),
    "seed": _int("random seed (default 0)", 0),
    "init": {"type": "string", "enum": ["empty", "erdos-renyi"],
             "description": "initial lag snapshots: empty or erdos-renyi (default erdos-renyi)"},
    "rho": {"type": "number", "minimum": 0, "maximum": 1, "description": "erdos-renyi edge density (default 0.1)"},
    "globals": {"type": "object", "additionalProperties": {"type": "number"},
                "description": "global parameters by name, e.g. {\"a\": 10, \"b\": 10}"},
    "xi": _vec("formation node factors: one value for every node or a list of p values"),
    "eta": _vec("dissolution node factors: one value for every node or a list of p values"),
    "alpha": _vec("formation probabilities (global_ar: scalar; edgewise_ar: scalar or one per pair)"),
    "beta": _vec("dissolution probabilities (global_ar: scalar; edgewise_ar: scalar or one per pair)"),
    "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5,
            "description": "probability clipping constant (default 1e-6)"},
    "format": {"type": "string", "enum": list(SERIES_FORMATS), "description": "output series format"},
}

SIM_SCHEMA = {
    "type": "object",
    "properties": _SIM_PROPS,
    "required": ["model", "p", "n"],
    "additionalProperties": False,
}

_EST_PROPS = {
    "init_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1,
                  "description": f"common starting values for the local parameters (default {list(DEFAULT_INIT_GRID)})"},
    "r_tilde_local": _num("search radius of the first projected-score stage for local parameters (default 0.2)"),
    "r_check_local": _num("search radius of the second stage for local parameters (default 0.05)"),
    "r_tilde_global": _num("search radius of the first stage for global parameters (default 10)"),
    "r_check_global": _num("search radius of the second stage for global parameters (default 2)"),
    "tau_grid": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1,
                 "description": f"LP slack multipliers for global parameters (default {list(DEFAULT_TAU_GRID)})"},
    "tau_grid_local": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0},
                       "description": "LP slack multipliers for local parameters; null reuses tau_grid "
                                      f"(default {list(DEFAULT_TAU_GRID_LOCAL)})"},
    "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
              "description": "confidence level of the intervals (default 0.95)"},
    "method": {"type": "string", "enum": list(METHODS), "description": "pipeline: " + ", ".join(METHODS)},
    "imom_tol": _num("moment-iteration convergence tolerance (default 1e-6)"),
    "imom_max_iter": _int("moment-iteration cap (default 100)", 1),
    "imom_safeguard": {"type": "boolean",
                       "description": "stop the moment iteration when the likelihood decreases (default true)"},
    "polish_sweeps": _int("coordinate-ascent sweeps applied to the pilot (default 10)", 0),
    "polish_tol": _num("relative likelihood gain below which polishing stops (default 1e-6)"),
    "global_start": _num("starting value of every global parameter (default 1)"),
    "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5,
            "description": "probability clipping constant (default 1e-6)"},
    "threads": {"type": ["integer", "null"], "minimum": 1,
                "description": "worker count; ARNET_THREADS overrides (default: machine parallelism)"},
}

FIT_SCHEMA = {
    "type": "object",
    "properties": {
        "model": _MODEL,
        "data": {"type": "string", "description": "path of the series to fit"},
        "seed": _int("seed base of the replication driver", 0),
        "replications": _int("number of simulated replications (requires simulation)", 1),
        "all_starts": {"type": "boolean", "description": "report every start of init_grid instead of the best"},
        "simulation": {**SIM_SCHEMA, "description": "simulation config (same keys as simulate) for replications"},
        **_EST_PROPS,
    },
    "additionalProperties": False,
}

COMPARE_SCHEMA = {
    "type": "object",
    "properties": {
        "data": {"type": "string", "description": "path of the series"},
        "model": {"type": "string", "description": "model to forecast with (forecast only; one of models)"},
        "models": {"type": "array", "items": {"type": "string"}, "minItems": 1,
                   "description": "models to compare (default: all five)"},
        "split": _int("last training snapshot (1-based); default n - max(steps)", 2),
        "steps": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1,
                  "description": "forecast horizons (default [1])"},
        "mc_paths": _int("simulated paths for dependent-edge forecasts (default 200)", 1),
        "seed": _int("seed of the forecast simulations (default 0)", 0),
    },
    "additionalProperties": False,
}


def _validate(doc, schema, label: str) -> dict:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<top level>"
        raise ConfigError(f"{label}: field '{where}': {err.message}")
    return doc


def _load_config(path, schema, label: str) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label}: not valid JSON ({exc})") from exc
    return _validate(doc, schema, label)


def _schema_help(schema: dict, indent: str = "  ") -> str:
    lines = []
    for key, spec in schema["properties"].items():
        desc = spec.get("description", "")
        body = textwrap.fill(desc, width=76, initial_indent="", subsequent_indent=indent + " " * 18)
        lines.append(f"{indent}{key:<16}  {body}")
        if key == "simulation":
            lines.append(f"{indent}  (keys as listed for 'arnet simulate')")
    return "\n".join(lines)


def _write_json(path, obj) -> None:
    doc = {"timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"), **obj}
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n")


def _report_dict(rep, timings: bool) -> dict:
    d = rep.to_dict()
    if not timings:
        d.pop("timings", None)
    return d


# ---------------------------------------------------------------- simulate

def _theta_from_config(cfg: dict) -> ParameterSet:
    try:
        kid = normalize_kernel_id(cfg["model"])
        return ParameterSet.from_blocks(kid, cfg["p"], cfg.get("globals"), xi=cfg.get("xi"), eta=cfg.get("eta"),
                                        alpha=cfg.get("alpha"), beta=cfg.get("beta"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"simulation parameters: {exc}") from exc


def _sim_kwargs(cfg: dict) -> dict:
    kw = {"burn_in": cfg.get("burn_in", 200), "eps": cfg.get("eps", 1e-6)}
    kind = cfg.get("init", "erdos-renyi")
    kw["init"] = "empty" if kind == "empty" else ("erdos-renyi", cfg.get("rho", 0.1))
    return kw


def cmd_simulate(args) -> int:
    from .simulate import SimConfig, diagnostics, simulate

    cfg = _load_config(args.config, SIM_SCHEMA, "simulation config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    theta = _theta_from_config(cfg)
    try:
        sim = SimConfig(theta, n=cfg["n"], seed=cfg.get("seed", 0), **_sim_kwargs(cfg))
    except ValueError as exc:
        raise ConfigError(f"simulation config: {exc}") from exc
    series = simulate(sim)
    save_series(series, args.out, format=args.format or cfg.get("format", "matrix-text"))
    if args.diagnostics_dir and series.n >= 2:
        diagnostics(series).write_csv(args.diagnostics_dir)
    return EXIT_OK


# ---------------------------------------------------------------- fit

def _estimation_config(cfg: dict, args) -> EstimationConfig:
    est = {k: v for k, v in cfg.items() if k in _EST_PROPS}
    if args.method:
        est["method"] = args.method
    if args.threads:
        est["threads"] = args.threads
    try:
        return EstimationConfig.from_dict(est)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"estimation config: {exc}") from exc


def cmd_fit(args) -> int:
    cfg = _load_config(args.config, FIT_SCHEMA, "estimation config")
    if args.model:
        cfg["model"] = args.model
    if args.data:
        cfg["data"] = args.data
    if args.replications:
        cfg["replications"] = args.replications
    if args.seed_base is not None:
        cfg["seed"] = args.seed_base
    if args.all_starts:
        cfg["all_starts"] = True
    _validate(cfg, FIT_SCHEMA, "estimation config")
    est = _estimation_config(cfg, args)

    if cfg.get("replications"):
        return _fit_replications(cfg, est, args)
    if "model" not in cfg or "data" not in cfg:
        raise ConfigError("estimation config: field 'model' and field 'data' are required (or --model/--data)")
    series = load_series(cfg["data"])
    if cfg.get("all_starts"):
        reports = fit_all_starts(cfg["model"], series, est)
        if not any(r is not None for r in reports):
            raise EstimationError("every start failed")
        body = {"config": est.to_dict(),
                "reports": [None if r is None else _report_dict(r, args.timings) for r in reports]}
    else:
        rep = fit(cfg["model"], series, est)
        body = {"config": est.to_dict(), **_report_dict(rep, args.timings)}
    _write_json(args.out, body)
    return EXIT_OK


def _fit_replications(cfg: dict, est: EstimationConfig, args) -> int:
    sim = cfg.get("simulation")
    if sim is None:
        raise ConfigError("estimation config: field 'simulation' is required for replications")
    truth = _theta_from_config(sim)
    if "model" in cfg and normalize_kernel_id(cfg["model"]) != truth.kernel_id:
        raise ConfigError("estimation config: field 'model' disagrees with simulation.model")
    out_dir = Path(args.out_dir or Path(args.out).with_suffix(""))
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_base = cfg.get("seed", 0)
    all_starts = cfg.get("all_starts", True)
    results = replicate(truth, sim["n"], est, cfg["replications"], seed_base, all_starts=all_starts,
                        threads=est.threads, **_sim_kwargs(sim))
    for r, reps in enumerate(results):
        body = {"replication": r, "seed": seed_base + r,
                "reports": [None if x is None else _report_dict(x, args.timings) for x in reps]}
        _write_json(out_dir / f"replication_{r:03d}.json", body)
    summary = summarize_replications(results, truth)
    _write_json(args.out, {"config": est.to_dict(), "simulation": sim, "seed_base": seed_base, **summary})
    if summary["failed"] == len(results):
        raise EstimationError("every start failed in every replication")
    return EXIT_OK


# ---------------------------------------------------------------- diagnose

def cmd_diagnose(args) -> int:
    from .simulate import diagnostics

    series = load_series(args.data)
    try:
        table = diagnostics(series)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    table.write_csv(args.out_dir)
    return EXIT_OK


# ---------------------------------------------------------------- compare / forecast

def _parse_steps(text: str | None):
    if text is None:
        return None
    try:
        steps = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--steps: expected a comma-separated list of integers, got {text!r}") from exc
    if not steps or min(steps) < 1:
        raise ConfigError("--steps: horizons must be positive")
    return steps


def _compare_setup(args):
    from .compare import MODELS

    cfg = _load_config(args.config, COMPARE_SCHEMA, "comparison config")
    for key in ("data", "split", "seed", "mc_paths"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    steps = _parse_steps(args.steps)
    if steps is not None:
        cfg["steps"] = steps
    if getattr(args, "model", None):
        cfg["model"] = args.model
    _validate(cfg, COMPARE_SCHEMA, "comparison config")
    if "data" not in cfg:
        raise ConfigError("comparison config: field 'data' is required (or --data)")
    models = [m.replace("_", "-").lower() for m in cfg.get("models", MODELS)]
    bad = [m for m in models if m not in MODELS]
    if bad:
        raise ConfigError(f"comparison config: field 'models': unknown {bad}; expected {list(MODELS)}")
    series = load_series(cfg["data"])
    steps = cfg.get("steps", [1])
    split = cfg.get("split", series.n - max(steps))
    if split < 2 or split + max(steps) > series.n:
        raise ConfigError(f"comparison config: field 'split': need 2 <= split and split + max(steps) <= n = {series.n}")
    return cfg, series, models, steps, split


def _forecast_rocs(fit_, series, split, steps, cfg, tag, roc_dir):
    from .compare import forecast, roc

    out = {}
    train = series[:split]
    for h in steps:
        truth = series[split - 1 + h]
        probs = forecast(fit_, train, h, mc_paths=cfg.get("mc_paths", 200), seed=cfg.get("seed", 0))
        try:
            curve = roc(probs, truth)
        except ValueError as exc:
            log.warning("step %d: %s", h, exc)
            out[str(h)] = None
            continue
        out[str(h)] = curve.auc
        if roc_dir is not None:
            curve.write_csv(Path(roc_dir) / f"roc_{tag}_step{h}.csv")
    return out


def _previous_rocs(series, split, steps, roc_dir):
    from .compare import previous_edge_forecast, roc

    out = {}
    for h in steps:
        try:
            curve = roc(previous_edge_forecast(series[:split]), series[split - 1 + h])
        except ValueError:
            out[str(h)] = None
            continue
        out[str(h)] = curve.auc
        if roc_dir is not None:
            curve.write_csv(Path(roc_dir) / f"roc_previous-edge_step{h}.csv")
    return out


def cmd_compare(args) -> int:
    from .compare import fit_baseline, information_criteria

    cfg, series, models, steps, split = _compare_setup(args)
    roc_dir = args.roc_dir
    if roc_dir is not None:
        Path(roc_dir).mkdir(parents=True, exist_ok=True)
    train = series[:split]
    table, auc = [], {}
    for model in models:
        fit_ = fit_baseline(model, train)
        aic, bic = information_criteria(fit_)
        table.append({"model": model, "loglik": fit_.loglik, "k": fit_.k, "aic": aic, "bic": bic,
                      "flags": fit_.flags})
        auc[model] = _forecast_rocs(fit_, series, split, steps, cfg, model, roc_dir)
    auc["previous-edge"] = _previous_rocs(series, split, steps, roc_dir)
    _write_json(args.out, {"data": cfg["data"], "split": split, "steps": steps, "n_obs": train.n - 1,
                           "table": table, "auc": auc})
    return EXIT_OK


def cmd_forecast(args) -> int:
    from .compare import fit_baseline

    cfg, series, _, steps, split = _compare_setup(args)
    model = cfg.get("model", "transitivity-ar").replace("_", "-").lower()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        fit_ = fit_baseline(model, series[:split])
    except ValueError as exc:
        raise ConfigError(f"comparison config: field 'model': {exc}") from exc
    auc = _forecast_rocs(fit_, series, split, steps, cfg, model, out_dir)
    _write_json(out_dir / "forecast.json", {"data": cfg["data"], "model": model, "split": split,
                                            "steps": steps, "auc": auc})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="arnet", formatter_class=fmt,
        description="Simulate, fit, diagnose and compare autoregressive dynamic network models.",
        epilog="exit codes: 0 ok, 2 config error, 3 I/O error, 4 optimizer failure on every start")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", formatter_class=fmt, help="simulate a snapshot series",
                       description="Simulate a series and optionally write diagnostics CSVs.",
                       epilog="config keys:\n" + _schema_help(SIM_SCHEMA))
    p.add_argument("--config", required=True, help="simulation config (JSON)")
    p.add_argument("--out", required=True, help="output series path")
    p.add_argument("--format", choices=SERIES_FORMATS, help="series format (default matrix-text)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--diagnostics-dir", help="also write diagnostics CSVs here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", formatter_class=fmt, help="estimate parameters with confidence intervals",
                       description="Fit a kernel to a series, or run the replication driver on simulated data.",
                       epilog="config keys:\n" + _schema_help(FIT_SCHEMA))
    p.add_argument("--model", help="kernel id")
    p.add_argument("--data", help="series path")
    p.add_argument("--config", help="estimation config (JSON)")
    p.add_argument("--out", required=True, help="report path (JSON); the summary path with --replications")
    p.add_argument("--method", choices=METHODS, help="estimation pipeline")
    p.add_argument("--threads", type=int, help="worker count (ARNET_THREADS overrides)")
    p.add_argument("--all-starts", action="store_true", help="report every start of the init grid")
    p.add_argument("--replications", type=int, help="simulate and fit this many replications")
    p.add_argument("--seed-base", type=int, help="replication r uses seed seed-base + r")
    p.add_argument("--out-dir", help="directory for per-replication reports (default: --out without suffix)")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in reports")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", formatter_class=fmt, help="density and neighbour-frequency tables",
                       description="Write densities.csv, u_table.csv and v_table.csv for a series.")
    p.add_argument("--data", required=True, help="series path")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=cmd_diagnose)

    for name, func, helptext in (("compare", cmd_compare, "AIC/BIC table and forecast AUCs for baseline models"),
                                 ("forecast", cmd_forecast, "multi-step forecasts with ROC CSVs")):
        p = sub.add_parser(name, formatter_class=fmt, help=helptext, description=helptext + ".",
                           epilog="config keys:\n" + _schema_help(COMPARE_SCHEMA))
        p.add_argument("--data", help="series path")
        p.add_argument("--config", help="comparison config (JSON)")
        p.add_argument("--split", type=int, help="last training snapshot (1-based)")
        p.add_argument("--steps", help="comma-separated forecast horizons, e.g. 1,2,3")
        p.add_argument("--mc-paths", dest="mc_paths", type=int, help="simulated paths for dependent-edge forecasts")
        p.add_argument("--seed", type=int, help="forecast simulation seed")
        if name == "compare":
            p.add_argument("--out", required=True, help="report path (JSON)")
            p.add_argument("--roc-dir", help="write ROC CSVs for every model and step here")
        else:
            p.add_argument("--model", help="model id (default transitivity-ar)")
            p.add_argument("--out-dir", required=True, help="directory for ROC CSVs and forecast.json")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"arnet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, SeriesFormatError) as exc:
        print(f"arnet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EstimationError as exc:
        print(f"arnet: optimizer failure: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER


if __name__ == "__main__":
    sys.exit(main())
