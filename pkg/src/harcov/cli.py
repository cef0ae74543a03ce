"""Command-line pipeline: simulate, clean, backtest, evaluate.

Every option may come from a ``key = value`` config file (--config),
from the command line, or from the built-in default, in increasing
order of precedence. Unknown config keys are rejected. Exit codes:

* 0 success
* 2 invalid configuration or input validation failure
* 3 I/O failure (missing or unreadable files)
* 4 every model failed on every out-of-sample day

All outputs are deterministic: rerunning a command with the same
inputs produces byte-identical files.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .backtest import (
    BacktestConfig,
    DEFAULT_MODELS,
    EvalSettings,
    evaluate,
    run_backtest,
)
from .econ import EconSettings
from .errors import ConfigError, HarcovError
from .measures import clean_outliers, vech_indices, vech_labels
from .panelio import (
    read_cov_panel,
    read_csv,
    read_forecast_run,
    read_quart_panel,
    write_cov_panel,
    write_csv,
    write_forecast_run,
    write_manifest,
    write_value_panel,
)
from .synth import SynthConfig, simulate


@dataclass(frozen=True)
class RunConfig:
    """A command plus its fully resolved options."""

    command: str
    options: dict


def _to_int(s: str) -> int:
    try:
        return int(s)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {s!r}") from exc


def _to_float(s: str) -> float:
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _to_floats(s: str) -> tuple[float, ...]:
    return tuple(_to_float(part) for part in str(s).split(","))


def _to_str(s: str) -> str:
    return str(s)


def _to_strs(s: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in str(s).split(",") if part.strip())


@dataclass(frozen=True)
class _Opt:
    name: str
    convert: Callable[[str], object]
    default: object
    help: str


_SIMULATE_OPTS = (
    _Opt("out", _to_str, None, "output directory (required)"),
    _Opt("n_assets", _to_int, 5, "number of assets"),
    _Opt("n_days", _to_int, 1500, "number of trading days"),
    _Opt("intraday", _to_int, 78, "intraday intervals per day"),
    _Opt("seed", _to_int, 0, "random seed"),
    _Opt("sigma_v", _to_float, 0.4, "log-variance shock scale"),
    _Opt("kappa", _to_float, 0.03, "correlation mean-reversion weight"),
    _Opt("corr_noise", _to_float, 0.02, "daily correlation perturbation weight"),
    _Opt("coupling", _to_float, 0.75, "measurement noise / quarticity coupling"),
    _Opt("har_coeffs", _to_floats, (0.05, 0.35, 0.30, 0.25), "log-variance HAR coefficients c0,c1,c5,c20"),
    _Opt("start_date", _to_str, "2001-01-01", "first calendar date (ISO)"),
)

_CLEAN_OPTS = (
    _Opt("cov", _to_str, None, "input covariance CSV (required)"),
    _Opt("quart", _to_str, None, "input quarticity CSV (required)"),
    _Opt("out", _to_str, None, "output directory (required)"),
    _Opt("threshold", _to_float, 20.0, "flag deviations beyond this many SDs"),
)

_BACKTEST_OPTS = (
    _Opt("cov", _to_str, None, "input covariance CSV (required)"),
    _Opt("quart", _to_str, None, "input quarticity CSV (required)"),
    _Opt("out", _to_str, None, "output directory (required)"),
    _Opt("window", _to_int, 1000, "estimation window length"),
    _Opt("refit_every", _to_int, 30, "days between refits"),
    _Opt("models", _to_strs, DEFAULT_MODELS, "comma-separated model ids"),
    _Opt("threads", _to_int, 1, "fit threads per refit"),
    _Opt("forecast_floor", _to_float, 1e-8, "lower clip for level variance forecasts"),
)

_EVALUATE_OPTS = (
    _Opt("forecasts", _to_str, None, "backtest output directory (required)"),
    _Opt("returns", _to_str, None, "daily percent returns CSV (required)"),
    _Opt("quart", _to_str, None, "quarticity CSV for the noise split (required)"),
    _Opt("out", _to_str, None, "output directory (required)"),
    _Opt("alpha", _to_float, 0.10, "confidence-set level"),
    _Opt("bootstrap", _to_int, 1000, "bootstrap replications"),
    _Opt("block_len", _to_int, 0, "bootstrap block length (0 = automatic)"),
    _Opt("seed", _to_int, 0, "bootstrap seed"),
    _Opt("base_model", _to_str, "HARQL-DRD", "reference model for switching fees"),
    _Opt("costs", _to_floats, (0.0, 0.01, 0.02), "proportional cost rates"),
    _Opt("gammas", _to_floats, (1.0, 10.0), "risk aversions for switching fees"),
)

_COMMANDS: dict[str, tuple[_Opt, ...]] = {
    "simulate": _SIMULATE_OPTS,
    "clean": _CLEAN_OPTS,
    "backtest": _BACKTEST_OPTS,
    "evaluate": _EVALUATE_OPTS,
}

_REQUIRED = {
    "simulate": ("out",),
    "clean": ("cov", "quart", "out"),
    "backtest": ("cov", "quart", "out"),
    "evaluate": ("forecasts", "returns", "quart", "out"),
}


def _load_config_file(path: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    out: dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _resolve(command: str, ns: argparse.Namespace) -> RunConfig:
    opts = _COMMANDS[command]
    by_name = {o.name: o for o in opts}
    resolved = {o.name: o.default for o in opts}
    if ns.config is not None:
        file_values = _load_config_file(ns.config)
        unknown = sorted(set(file_values) - set(by_name))
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r} for {command}")
        for key, value in file_values.items():
            resolved[key] = by_name[key].convert(value)
    for o in opts:
        flag_value = getattr(ns, o.name)
        if flag_value is not None:
            resolved[o.name] = o.convert(flag_value)
    missing = [k for k in _REQUIRED[command] if resolved[k] is None]
    if missing:
        raise ConfigError(f"{command} requires --{missing[0].replace('_', '-')}")
    return RunConfig(command=command, options=resolved)


def _check_inputs(*paths: str) -> None:
    for p in paths:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"input file not found: {p}")


def _manifest_options(cfg: RunConfig) -> dict:
    out = {}
    for key, value in cfg.options.items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def cmd_simulate(cfg: RunConfig) -> int:
    o = cfg.options
    config = SynthConfig(
        n_assets=o["n_assets"],
        n_days=o["n_days"],
        intraday_count=o["intraday"],
        har_coeffs=tuple(o["har_coeffs"]),
        sigma_v=o["sigma_v"],
        kappa=o["kappa"],
        corr_noise=o["corr_noise"],
        coupling=o["coupling"],
        start_date=o["start_date"],
        seed=o["seed"],
    )
    data = simulate(config)
    out_dir = o["out"]
    os.makedirs(out_dir, exist_ok=True)
    write_cov_panel(os.path.join(out_dir, "cov.csv"), data.cov)
    write_value_panel(os.path.join(out_dir, "quart.csv"), data.quart)
    write_csv(
        os.path.join(out_dir, "returns.csv"), data.dates, data.returns_pct, data.asset_ids
    )
    rows, cols = vech_indices(config.n_assets)
    truth = data.true_cov[:, rows, cols]
    write_csv(
        os.path.join(out_dir, "truth.csv"),
        data.dates,
        truth,
        vech_labels(config.n_assets),
    )
    write_manifest(
        os.path.join(out_dir, "manifest.json"),
        {"kind": "simulate", "version": __version__, "options": _manifest_options(cfg)},
    )
    return 0


def cmd_clean(cfg: RunConfig) -> int:
    o = cfg.options
    _check_inputs(o["cov"], o["quart"])
    quart = read_quart_panel(o["quart"])
    cov = read_cov_panel(o["cov"], quart.asset_ids)
    cleaned_cov, cleaned_quart, report = clean_outliers(cov, quart, o["threshold"])
    out_dir = o["out"]
    os.makedirs(out_dir, exist_ok=True)
    write_cov_panel(os.path.join(out_dir, "cleaned_cov.csv"), cleaned_cov)
    write_value_panel(os.path.join(out_dir, "cleaned_quart.csv"), cleaned_quart)
    with open(os.path.join(out_dir, "outliers.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("date,rule,element\n")
        for idx, element in zip(report.flagged_dates, report.elements):
            fh.write(f"{cov.dates[idx]},{repr(report.rule)},{element}\n")
    write_manifest(
        os.path.join(out_dir, "manifest.json"),
        {
            "kind": "clean",
            "version": __version__,
            "options": _manifest_options(cfg),
            "n_flagged": len(report.flagged_dates),
            "n_replaced": report.n_replaced,
        },
    )
    return 0


def cmd_backtest(cfg: RunConfig) -> int:
    o = cfg.options
    _check_inputs(o["cov"], o["quart"])
    quart = read_quart_panel(o["quart"])
    cov = read_cov_panel(o["cov"], quart.asset_ids)
    config = BacktestConfig(
        window=o["window"],
        refit_every=o["refit_every"],
        models=tuple(o["models"]),
        forecast_floor=o["forecast_floor"],
    )
    panel = run_backtest(cov, quart, config, threads=o["threads"])
    out_dir = o["out"]
    os.makedirs(out_dir, exist_ok=True)
    write_forecast_run(out_dir, panel)
    if all(panel.n_failures[m] == panel.n_days for m in panel.models):
        print("error: every model failed on every day", file=sys.stderr)
        return 4
    return 0


def _write_eval_outputs(out_dir: str, report, settings: EvalSettings, cfg: RunConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    gammas = settings.econ.gammas

    with open(os.path.join(out_dir, "losses.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "model,sample,n_days,frobenius_mean,qlike_mean,in_mcs_frobenius,in_mcs_qlike\n"
        )
        for row in report.loss_rows:
            flags = [
                "" if v is None else ("true" if v else "false")
                for v in (row.in_mcs_frobenius, row.in_mcs_qlike)
            ]
            fh.write(
                f"{row.model_id},{row.sample},{row.n_days},"
                f"{repr(row.frobenius_mean)},{repr(row.qlike_mean)},"
                f"{flags[0]},{flags[1]}\n"
            )

    with open(os.path.join(out_dir, "dm.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("loss,sample,model_a,model_b,statistic,p_value\n")
        for (loss, sample), matrix in sorted(report.dm.items()):
            if matrix is None:
                continue
            ids = matrix.model_ids
            for i in range(len(ids)):
                for j in range(len(ids)):
                    if i == j:
                        continue
                    fh.write(
                        f"{loss},{sample},{ids[i]},{ids[j]},"
                        f"{repr(float(matrix.statistics[i, j]))},"
                        f"{repr(float(matrix.p_values[i, j]))}\n"
                    )

    with open(os.path.join(out_dir, "mcs.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("loss,sample,model,p_value,in_set\n")
        for (loss, sample), res in sorted(report.mcs_results.items()):
            if res is None:
                continue
            for model in report.model_ids:
                in_set = "true" if model in res.surviving_models else "false"
                fh.write(
                    f"{loss},{sample},{model},{repr(res.p_values[model])},{in_set}\n"
                )

    def g_label(g: float) -> str:
        return f"{g:g}".replace(".", "_")

    with open(os.path.join(out_dir, "econ.csv"), "w", encoding="utf-8", newline="\n") as fh:
        cols = ["regime", "model", "cost", "turnover", "concentration", "short",
                "ann_mean_pct", "ann_std_pct", "sharpe"]
        for g in gammas:
            cols.append(f"delta_daily_g{g_label(g)}")
            cols.append(f"delta_bp_g{g_label(g)}")
        fh.write(",".join(cols) + "\n")
        for regime, econ in sorted(report.econ.items()):
            for model in report.model_ids:
                row = econ.rows[model]
                for cost in settings.econ.cost_levels:
                    cell = row.by_cost[cost]
                    parts = [
                        regime,
                        model,
                        repr(float(cost)),
                        repr(row.turnover_mean),
                        repr(row.concentration_mean),
                        repr(row.short_mean),
                        repr(cell.ann_mean_pct),
                        repr(cell.ann_std_pct),
                        repr(cell.sharpe),
                    ]
                    for g in gammas:
                        parts.append(repr(cell.delta_daily[g]))
                        parts.append(repr(cell.delta_annual_bp[g]))
                    fh.write(",".join(parts) + "\n")

    write_manifest(
        os.path.join(out_dir, "manifest.json"),
        {
            "kind": "evaluate",
            "version": __version__,
            "options": _manifest_options(cfg),
            "base_model": report.base_model,
            "n_common_days": report.n_common_days,
            "n_qlike_days": report.n_qlike_days,
            "notes": list(report.notes),
        },
    )


def cmd_evaluate(cfg: RunConfig) -> int:
    o = cfg.options
    _check_inputs(o["returns"], o["quart"])
    if not os.path.isdir(o["forecasts"]):
        raise FileNotFoundError(f"forecast directory not found: {o['forecasts']}")
    panel = read_forecast_run(o["forecasts"])
    quart = read_quart_panel(o["quart"])
    ret_dates, ret_values, _ = read_csv(o["returns"])
    settings = EvalSettings(
        mcs_alpha=o["alpha"],
        n_bootstrap=o["bootstrap"],
        block_len=None if o["block_len"] == 0 else o["block_len"],
        seed=o["seed"],
        econ=EconSettings(
            cost_levels=tuple(o["costs"]),
            gammas=tuple(o["gammas"]),
            base_model=o["base_model"],
        ),
    )
    report = evaluate(panel, quart, ret_dates, ret_values, settings)
    _write_eval_outputs(o["out"], report, settings, cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harcov",
        description="Simulate, clean, backtest and evaluate realized covariance forecasts.",
    )
    parser.add_argument("--version", action="version", version=f"harcov {__version__}")
    sub = parser.add_subparsers(dest="command")
    for command, opts in _COMMANDS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value option file")
        for o in opts:
            p.add_argument(
                "--" + o.name.replace("_", "-"),
                dest=o.name,
                default=None,
                help=f"{o.help} (default: {o.default})",
            )
    return parser


_DISPATCH = {
    "simulate": cmd_simulate,
    "clean": cmd_clean,
    "backtest": cmd_backtest,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = _resolve(ns.command, ns)
        return _DISPATCH[ns.command](cfg)
    except HarcovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
