"""CSV and manifest serialization for panels and forecast runs.

All files share one shape: a ``date`` column of ISO dates followed by
value columns. Covariance panels store vech columns named v_<i>_<j>
(1-based, row >= col, column-major); per-asset panels store one column
per ticker. Floats are written with repr, so a write/read round trip
is bit-exact and reruns of a deterministic pipeline produce
byte-identical files.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

import numpy as np

from . import __version__
from .backtest import BacktestConfig, ForecastPanel
from .errors import ConfigError
from .measures import CovPanel, QuartPanel, VolPanel, vech_indices, vech_labels, vech_order


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(
    path: str, dates: Sequence[str], values: np.ndarray, columns: Sequence[str]
) -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape != (len(dates), len(columns)):
        raise ConfigError("values must be (len(dates), len(columns))")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("date," + ",".join(columns) + "\n")
        for d, row in zip(dates, values):
            fh.write(str(d) + "," + ",".join(_fmt(x) for x in row) + "\n")


def read_csv(path: str) -> tuple[list[str], np.ndarray, list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ConfigError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "date" or len(header) < 2:
        raise ConfigError(f"{path}: header must be 'date,<columns>'")
    columns = header[1:]
    dates: list[str] = []
    rows: list[list[float]] = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ConfigError(f"{path}: row has {len(parts)} fields, expected {len(header)}")
        dates.append(parts[0])
        try:
            rows.append([float(x) for x in parts[1:]])
        except ValueError as exc:
            raise ConfigError(f"{path}: non-numeric value ({exc})") from exc
    values = np.array(rows, dtype=float) if rows else np.empty((0, len(columns)))
    return dates, values, columns


def write_cov_panel(path: str, panel: CovPanel) -> None:
    write_csv(path, panel.dates, panel.vech_values(), vech_labels(panel.n_assets))


def read_cov_panel(path: str, asset_ids: Sequence[str] | None = None) -> CovPanel:
    dates, values, columns = read_csv(path)
    n = vech_order(len(columns))
    expected = vech_labels(n)
    if columns != expected:
        raise ConfigError(f"{path}: covariance columns must be {expected}")
    if asset_ids is None:
        asset_ids = [f"A{i + 1}" for i in range(n)]
    if len(asset_ids) != n:
        raise ConfigError(f"{path}: {n} assets in file, {len(asset_ids)} ids given")
    rows, cols = vech_indices(n)
    mats = np.empty((len(dates), n, n))
    mats[:, rows, cols] = values
    mats[:, cols, rows] = values
    return CovPanel(tuple(dates), mats, tuple(asset_ids))


def write_value_panel(path: str, panel: VolPanel) -> None:
    write_csv(path, panel.dates, panel.values, panel.asset_ids)


def read_vol_panel(path: str) -> VolPanel:
    dates, values, columns = read_csv(path)
    return VolPanel(tuple(dates), values, tuple(columns))


def read_quart_panel(path: str) -> QuartPanel:
    dates, values, columns = read_csv(path)
    return QuartPanel(tuple(dates), values, tuple(columns))


def write_returns(
    path: str, dates: Sequence[str], values: np.ndarray, tickers: Sequence[str]
) -> None:
    write_csv(path, dates, values, tickers)


def read_returns(path: str) -> tuple[list[str], np.ndarray, list[str]]:
    return read_csv(path)


def write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# forecast runs

def _model_filename(model: str) -> str:
    return model.replace("/", "_") + ".csv"


def write_forecast_run(out_dir: str, panel: ForecastPanel) -> list[str]:
    """Persist a backtest run; returns the written paths."""
    os.makedirs(os.path.join(out_dir, "forecasts"), exist_ok=True)
    written = []
    rows, cols = vech_indices(len(panel.asset_ids))
    for m in panel.models:
        path = os.path.join(out_dir, "forecasts", _model_filename(m))
        write_csv(
            path,
            panel.dates,
            panel.forecasts[m][:, rows, cols],
            vech_labels(len(panel.asset_ids)),
        )
        written.append(path)
    rpath = os.path.join(out_dir, "realized.csv")
    write_csv(rpath, panel.dates, panel.realized[:, rows, cols], vech_labels(len(panel.asset_ids)))
    written.append(rpath)
    manifest = {
        "kind": "backtest",
        "version": __version__,
        "asset_ids": list(panel.asset_ids),
        "models": list(panel.models),
        "window": panel.config.window,
        "refit_every": panel.config.refit_every,
        "forecast_floor": panel.config.forecast_floor,
        "n_days": panel.n_days,
        "n_failures": panel.n_failures,
        "floored": panel.floored,
        "corr_projections": panel.corr_projections,
        "failure_log": [list(x) for x in panel.failure_log],
    }
    mpath = os.path.join(out_dir, "manifest.json")
    write_manifest(mpath, manifest)
    written.append(mpath)
    return written


def read_forecast_run(out_dir: str) -> ForecastPanel:
    """Rebuild a ForecastPanel from a run directory."""
    manifest = read_manifest(os.path.join(out_dir, "manifest.json"))
    if manifest.get("kind") != "backtest":
        raise ConfigError(f"{out_dir}: manifest is not a backtest manifest")
    asset_ids = tuple(manifest["asset_ids"])
    models = tuple(manifest["models"])
    realized_panel = read_cov_panel(os.path.join(out_dir, "realized.csv"), asset_ids)
    n = len(asset_ids)
    rows, cols = vech_indices(n)
    forecasts: dict[str, np.ndarray] = {}
    failed: dict[str, np.ndarray] = {}
    for m in models:
        path = os.path.join(out_dir, "forecasts", _model_filename(m))
        dates, values, columns = read_csv(path)
        if tuple(dates) != realized_panel.dates:
            raise ConfigError(f"{path}: dates do not match realized.csv")
        if columns != vech_labels(n):
            raise ConfigError(f"{path}: unexpected columns")
        mats = np.empty((len(dates), n, n))
        mats[:, rows, cols] = values
        mats[:, cols, rows] = values
        forecasts[m] = mats
        failed[m] = np.any(~np.isfinite(values), axis=1)
    config = BacktestConfig(
        window=int(manifest["window"]),
        refit_every=int(manifest["refit_every"]),
        models=models,
        forecast_floor=float(manifest["forecast_floor"]),
    )
    n_days = realized_panel.n_days
    refit_days = np.zeros(n_days, dtype=bool)
    refit_days[:: config.refit_every] = True
    return ForecastPanel(
        dates=realized_panel.dates,
        asset_ids=asset_ids,
        models=models,
        forecasts=forecasts,
        realized=np.asarray(realized_panel.mats),
        failed=failed,
        refit_days=refit_days,
        n_failures={m: int(failed[m].sum()) for m in models},
        floored={m: int(v) for m, v in manifest["floored"].items()},
        corr_projections=int(manifest["corr_projections"]),
        failure_log=tuple(tuple(x) for x in manifest.get("failure_log", [])),
        config=config,
    )
