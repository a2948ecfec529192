# src/sps_ems/reporting/export.py
"""
File outputs: scenario CSV logs, MPC solve tables, comparison JSON and
the plotter-agnostic figure data files (whitespace-separated columns,
'#' comment header, SI units) with a gnuplot script.
"""

from __future__ import annotations

import json
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sps_ems.errors import ExportError
from sps_ems.pipeline.compare import ComparisonReport
from sps_ems.pipeline.orchestrator import LOG_COLUMNS, SOLVE_COLUMNS, LogRow, SimLog, SolveRecord

logger = logging.getLogger(__name__)

FIGURES: Tuple[Tuple[str, str, str], ...] = (
    ("fig5-pcm-power", "PCM power per scenario", "W"),
    ("fig6-pgm-power", "PGM power per scenario", "W"),
    ("fig7-power-tracking", "load, PGM and PCM power", "W"),
    ("fig8-pgm-ramp", "PGM power change per horizon step", "W"),
    ("fig9-soc", "PCM state of charge", "-"),
    ("fig10-pcm-ramp", "PCM power change per horizon step", "W"),
    ("fig11-capacity-loss", "capacity loss Q_L / Q_b", "%"),
)
TRACKING_SCENARIO = "scenario-2"


# ----------------------------------------------------------------------
# CSV logs
# ----------------------------------------------------------------------
def log_path(out_dir: str, scenario: str) -> str:
    return os.path.join(out_dir, f"{scenario}.csv")


def solves_path(out_dir: str, scenario: str) -> str:
    return os.path.join(out_dir, f"{scenario}-mpc.csv")


def _horizon_frame(log: SimLog) -> pd.DataFrame:
    df = log.solves_frame()
    if not log.solves:
        return df
    H = len(log.solves[0].p_g)
    for name in ("p_g", "p_b", "q"):
        seq = np.array([getattr(s, name) for s in log.solves])
        for k in range(H):
            df[f"{name}_{k + 1}"] = seq[:, k]
    df["active_1"] = ["|".join(s.active[0]) if s.active else "" for s in log.solves]
    return df


def write_log_csv(log: SimLog, out_dir: str) -> List[str]:
    """<scenario>.csv (fixed column order, round-trip float repr) and <scenario>-mpc.csv."""
    os.makedirs(out_dir, exist_ok=True)
    p_log = log_path(out_dir, log.scenario)
    p_mpc = solves_path(out_dir, log.scenario)
    log.to_frame().to_csv(p_log, index=False, lineterminator="\n")
    _horizon_frame(log).to_csv(p_mpc, index=False, lineterminator="\n")
    return [p_log, p_mpc]


def read_csv_log(out_dir: str, scenario: str) -> SimLog:
    """Rebuild a SimLog from the files write_log_csv produced."""
    p_log = log_path(out_dir, scenario)
    if not os.path.exists(p_log):
        raise ExportError(f"{scenario}: log file {p_log} not found")
    df = pd.read_csv(p_log, keep_default_na=False, float_precision="round_trip")
    missing = [c for c in LOG_COLUMNS if c not in df.columns]
    if missing:
        raise ExportError(f"{scenario}: log is missing series {', '.join(missing)}")
    rows = [LogRow(*r) for r in df[list(LOG_COLUMNS)].itertuples(index=False, name=None)]
    log = SimLog(scenario=scenario, mode="", rows=rows, meta={"scenario": scenario})

    p_mpc = solves_path(out_dir, scenario)
    if os.path.exists(p_mpc):
        sdf = pd.read_csv(p_mpc, keep_default_na=False, float_precision="round_trip")
        need = [c for c in SOLVE_COLUMNS if c not in sdf.columns]
        if need:
            raise ExportError(f"{scenario}: MPC table is missing series {', '.join(need)}")
        H = sum(1 for c in sdf.columns if c.startswith("p_g_"))
        for rec in sdf.to_dict(orient="records"):
            log.solves.append(SolveRecord(
                **{c: rec[c] for c in SOLVE_COLUMNS},
                p_g=tuple(float(rec[f"p_g_{k}"]) for k in range(1, H + 1)),
                p_b=tuple(float(rec[f"p_b_{k}"]) for k in range(1, H + 1)),
                q=tuple(float(rec[f"q_{k}"]) for k in range(1, H + 1)),
                active=(tuple(a for a in str(rec.get("active_1", "")).split("|") if a),),
            ))
    return log


def write_comparison(report: ComparisonReport, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "comparison.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return path


# ----------------------------------------------------------------------
# figure data
# ----------------------------------------------------------------------
def _series(log: SimLog, name: str) -> np.ndarray:
    if not log.rows:
        raise ExportError(f"{log.scenario}: log is empty (missing series '{name}')")
    vals = log.column(name).astype(float)
    if not np.all(np.isfinite(vals)):
        raise ExportError(f"{log.scenario}: series '{name}' has missing or non-finite samples")
    return vals


def _steps(log: SimLog, seq: str, prev: str) -> Tuple[np.ndarray, np.ndarray]:
    """(t, D): D[i, k] is the planned change of `seq` at horizon step k + 1 of solve i."""
    if not log.solves:
        raise ExportError(f"{log.scenario}: no MPC solve records (missing series '{seq}' steps)")
    t = np.array([s.t for s in log.solves], dtype=float)
    plan = np.array([(getattr(s, prev),) + tuple(getattr(s, seq)) for s in log.solves], dtype=float)
    return t, np.diff(plan, axis=1)


def _common_time(logs: Sequence[SimLog], times: Sequence[np.ndarray], what: str) -> np.ndarray:
    t0 = times[0]
    for log, t in zip(logs[1:], times[1:]):
        if t.shape != t0.shape or not np.array_equal(t, t0):
            raise ExportError(f"{what}: {log.scenario} is sampled on a different time grid than {logs[0].scenario}")
    return t0


def _multi(logs: Sequence[SimLog], column: str) -> pd.DataFrame:
    times = [_series(log, "t") for log in logs]
    t = _common_time(logs, times, column)
    data = {"t": t}
    for log in logs:
        data[log.scenario] = _series(log, column)
    return pd.DataFrame(data)


def _multi_steps(logs: Sequence[SimLog], seq: str, prev: str) -> pd.DataFrame:
    """Applied change per scenario, then the planned change at every later horizon step."""
    pairs = [_steps(log, seq, prev) for log in logs]
    t = _common_time(logs, [p[0] for p in pairs], seq)
    data = {"t": t}
    for log, (_, d) in zip(logs, pairs):
        data[log.scenario] = d[:, 0]
    for log, (_, d) in zip(logs, pairs):
        for k in range(1, d.shape[1]):
            data[f"{log.scenario}@k{k + 1}"] = d[:, k]
    return pd.DataFrame(data)


def _tracking(logs: Sequence[SimLog]) -> Tuple[pd.DataFrame, str]:
    log = next((lg for lg in logs if lg.scenario == TRACKING_SCENARIO), logs[0])
    df = pd.DataFrame({
        "t": _series(log, "t"),
        "p_load": _series(log, "p_load"),
        "p_g": _series(log, "p_g"),
        "p_b": _series(log, "p_b"),
    })
    return df, log.scenario


def _write_dat(path: str, title: str, unit: str, df: pd.DataFrame, note: Optional[str] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# {title} [{unit}]\n")
        if note:
            f.write(f"# {note}\n")
        f.write("# " + " ".join(df.columns) + "\n")
        df.to_csv(f, sep=" ", header=False, index=False, lineterminator="\n")


def figure_frames(logs: Sequence[SimLog]) -> Dict[str, Tuple[pd.DataFrame, Optional[str]]]:
    if not logs:
        raise ExportError("no logs to export")
    tracking, tracked = _tracking(logs)
    return {
        "fig5-pcm-power": (_multi(logs, "p_b"), None),
        "fig6-pgm-power": (_multi(logs, "p_g"), None),
        "fig7-power-tracking": (tracking, f"scenario: {tracked}"),
        "fig8-pgm-ramp": (_multi_steps(logs, "p_g", "prev_pg"), "columns <scenario>@k<j>: planned change at horizon step j"),
        "fig9-soc": (_multi(logs, "soc"), None),
        "fig10-pcm-ramp": (_multi_steps(logs, "p_b", "prev_pb"), "columns <scenario>@k<j>: planned change at horizon step j"),
        "fig11-capacity-loss": (_multi(logs, "loss_pct"), None),
    }


def gnuplot_script(frames: Dict[str, Tuple[pd.DataFrame, Optional[str]]]) -> str:
    lines = ["# gnuplot script for the figure data files", "set terminal pngcairo size 900,500", "set grid", "set key outside"]
    for name, title, unit in FIGURES:
        df, _ = frames[name]
        series = [c for c in df.columns if c != "t"]
        plots = ", ".join(f"'{name}.dat' using 1:{i + 2} with lines title '{s}'" for i, s in enumerate(series))
        lines += [
            "",
            f"set output '{name}.png'",
            f"set title '{title}'",
            "set xlabel 't [s]'",
            f"set ylabel '[{unit}]'",
            f"plot {plots}",
        ]
    return "\n".join(lines) + "\n"


def export_figures(logs: Sequence[SimLog], out_dir: str) -> List[str]:
    """One data file per figure plus figures.gp; returns the written paths."""
    frames = figure_frames(logs)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, title, unit in FIGURES:
        df, note = frames[name]
        path = os.path.join(out_dir, f"{name}.dat")
        _write_dat(path, title, unit, df, note)
        paths.append(path)
    gp = os.path.join(out_dir, "figures.gp")
    with open(gp, "w", encoding="utf-8", newline="\n") as f:
        f.write(gnuplot_script(frames))
    logger.info("wrote %d figure data files to %s", len(paths), out_dir)
    return paths + [gp]
