"""
     chunkformer: multi-stage chunked transformer encoder for long sequences
     Copyright (C), 2024 the chunkformer developers

     This program is free software: you can redistribute it and/or modify
     it under the terms of the GNU General Public License as published by
     the Free Software Foundation, either version 3 of the License, or
     (at your option) any later version.

     This program is distributed in the hope that it will be useful,
     but WITHOUT ANY WARRANTY; without even the implied warranty of
     MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
     GNU General Public License for more details.

     You should have received a copy of the GNU General Public License
     along with this program.  If not, see <https://www.gnu.org/licenses/>.

     Reports, tables and charts for training, evaluation and bench runs.
"""

from __future__ import annotations
import json
import logging
import math
import pathlib as pl
import typing as tp

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .utility_functions import package_version, plot_geometry

if tp.TYPE_CHECKING:
    from .training import EvalReport

BENCH_FORMAT = "chunkformer-bench"
EVAL_FORMAT = "chunkformer-eval"
REPORT_VERSION = 1
_TICKS = "▁▂▃▄▅▆▇█"


def sparkline(values: tp.Sequence[float]) -> str:
    """One block character per value, scaled between min and max.
    Non-finite values show as a blank."""
    v = np.asarray(values, dtype=np.float64)
    finite = v[np.isfinite(v)]
    if finite.size == 0:
        return " " * len(v)
    lo, hi = finite.min(), finite.max()
    span = hi - lo
    out = []
    for x in v:
        if not math.isfinite(x):
            out.append(" ")
        elif span == 0:
            out.append(_TICKS[0])
        else:
            out.append(_TICKS[int(round((x - lo) / span * (len(_TICKS) - 1)))])
    return "".join(out)


def sweep_sparklines(frame: pd.DataFrame, column: str = "peak_elements") -> dict[str, str]:
    """variant -> sparkline of column over increasing length"""
    out = {}
    for variant, part in frame.groupby("variant", sort=False):
        out[str(variant)] = sparkline(part.sort_values("length")[column].to_numpy())
    return out


def plot_sweep(frame: pd.DataFrame, fn: pl.Path | str) -> pl.Path:
    """Score elements (log scale) and, if present, median time against
    length, one line per variant"""
    panels = ["peak_elements"] + (["median_ms"] if "median_ms" in frame else [])
    size, (row, col) = plot_geometry(len(panels))
    fig, ax = plt.subplots(row, col)
    axs = np.atleast_1d(ax).reshape(-1)
    fig.set_size_inches(size)
    labels = {
        "peak_elements": "score elements per head",
        "median_ms": "median time [ms]",
    }
    for a, column in zip(axs, panels):
        for i, (variant, part) in enumerate(frame.groupby("variant", sort=False)):
            part = part.sort_values("length")
            a.plot(part["length"], part[column], marker="o", color=f"C{i}", label=variant)
        a.set_xlabel("sequence length")
        a.set_ylabel(labels[column])
        if column == "peak_elements":
            a.set_yscale("log")
        a.spines["top"].set_visible(False)
        a.legend()
    fig.tight_layout()
    fn = pl.Path(fn)
    fig.savefig(fn)
    plt.close(fig)
    return fn


def plot_loss_curve(history: pd.DataFrame, fn: pl.Path | str) -> pl.Path:
    """Train and validation loss per epoch"""
    fig, ax = plt.subplots(1, 1)
    fig.set_size_inches((5, 4))
    ax.plot(history["epoch"], history["train_loss"], color="C0", label="train")
    if "val_loss" in history:
        ax.plot(history["epoch"], history["val_loss"], color="C1", label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("BCE loss")
    ax.spines["top"].set_visible(False)
    ax.legend()
    fig.tight_layout()
    fn = pl.Path(fn)
    fig.savefig(fn)
    plt.close(fig)
    return fn


def write_bench_report(
    frame: pd.DataFrame, directory: pl.Path | str, chart: bool = True
) -> dict[str, pl.Path]:
    """bench.csv, bench.json and optionally bench.png in directory"""
    directory = pl.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"csv": directory / "bench.csv", "json": directory / "bench.json"}
    frame.to_csv(paths["csv"], index=False)
    doc = {
        "format": BENCH_FORMAT,
        "version": REPORT_VERSION,
        "package_version": package_version(),
        "rows": json.loads(frame.to_json(orient="records")),
        "sparklines": sweep_sparklines(frame),
    }
    paths["json"].write_text(json.dumps(doc, indent=2))
    if chart:
        paths["png"] = plot_sweep(frame, directory / "bench.png")
    logging.info(f"bench report written to {directory}")
    return paths


def write_eval_report(report: EvalReport, directory: pl.Path | str) -> pl.Path:
    directory = pl.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fn = directory / f"eval_{report.split}.json"
    doc = {
        "format": EVAL_FORMAT,
        "version": REPORT_VERSION,
        "package_version": package_version(),
        **report.to_dict(),
    }
    fn.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return fn


def show_eval(report: EvalReport) -> None:
    """Print the report as tables"""
    print(f"\n--- {report.split}: {report.n} predictions ---")
    print(
        pd.DataFrame(
            [{"loss": report.loss, "auc": report.auc, "macro_f1": report.macro_f1}]
        ).to_string(index=False)
    )
    print()
    print(report.summary().to_string(index=False))
    if report.footprint:
        fp = report.footprint
        print(
            f"\nattention score elements per head: {fp['per_stage']} "
            f"(peak {fp['peak']}, full attention {fp['full']})"
        )
    print()


def show_bench(frame: pd.DataFrame) -> None:
    cols = [c for c in frame.columns if c != "rss_mib"]
    print(frame[cols].to_string(index=False))
    for variant, line in sweep_sparklines(frame).items():
        print(f"{variant:>10s} {line}")
    if "rss_mib" in frame and len(frame):
        print(f"\nThis run used {frame['rss_mib'].iloc[0]:.1f} MiB of memory\n")
