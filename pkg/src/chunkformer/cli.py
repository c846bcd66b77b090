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

     Command line entry point:

     chunkformer synth      write a synthetic event log
     chunkformer preprocess group, order, split and encode a record file
     chunkformer train      fit a model on a preprocessed manifest
     chunkformer eval       score a checkpoint on one split
     chunkformer bench      attention memory and time sweep

     Every command takes --config run.json, any number of
     --set section.key=value overrides and an optional --preset.
     Values are resolved in the order defaults, preset, config file,
     overrides.
"""

from __future__ import annotations
import argparse
import json
import logging
import os
import pathlib as pl
import sys
import typing as tp

import psutil

from . import Q_
from .chunkformer_base import (
    chunkformerBase,
    ChunkFormerError,
    CompatibilityError,
    ConfigError,
    KeywordError,
)
from .chunkformer import ModelConfig
from .pipeline import SPLITS, DataConfig, DatasetManifest, preprocess
from .training import TrainConfig, evaluate, length_stability, train
from .bench import BenchConfig, sweep
from .synthetic import SynthConfig, write_synthetic
from .presets import apply_preset
from .post_processing import (
    plot_loss_curve,
    show_bench,
    show_eval,
    write_bench_report,
    write_eval_report,
)
from .utility_functions import package_version, parse_override

RUN_CONFIG_FORMAT = "chunkformer-run-config"
RUN_CONFIG_VERSION = 1
SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "bench": BenchConfig,
    "synth": SynthConfig,
}
LOG_LEVEL_VARIABLE = "CHUNKFORMER_LOG_LEVEL"


class RunConfig(chunkformerBase):
    """All settings of one run. Example::

        RunConfig(seed=7,             # copied into every section
                  output_dir="runs",
                  preset="None",      # cdn, td, oe or synthetic
                  data={...},         # DataConfig keywords
                  model={...},        # ModelConfig keywords
                  train={...},        # TrainConfig keywords
                  bench={...},        # BenchConfig keywords
                  synth={...},        # SynthConfig keywords
                  )

    After construction self.data, self.model etc. are the section objects.
    """

    def __init__(self, **kwargs) -> None:
        self.defaults: dict[str, list[tp.Any, tuple]] = {
            "seed": [7, (int)],
            "output_dir": ["runs", (str)],
            "preset": ["None", (str)],
            **{name: [{}, (dict)] for name in SECTIONS},
        }
        self.lrk: tp.List = []
        self.__initialize_keyword_variables__(kwargs)

        given = {name: dict(getattr(self, name)) for name in SECTIONS}
        for name, cls in SECTIONS.items():
            setattr(self, name, cls())
            getattr(self, name).seed = self.seed
        if self.preset != "None":
            apply_preset(self, self.preset)
        for name, values in given.items():
            for key, value in values.items():
                self.set_value(name, key, value)

    def set_value(self, section: str, key: str, value: tp.Any) -> None:
        """Type checked update of one section keyword

        :raises KeywordError: for an unknown section or keyword
        :raises InputError: if the value has the wrong type
        """
        if section not in SECTIONS:
            raise KeywordError(f"{section} must be one of {sorted(SECTIONS)}")
        obj = getattr(self, section)
        if key in obj.defaults:
            allowed = obj.defaults[key][1]
            allowed = allowed if isinstance(allowed, tuple) else (allowed,)
            # json writes 1.0 as 1
            if type(value) is int and float in allowed and int not in allowed:
                value = float(value)
        obj.__update_dict_entries__(obj.defaults, {key: value})

    def override(self, expression: str) -> None:
        """Apply one section.key=value expression"""
        section, key, value = parse_override(expression)
        self.set_value(section, key, value)

    def validate(self) -> None:
        for name in SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "validate"):
                section.validate()

    @property
    def directory(self) -> pl.Path:
        return pl.Path(self.output_dir)

    @property
    def manifest_dir(self) -> pl.Path:
        return self.directory / "manifest"

    def to_dict(self) -> dict:
        d = {
            "format": RUN_CONFIG_FORMAT,
            "version": RUN_CONFIG_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "preset": self.preset,
        }
        for name in SECTIONS:
            d[name] = getattr(self, name).to_dict()
        d["model"].pop("name", None)
        return d

    def save(self, fn: pl.Path | str) -> pl.Path:
        fn = pl.Path(fn)
        fn.parent.mkdir(parents=True, exist_ok=True)
        fn.write_text(json.dumps(self.to_dict(), indent=2))
        return fn

    @classmethod
    def load(cls, fn: pl.Path | str) -> RunConfig:
        return cls(**read_config_file(fn))


def read_config_file(fn: pl.Path | str) -> dict:
    """The keywords stored in a run config file

    :raises ConfigError: if the file is missing or not a run config
    :raises CompatibilityError: for a newer format version
    """
    fn = pl.Path(fn)
    if not fn.exists():
        raise ConfigError(f"config file {fn} does not exist")
    try:
        d = json.loads(fn.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{fn} is not valid json: {e}")
    if not isinstance(d, dict):
        raise ConfigError(f"{fn} must hold a json object")
    fmt = d.pop("format", RUN_CONFIG_FORMAT)
    version = d.pop("version", RUN_CONFIG_VERSION)
    if fmt != RUN_CONFIG_FORMAT:
        raise ConfigError(f"{fn} has format {fmt!r}, expected {RUN_CONFIG_FORMAT!r}")
    if version > RUN_CONFIG_VERSION:
        raise CompatibilityError(
            f"{fn} has version {version}, this build reads up to {RUN_CONFIG_VERSION}"
        )
    return d


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, preset and overrides from the command line"""
    d: dict = {}
    if args.config:
        d = read_config_file(args.config)
    if args.preset:
        d["preset"] = args.preset
    if args.output_dir:
        d["output_dir"] = args.output_dir
    run = RunConfig(**d)
    for expression in args.set or []:
        run.override(expression)
    return run


def setup_logging(directory: pl.Path, command: str) -> pl.Path:
    """Log everything from INFO up to <directory>/<command>.log and
    warnings (or CHUNKFORMER_LOG_LEVEL) to stderr"""
    directory.mkdir(parents=True, exist_ok=True)
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)
    fn = directory / f"{command}.log"
    logging.basicConfig(filename=fn, filemode="w", level=logging.INFO)
    console = logging.StreamHandler(sys.stderr)
    level = os.environ.get(LOG_LEVEL_VARIABLE, "WARNING").upper()
    console.setLevel(getattr(logging, level, logging.WARNING))
    console.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    logging.root.addHandler(console)
    logging.root.setLevel(min(logging.INFO, console.level))
    logging.info(f"chunkformer {package_version()} {command}")
    return fn


def show_memory() -> None:
    rss = Q_(psutil.Process(os.getpid()).memory_info().rss, "byte").to("GiB")
    print(f"This run used {rss.magnitude:.2f} Gbytes of memory \n")


# --- commands ----------------------------------------------------------


def cmd_synth(run: RunConfig, args: argparse.Namespace) -> int:
    fn = write_synthetic(run.synth, args.out or run.directory / "synthetic.csv")
    print(f"synthetic log written to {fn}")
    return 0


def cmd_preprocess(run: RunConfig, args: argparse.Namespace) -> int:
    if run.data.input == "None":
        raise ConfigError("set data.input to the record file")
    manifest = preprocess(run.data, run.manifest_dir)
    run.save(run.directory / "config.json")
    print(f"manifest written to {run.manifest_dir}")
    for split in SPLITS:
        print(f"{split:>6s}: {len(manifest.splits[split])} groups")
    print(f"schema {manifest.schema_hash[:12]}, vocab sizes {manifest.schema.vocab_sizes}")
    return 0


def cmd_train(run: RunConfig, args: argparse.Namespace) -> int:
    if args.resume:
        run.train.resume = args.resume
    run.model.validate()
    run.train.validate()
    manifest = DatasetManifest.load(args.manifest or run.manifest_dir)
    run.save(run.directory / "config.json")
    if args.sweep:
        frame, spread = length_stability(
            run.model, manifest, run.train, run.directory / "stability"
        )
        frame.to_csv(run.directory / "stability.csv", index=False)
        print(frame.to_string(index=False))
        print(f"\nmacro F1 spread over sequence lengths: {spread:.4f}\n")
    else:
        result = train(run.model, manifest, run.train, run.directory)
        plot_loss_curve(result.history, run.directory / "loss_curve.png")
        print(result.history.to_string(index=False))
        print(f"\nbest checkpoint: {result.best_path} (epoch {result.best.epoch})")
        show_eval(result.best)
    show_memory()
    return 0


def cmd_eval(run: RunConfig, args: argparse.Namespace) -> int:
    manifest = DatasetManifest.load(args.manifest or run.manifest_dir)
    checkpoint = args.checkpoint or run.directory / "best.npz"
    report = evaluate(checkpoint, manifest, args.split)
    fn = write_eval_report(report, run.directory)
    show_eval(report)
    print(f"report written to {fn}")
    return 0


def cmd_bench(run: RunConfig, args: argparse.Namespace) -> int:
    frame = sweep(run.bench, timing=not args.no_timing)
    paths = write_bench_report(frame, run.directory / "bench", chart=not args.no_chart)
    show_bench(frame)
    print(f"report written to {paths['json']}")
    return 0


COMMANDS: dict[str, tp.Callable[[RunConfig, argparse.Namespace], int]] = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config json file")
    common.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one config value, may be repeated",
    )
    common.add_argument("--preset", help="cdn, td, oe or synthetic")
    common.add_argument("--output-dir", help="directory for all outputs")

    parser = argparse.ArgumentParser(
        prog="chunkformer",
        description="Chunked transformer encoder for long event sequences",
    )
    parser.add_argument("--version", action="version", version=package_version())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic event log")
    p.add_argument("--out", help="csv file, default <output-dir>/synthetic.csv")

    sub.add_parser("preprocess", parents=[common], help="build the dataset manifest")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--manifest", help="manifest directory, default <output-dir>/manifest")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument(
        "--sweep",
        action="store_true",
        help="train once per train.sweep_lengths and compare macro F1",
    )

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", help="default <output-dir>/best.npz")
    p.add_argument("--manifest", help="manifest directory, default <output-dir>/manifest")
    p.add_argument("--split", default="test", choices=SPLITS)

    p = sub.add_parser("bench", parents=[common], help="attention memory and time sweep")
    p.add_argument("--no-timing", action="store_true", help="count elements only")
    p.add_argument("--no-chart", action="store_true", help="skip bench.png")
    return parser


def main(argv: tp.Sequence[str] | None = None) -> int:
    """Run one command and return its exit code. Package errors are
    reported on stderr and mapped to their exit_code."""
    args = build_parser().parse_args(argv)
    try:
        run = resolve_config(args)
        setup_logging(run.directory, args.command)
        return COMMANDS[args.command](run, args)
    except ChunkFormerError as e:
        logging.info(f"{e.category} error: {str(e).strip()}")
        print(f"chunkformer: {e.category} error: {str(e).strip()}", file=sys.stderr)
        return e.exit_code


def run() -> None:
    sys.exit(main())
