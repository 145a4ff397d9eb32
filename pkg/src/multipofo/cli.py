"""Command-line entry point: ``multipofo {synth,train,predict,evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The default output directory comes from ``--out-dir``, then the config's
``output.out_dir``, then ``$MULTIPOFO_OUT_DIR``, then ``./runs``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import data as data_mod
from .config import RunConfig, SynthConfig, load_config
from .errors import ConfigError, MultipofoError, PipelineError
from .evaluation import evaluate, export_report
from .model import encode, load, predict, save
from .multiscale import embed, pad_to_max
from .synth import generate
from .training import load_series, prepare_samples, run_pipeline

OUT_DIR_ENV = "MULTIPOFO_OUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("multipofo")


class UsageError(Exception):
    pass


def _out_dir(args, config: RunConfig | None) -> Path:
    chosen = args.out_dir or (config.output.out_dir if config else None) or os.environ.get(OUT_DIR_ENV) or "runs"
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> RunConfig:
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
        if config.synth is not None:
            config.synth.seed = args.seed
    return config


def _require_data(config: RunConfig):
    if config.csv is not None and not Path(config.csv).is_file():
        raise UsageError(f"data file not found: {config.csv}")


def cmd_synth(args) -> int:
    if args.config:
        config = _load_config(args)
        synth = config.synth
        if synth is None:
            raise ConfigError("config has no data.synth section")
    else:
        synth = SynthConfig()
        if args.seed is not None:
            synth.seed = args.seed
    series = [generate(spec) for spec in synth.specs()]
    out = Path(args.out) if args.out else _out_dir(args, None) / "synth.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    data_mod.write_csv(series, out, comments=[f"seed={synth.seed}", f"duration={synth.duration}"])
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    _require_data(config)
    out = _out_dir(args, config)
    result = run_pipeline(load_series(config), config)
    o = config.output
    save(result.model, out / o.checkpoint)
    result.log.to_csv(out / o.train_log)
    export_report(result.report, out / o.report_json, "json")
    export_report(result.report, out / o.report_csv, "csv")
    for stage, seconds in result.log.wall_time.items():
        log.info("%s took %.1fs", stage, seconds)
    for name in (o.checkpoint, o.train_log, o.report_json, o.report_csv):
        print(out / name)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load(args.checkpoint)
    try:
        scale = model.scale(args.scale)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    series_list = data_mod.ingest_csv(args.input)
    if args.circuit:
        series_list = [s for s in series_list if s.circuit_id == args.circuit]
        if not series_list:
            raise UsageError(f"circuit {args.circuit!r} not found in {args.input}")
    if len(series_list) != 1:
        raise UsageError(f"{args.input} holds {len(series_list)} circuits; pick one with --circuit")
    window = data_mod.fill_gaps(series_list[0], "reject")
    if len(window) != scale.window_len:
        raise UsageError(
            f"scale {scale.name!r} expects a window of {scale.window_len} steps, got {len(window)}"
        )
    cid = window.circuit_id
    scaler = model.scalers.get(cid)
    if scaler is None:
        if len(model.scalers) != 1:
            known = ", ".join(sorted(model.scalers)) or "none"
            raise UsageError(f"no scaler for circuit {cid!r} in checkpoint (known: {known})")
        scaler = next(iter(model.scalers.values()))
    x = embed(pad_to_max(scaler.transform(window.values), model.L_max), scale, model.I)
    y = predict(model, encode(model, x), scale.one_hot_index)
    print(repr(float(scaler.inverse(y)[0])))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    if args.data:
        config = replace(config, csv=args.data, synth=None)
    _require_data(config)
    model = load(args.checkpoint)
    config.scales = list(model.scales)
    config.model.one_hot_width = model.I
    config.train.target_full_period = bool(model.meta.get("target_full_period", False))
    train_samples, test_samples, scalers = prepare_samples(load_series(config), config, model.scalers)
    if len(test_samples) == 0:
        raise PipelineError("evaluate", ValueError("split yields no test samples"))
    model.scalers = scalers
    report = evaluate(
        model, train_samples, test_samples, config.groups, {"seed": config.train.seed, "config_hash": config.hash()}
    )
    out = _out_dir(args, config)
    print(export_report(report, out / config.output.report_json, "json"))
    print(export_report(report, out / config.output.report_csv, "csv"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multipofo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic load CSV")
    p.add_argument("--config", help="run config with a data.synth section (defaults used when omitted)")
    p.add_argument("--out", help="output CSV path (default: <out-dir>/synth.csv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the two-stage pipeline and write checkpoint, log and report")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast the next-period peak (kW) for one input window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="window CSV (timestamp,circuit_id,load_kw)")
    p.add_argument("--scale", required=True)
    p.add_argument("--circuit")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a checkpoint on the configured test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="CSV overriding the config's data source")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"multipofo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        code = EXIT_USAGE if isinstance(exc.cause, ConfigError) else EXIT_RUNTIME
        print(f"multipofo: error: {exc}", file=sys.stderr)
        return code
    except (MultipofoError, OSError, ValueError) as exc:
        print(f"multipofo: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
