"""
Command-line entry point ``tem``.

Exit codes: 0 on success, 2 when some signals of a batch failed, 1 on
configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .calibration import records_to_csv
from .errors import ConfigurationError, TemError
from .harness import (
    MODES,
    ExperimentConfig,
    build_scenario,
    emit_plotdata,
    run_experiment,
    run_signal,
    signal_seeds,
    write_signal_outputs,
)
from .signal_model import BandlimitedSignal, generate_signal
from .tem_core import encode

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("tem")


def _config(args) -> ExperimentConfig:
    if args.config == "fig3":
        cfg = ExperimentConfig.fig3()
    elif args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "num_signals", None) is not None:
        cfg.num_signals = args.num_signals
    cfg.validate()
    return cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(args, cfg):
    index = args.index
    seed = signal_seeds(cfg.seed, index + 1)[index]
    sig = None
    if args.signal:
        try:
            sig = BandlimitedSignal.from_json(Path(args.signal).read_text())
        except (OSError, ValueError, KeyError) as err:
            raise ConfigurationError(f"cannot read signal {args.signal}: {err}") from err
    return build_scenario(cfg, index, seed, signal=sig)


def cmd_gen(args, cfg):
    out = _out(args, cfg)
    seeds = signal_seeds(cfg.seed, cfg.num_signals)
    for i, s in enumerate(seeds):
        sig = generate_signal(cfg.M, cfg.omega_M, seed=s)
        (out / f"signal_{i:03d}.json").write_text(sig.to_json())
    print(f"wrote {len(seeds)} signal(s) to {out}")
    return EXIT_OK


def cmd_encode(args, cfg):
    out = _out(args, cfg)
    sc = _scenario(args, cfg)
    clean = encode(sc.signal, sc.encoder)
    field_train = encode(sc.signal, sc.encoder, plan=sc.plan)
    genie = args.mode == "genie"
    (out / "train_clean.csv").write_text(clean.to_csv(genie=genie))
    (out / "train_cal.csv").write_text(field_train.to_csv(genie=genie))
    print(f"{clean.n_intervals} clean and {field_train.n_intervals} calibrated intervals written to {out}")
    return EXIT_OK


def cmd_calibrate(args, cfg):
    from .calibration import calibrate

    out = _out(args, cfg)
    sc = _scenario(args, cfg)
    train = encode(sc.signal, sc.encoder, plan=sc.plan)
    records = calibrate(train, sc.plan, sc.bounds, sc.schedule)
    (out / "calibration.csv").write_text(records_to_csv(records))
    flags = sorted({r.flag for r in records})
    print(f"{len(records)} segment(s) calibrated, flags: {', '.join(flags) or 'none'}")
    return EXIT_OK


def cmd_feasibility(args, cfg):
    out = _out(args, cfg)
    sc = _scenario(args, cfg)
    result = {"uncalibrated": sc.uncalibrated.to_dict(), "calibrated": sc.calibrated.to_dict(),
              "kappa_sup": sc.bounds.kappa_sup, "T_ns_sup": sc.T_ns_sup}
    (out / "feasibility.json").write_text(json.dumps(result, indent=2) + "\n")
    print("uncalibrated")
    print(sc.uncalibrated.table())
    print("\ncalibrated")
    print(sc.calibrated.table())
    return EXIT_OK


def cmd_reconstruct(args, cfg):
    out = _out(args, cfg)
    sc = _scenario(args, cfg)
    run = run_signal(cfg, sc)
    write_signal_outputs(run, out)
    for m in MODES:
        print(f"{m:6s} NMSE {run.nmse_db[m]:8.2f} dB  ({run.iterations[m]} iterations, {run.status[m]})")
    return EXIT_OK


def cmd_experiment(args, cfg):
    out = _out(args, cfg)
    report = run_experiment(cfg)
    first = None
    if report.signals:
        idx = report.signals[0]["index"]
        first = run_signal(cfg, build_scenario(cfg, idx, signal_seeds(cfg.seed, idx + 1)[idx]))
    emit_plotdata(report, first, out)
    (out / "runtime.json").write_text(json.dumps({"runtime_s": report.runtime_s}) + "\n")
    for m, agg in report.aggregates().items():
        if agg["mean_db"] is not None:
            print(f"{m:6s} mean {agg['mean_db']:8.2f} dB  worst {agg['worst_db']:8.2f} dB")
    if report.failures:
        print(f"{len(report.failures)} signal(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment config JSON, or 'fig3' for the preset")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument("--index", type=int, default=0, help="signal index within the batch")
    single.add_argument("--signal", help="signal JSON written by 'tem gen'")

    p = argparse.ArgumentParser(prog="tem", parents=[common],
                                description="Time encoding with mismatch and self-calibration.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", parents=[common], help="draw random signals")
    g.add_argument("--num-signals", type=int, dest="num_signals")
    g.set_defaults(func=cmd_gen)
    e = sub.add_parser("encode", parents=[common, single], help="encode one signal")
    e.add_argument("--mode", choices=("genie", "field"), default="genie",
                   help="genie keeps true per-interval parameters in the CSV")
    e.set_defaults(func=cmd_encode)
    sub.add_parser("calibrate", parents=[common, single],
                   help="estimate per-segment parameters").set_defaults(func=cmd_calibrate)
    sub.add_parser("feasibility", parents=[common, single],
                   help="recovery-condition report").set_defaults(func=cmd_feasibility)
    sub.add_parser("reconstruct", parents=[common, single],
                   help="decode one signal with all four samplers").set_defaults(func=cmd_reconstruct)
    x = sub.add_parser("experiment", parents=[common], help="run a batch and write plot data")
    x.add_argument("--num-signals", type=int, dest="num_signals")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except (ConfigurationError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TemError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
