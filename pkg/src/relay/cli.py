"""Command-line entry point: ``relay <command> ...``.

Exit codes: 0 success, 1 invalid input (config, arguments, missing runs),
2 the simulation itself failed (for example calibration).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .tracker import CalibrationFailed

log = logging.getLogger("relay")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if getattr(args, "config", None) else harness.ExperimentConfig()
    overrides = {}
    for name in ("participants", "seed", "mode", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "saccades", None) is not None:
        overrides["saccades_per_condition"] = args.saccades
    if getattr(args, "no_samples", False):
        overrides["write_samples"] = False
    if not overrides:
        return cfg
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise harness.ConfigError(str(exc)) from exc


def cmd_config(args) -> int:
    text = json.dumps(harness.config_to_dict(harness.ExperimentConfig()), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    cal = harness.calibrate_run(cfg)
    Path(args.out).write_text(json.dumps(cal.to_dict(), indent=2) + "\n")
    log.info("calibrated, worst residual %.3f deg", max(cal.residuals_deg))
    return EXIT_OK


def cmd_pattern(args) -> int:
    cfg = _config(args)
    pattern = harness.make_pattern(args.name, cfg)
    out = Path(args.out) / f"pattern_{args.name}"
    harness.run_precision_experiment(pattern, args.trials, cfg, out)
    log.info("wrote %d trials of %s to %s", args.trials, args.name, out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    out = Path(args.out) / "experiment"
    res = harness.run_saccade_experiment(cfg, out)
    summary = json.loads((out / "summary.json").read_text())
    log.info("%d detected, %d retained (%.1f %%), %d failed cells", summary["detected"], summary["retained"],
             100.0 * (summary["retained_fraction"] or 0.0), len(res.failures()))
    return EXIT_OK


def cmd_analyze(args) -> int:
    for p in harness.analyze(args.run, args.report):
        log.info("wrote %s", p)
    return EXIT_OK


def cmd_laser(args) -> int:
    cfg = _config(args)
    pattern = harness.make_pattern(args.pattern, cfg)
    spots = harness.export_laser_pattern(pattern, cfg.laser, args.out, args.csv, cfg.motion)
    off = sum(not s.on_canvas for s in spots)
    log.info("%d spots, %d off the canvas", len(spots), off)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relay", description="Robotic artificial eye and P-CR eye-tracker simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON config; omitted keys take their defaults")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", choices=harness.MODES)

    sp = sub.add_parser("config", help="print the default config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_config)

    sp = sub.add_parser("calibrate", help="run the 13-point calibration")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("pattern", help="repeat a pattern for accuracy and precision")
    with_config(sp)
    sp.add_argument("--name", required=True, choices=harness.PATTERNS)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pattern)

    sp = sub.add_parser("experiment", help="artificial-saccade experiment")
    with_config(sp)
    sp.add_argument("--participants", type=int)
    sp.add_argument("--saccades", type=int, help="saccades per participant and condition")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--no-samples", action="store_true", help="skip the per-cell sample logs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("analyze", help="tables and statistics from run directories")
    sp.add_argument("--run", required=True)
    sp.add_argument("--report", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("laser", help="planned vs simulated laser pattern")
    with_config(sp)
    sp.add_argument("--pattern", required=True, choices=harness.PATTERNS)
    sp.add_argument("--out", required=True, help="SVG path")
    sp.add_argument("--csv", help="spot table (default: next to the SVG)")
    sp.set_defaults(func=cmd_laser)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that is an input error here
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (harness.ConfigError, harness.RunNotFound, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"relay: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CalibrationFailed, harness.InfeasibleStep, RuntimeError, OSError) as exc:
        print(f"relay: simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
