"""Command-line entry point: ``wassbary <command> [options]``.

Exit status: 0 success, 2 usage, 3 unreadable or invalid input,
4 numerical failure (or non-convergence with ``--strict``), 5 I/O.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .barycenter import DescentConfig, barycenter
from .errors import ConditioningError, ParseError, WassbaryError
from .estimation import (
    EXPERIMENT_COLUMNS,
    ExperimentDesign,
    default_intensity,
    estimate_population,
    run_consistency_experiment,
    simulate_patterns,
    WarpFamily,
)
from .io import (
    config_from_json,
    load_json,
    load_measure,
    map_to_json,
    measure_to_json,
    save_json,
    write_csv,
    write_grid_csv,
    write_points_csv,
    write_trace_csv,
)
from .measures import Compactum
from .plotting import experiment_figure, render
from .registration import multicoupling
from .scenarios import SCENARIOS, run_scenario

logger = logging.getLogger("wassbary")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class NotConverged(ArithmeticError):
    pass


def _default_threads() -> int:
    env = os.environ.get("WASSBARY_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer WASSBARY_THREADS=%r", env)
    return os.cpu_count() or 1


def _descent_config(args) -> DescentConfig:
    cfg = DescentConfig()
    if args.config and args.command in ("barycenter", "multicouple", "figures"):
        cfg = config_from_json(load_json(args.config))
    overrides = {"threads": args.threads}
    if args.tolerance is not None:
        overrides["tolerance"] = args.tolerance
    if args.max_iters is not None:
        overrides["max_iterations"] = args.max_iters
    if args.tau is not None:
        overrides["step"] = args.tau
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise ParseError(f"invalid descent settings: {exc}") from exc


class _Run:
    """Output directory bookkeeping plus the manifest."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.outputs = []
        self.started = time.perf_counter()
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def manifest(self, cfg, extra=None) -> None:
        cfg_dict = {k: v for k, v in cfg.__dict__.items() if k != "initial"}
        cfg_dict["initial"] = (
            "use-first-input" if cfg.initial is None else measure_to_json(cfg.initial)
        )
        save_json(
            self.out / "manifest.json",
            {
                "command": self.args.command,
                "version": __version__,
                "seed": self.args.seed,
                "config": cfg_dict,
                "options": {
                    k: v for k, v in vars(self.args).items() if k not in ("func",)
                },
                "outputs": self.outputs,
                "wall_time_seconds": time.perf_counter() - self.started,
                **(extra or {}),
            },
            indent=1,
        )


def _check_trace(args, trace) -> None:
    if not trace.converged:
        msg = f"no convergence after {trace.iterations_used} iterations ({trace.stop_reason})"
        if args.strict:
            raise NotConverged(msg)
        logger.warning(msg)


def cmd_barycenter(args) -> int:
    cfg = _descent_config(args)
    inputs = [load_measure(p) for p in args.inputs]
    if args.initial:
        cfg = replace(cfg, initial=load_measure(args.initial))
    run = _Run(args)
    bary, trace, maps = barycenter(inputs, cfg)
    save_json(run.path("barycenter.json"), measure_to_json(bary))
    write_trace_csv(run.path("trace.csv"), trace)
    for i, t in enumerate(maps, 1):
        save_json(run.path(f"map_{i}.json"), map_to_json(t))
    run.manifest(cfg, {"converged": trace.converged, "iterations": trace.iterations_used})
    _check_trace(args, trace)
    return EXIT_OK


def cmd_multicouple(args) -> int:
    cfg = _descent_config(args)
    inputs = [load_measure(p) for p in args.inputs]
    run = _Run(args)
    mc = multicoupling(inputs, cfg)
    save_json(
        run.path("multicoupling.json"),
        {
            "barycenter": measure_to_json(mc.barycenter),
            "maps": [map_to_json(t) for t in mc.maps],
            "pairwise_cost": mc.pairwise_cost,
            "objective": mc.objective,
            "functional": mc.functional,
        },
    )
    write_trace_csv(run.path("trace.csv"), mc.trace)
    run.manifest(cfg, {"converged": mc.trace.converged})
    _check_trace(args, mc.trace)
    return EXIT_OK


_SIM_KEYS = {"n", "intensity", "cells", "bandwidth", "lower", "upper", "max_frequency", "amplitude"}


def cmd_simulate(args) -> int:
    cfg = _descent_config(args)
    opts = {"n": 10, "intensity": 500.0, "cells": None, "bandwidth": None,
            "lower": [0.0], "upper": [1.0], "max_frequency": 2, "amplitude": 0.5}
    if args.config:
        raw = load_json(args.config)
        unknown = set(raw) - _SIM_KEYS
        if unknown:
            raise ParseError(f"unknown simulate keys {sorted(unknown)}", args.config)
        opts.update(raw)
    if args.n is not None:
        opts["n"] = args.n
    if args.intensity is not None:
        opts["intensity"] = args.intensity
    try:
        window = Compactum(np.array(opts["lower"], float), np.array(opts["upper"], float))
        family = WarpFamily(window, int(opts["max_frequency"]), float(opts["amplitude"]))
    except (ValueError, TypeError) as exc:
        raise ParseError(f"invalid simulate settings: {exc}", args.config) from exc
    run = _Run(args)
    truth = default_intensity(window)
    sim = simulate_patterns(truth, family, int(opts["n"]), float(opts["intensity"]), args.seed)
    est = estimate_population(sim.observed, opts["bandwidth"], opts["cells"], cfg)
    for i, (obs, pi) in enumerate(zip(sim.observed, sim.truth), 1):
        write_points_csv(run.path(f"observed_{i}.csv"), obs.points)
        write_points_csv(run.path(f"unwarped_{i}.csv"), pi.points)
        save_json(run.path(f"warp_{i}.json"), map_to_json(sim.warps[i - 1].forward))
        save_json(run.path(f"estimated_map_{i}.json"), map_to_json(est.maps[i - 1]))
    write_grid_csv(run.path("intensity_true.csv"), truth.centers(), truth.values.ravel())
    write_grid_csv(run.path("intensity_estimate.csv"), est.intensity.centers(), est.intensity.values.ravel())
    write_trace_csv(run.path("trace.csv"), est.trace)
    if window.dim == 1:
        curves = [(g.centers()[:, 0], g.values.ravel(), f"smoothed {i}") for i, g in enumerate(est.smoothed[:6], 1)]
        render(
            run.path("intensity.png"), "lines",
            {"curves": curves + [(truth.centers()[:, 0], truth.values.ravel(), "truth")],
             "mean": (est.intensity.centers()[:, 0], est.intensity.values.ravel())},
        )
    run.manifest(cfg, {"simulation": {k: v for k, v in opts.items()}, "bandwidth_used": est.bandwidth})
    _check_trace(args, est.trace)
    return EXIT_OK


_DESIGN_KEYS = {"n_grid", "tau_grid", "replicates", "seed", "cells", "lower", "upper",
                "max_frequency", "amplitude", "probes_per_axis"}


def _design(args) -> ExperimentDesign:
    raw = {"n_grid": [5, 20, 80], "tau_grid": [100, 400, 1600], "replicates": 5}
    if args.config:
        loaded = load_json(args.config)
        unknown = set(loaded) - _DESIGN_KEYS
        if unknown:
            raise ParseError(f"unknown design keys {sorted(unknown)}", args.config)
        raw.update(loaded)
    raw.setdefault("seed", args.seed)
    if "lower" in raw or "upper" in raw:
        raw["window"] = Compactum(
            np.array(raw.pop("lower", [0.0]), float), np.array(raw.pop("upper", [1.0]), float)
        )
    try:
        return ExperimentDesign(**raw)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"invalid design: {exc}", args.config) from exc


def cmd_experiment(args) -> int:
    cfg = _descent_config(args)
    design = _design(args)
    run = _Run(args)
    rows = run_consistency_experiment(design, cfg=cfg)
    write_csv(run.path("results.csv"), EXPERIMENT_COLUMNS, rows)
    save_json(run.path("design.json"), design.to_json(), indent=1)
    experiment_figure(run.path("experiment.png"), rows)
    failed = sum(r["status"] != "ok" for r in rows)
    run.manifest(cfg, {"design": design.to_json(), "failed_rows": failed})
    if failed and args.strict:
        raise NotConverged(f"{failed} replicate rows failed")
    return EXIT_OK


def cmd_figures(args) -> int:
    cfg = _descent_config(args)
    run = _Run(args)
    out, trace = run_scenario(args.scenario, args.seed, cfg)
    for stem, (cols, rows) in out.tables.items():
        write_csv(run.path(f"{stem}.csv"), cols, rows)
    write_trace_csv(run.path("trace.csv"), trace)
    for stem, kind, payload in out.figures:
        render(run.path(f"{stem}.png"), kind, payload)
    save_json(run.path("parameters.json"), out.summary, indent=1)
    run.manifest(cfg, {"scenario": args.scenario, "converged": trace.converged})
    _check_trace(args, trace)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON settings file")
    common.add_argument("--out", metavar="DIR", default="wassbary-out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=_default_threads())
    common.add_argument("--tolerance", type=float, help="stop when the gradient norm is below this")
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("--tau", type=float, help="descent step in [0, 1]")
    common.add_argument("--strict", action="store_true", help="treat non-convergence as failure")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="wassbary", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("barycenter", parents=[common], help="Fréchet mean of measure files")
    p.add_argument("inputs", nargs="+", metavar="MEASURE.json")
    p.add_argument("--initial", metavar="PATH", help="starting measure (default: first input)")
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("multicouple", parents=[common], help="optimal multicoupling")
    p.add_argument("inputs", nargs="+", metavar="MEASURE.json")
    p.set_defaults(func=cmd_multicouple)

    p = sub.add_parser("simulate", parents=[common], help="warped Poisson patterns and estimates")
    p.add_argument("--n", type=int, help="number of patterns")
    p.add_argument("--intensity", type=float, help="expected points per pattern")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", parents=[common], help="consistency experiment")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("figures", parents=[common], help="worked example scenarios")
    p.add_argument("scenario", choices=SCENARIOS)
    p.set_defaults(func=cmd_figures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"wassbary: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConditioningError, NotConverged, ArithmeticError) as exc:
        print(f"wassbary: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WassbaryError as exc:
        print(f"wassbary: invalid input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"wassbary: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
