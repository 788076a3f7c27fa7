"""``citykpi`` command line.

Each subcommand reads its inputs, writes its outputs into ``--out`` and
finishes by writing ``manifest.json`` there: the command line, digests of
every input and output, the root seed, the tool version and the wall-clock
duration. Outputs depend only on the inputs and the seed, so a rerun of the
recorded command reproduces them byte for byte.

Exit status: 0 success, 2 configuration error, 3 data error, 4 validation
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, cellsim, config, distfit, orchestrator, surrogate, urban, validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VALIDATION = 4

MANIFEST = "manifest.json"

log = logging.getLogger("citykpi")


class DataError(Exception):
    pass


CONFIG_ERRORS = (
    config.ConfigError, distfit.ConfigurationError, surrogate.ConfigurationError,
    orchestrator.ConfigurationError,
)
DATA_ERRORS = (
    DataError, surrogate.StructureError, surrogate.ConditioningError, orchestrator.StructureError,
    distfit.InsufficientDataError, OSError, ValueError, KeyError,
)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config_sha256: str | None
    seed: int | None
    version: str
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path relative to --out -> sha256
    env_overrides: dict = field(default_factory=dict)
    duration_s: float = 0.0

    def write(self, out_dir):
        """Atomic write: a temporary file in ``out_dir`` renamed into place."""
        out = Path(out_dir)
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=out)
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(asdict(self), fh, indent=1, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, out / MANIFEST)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return out / MANIFEST


class _Run:
    """Bookkeeping for one command invocation."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.cfg = None
        self.config_digest = None
        self.overrides = {}
        self.seed = None
        self.started = time.perf_counter()

    def input(self, path):
        self.inputs[str(path)] = sha256_file(path)
        return path

    def load_config(self, required=True):
        if self.args.config is None:
            if required:
                raise config.ConfigError("--config is required for this command")
            self.cfg = config.parse("")
        else:
            self.cfg, raw, overrides = config.load(self.args.config)
            self.config_digest = hashlib.sha256(raw).hexdigest()
            self.overrides = {"__".join(k): v for k, v in overrides.items()}
        if getattr(self.args, "seed", None) is not None:
            self.cfg["seed"] = self.args.seed
        self.seed = self.cfg["seed"]
        return self.cfg

    def finish(self, outputs):
        digests = {}
        for p in sorted({Path(p) for p in outputs}):
            digests[str(p.relative_to(self.out))] = sha256_file(p)
        manifest = RunManifest(
            self.args.command, list(self.args.argv), self.config_digest, self.seed, __version__,
            self.inputs, digests, self.overrides, round(time.perf_counter() - self.started, 6),
        )
        manifest.write(self.out)
        log.info("%s: wrote %d files to %s", self.args.command, len(digests), self.out)
        return manifest


# ---------------------------------------------------------------------------
# commands

def cmd_sweep(args):
    run = _Run(args)
    cfg = run.load_config()
    grid = config.sweep_grid(cfg)
    workers = args.workers or 1
    points = cellsim.run_sweep(grid, cfg["sweep"]["duration"], workers)
    written = cellsim.write_sweep(points, run.out)
    run.finish(written)
    return EXIT_OK


def _sweep_samples(sweep_dir):
    points = cellsim.read_sweep(sweep_dir)
    return [(p.point, cellsim.kpi_samples(p.records)) for p in points if not p.error]


def cmd_fit(args):
    run = _Run(args)
    cfg = run.load_config(required=False)
    sweep = Path(args.sweep)
    for name in sorted(os.listdir(sweep)):
        if name.endswith(".csv"):
            run.input(sweep / name)
    f = cfg["fit"]
    table = distfit.fit_table(_sweep_samples(sweep), f["families"], f["candidates"], f["min_samples"])
    if not table:
        raise DataError("no sweep point had enough samples to fit")
    path = run.out / "table.csv"
    distfit.write_table(table, path)
    run.finish([path])
    return EXIT_OK


def cmd_train(args):
    run = _Run(args)
    cfg = run.load_config(required=False)
    t = dict(cfg["train"])
    for key in ("regressor", "degree", "ridge"):
        if getattr(args, key) is not None:
            t[key] = getattr(args, key)
    table = distfit.read_table(run.input(args.table))
    models = surrogate.train_all(table, regressor=t["regressor"], degree=t["degree"], ridge=t["ridge"])
    path = run.out / "models.json"
    surrogate.save_models(models, path)
    run.finish([path])
    return EXIT_OK


def _intervals(cfg, scenario):
    return urban.simulate_activity(scenario.sites, scenario.entities, scenario.horizon, cfg["city"]["hysteresis"])


def cmd_urban(args):
    run = _Run(args)
    cfg = run.load_config()
    scenario = config.scenario(cfg)
    intervals = _intervals(cfg, scenario)
    path = run.out / "intervals.csv"
    urban.write_intervals(intervals, path)
    stats = urban.validate_activity(intervals) if intervals else {"descriptive": {}, "pass": True}
    stats["coverage_gap_s"] = urban.coverage_gap_time(scenario.sites, scenario.entities, scenario.horizon)
    stats_path = run.out / "activity.json"
    _write_json(stats_path, stats)
    run.finish([path, stats_path])
    return EXIT_OK


def _city_inputs(run, args):
    cfg = run.load_config()
    scenario = config.scenario(cfg)
    models = surrogate.load_models(run.input(args.models))
    if args.intervals is not None:
        intervals = urban.read_intervals(run.input(args.intervals))
    else:
        intervals = _intervals(cfg, scenario)
    return scenario, models, intervals


def _write_city(city_run, out):
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "packets.csv"
    city_run.log.write_csv(log_path)
    return [log_path] + list(city_run.report.write(out))


def cmd_run(args):
    run = _Run(args)
    scenario, models, intervals = _city_inputs(run, args)
    result = orchestrator.run_city(scenario, models, intervals)
    run.finish(_write_city(result, run.out))
    return EXIT_OK


def cmd_whatif(args):
    run = _Run(args)
    scenario, models, intervals = _city_inputs(run, args)
    overlay, _ = config.load_overlay(run.input(args.overlay))
    result = orchestrator.whatif(scenario, overlay, models, intervals)
    written = _write_city(result["baseline"], run.out / "baseline")
    written += _write_city(result["injected"], run.out / "injected")
    deltas = run.out / "deltas.json"
    _write_json(deltas, {"cells": result["cells"], "summary": result["summary"]})
    run.finish(written + [deltas])
    return EXIT_OK


def cmd_validate(args):
    run = _Run(args)
    cfg = run.load_config()
    v = cfg["validate"]
    if args.points is not None:
        points = _read_points(run.input(args.points))
    else:
        points = v["points"]
    tol = validate.Tolerances(
        args.tolerance_ks if args.tolerance_ks is not None else v["tolerance_ks"],
        args.tolerance_mean if args.tolerance_mean is not None else v["tolerance_mean"],
    )
    models = surrogate.load_models(run.input(args.models))
    sim = validate.SimConfig(config.base_conditions(cfg), v["duration"], v["replications"], cfg["seed"])
    references = None
    if args.reference:
        if len(points) != 1:
            raise config.ConfigError("--reference needs exactly one validation point", "validate.points")
        references = {0: validate.samples_from_packet_log(run.input(args.reference))}
    report = validate.cross_validate(points, models, sim, v["samples"], tol, references, cfg["seed"])
    written = report.write(run.out)
    run.finish(written)
    for e in report.entries:
        if not e.passed:
            log.warning("validation failed at %s %s: ks=%.4f mean_error=%.4f %s", e.point, e.kpi,
                        e.ks_distance, e.mean_error, e.error or "")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _read_points(path):
    import yaml

    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if isinstance(doc, dict):
        doc = doc.get("points")
    if not isinstance(doc, list) or not all(isinstance(p, dict) for p in doc):
        raise config.ConfigError("points file must hold a list of {axis: value} mappings", str(path))
    return doc


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(orchestrator._jsonable(obj), fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# argument parsing

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario YAML file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="citykpi", description="City-scale 5G KPI estimation pipeline.")
    p.add_argument("--version", action="version", version=f"citykpi {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", parents=[common], help="run the detailed simulator over a condition grid")
    s.add_argument("--workers", type=int, help="parallel grid workers (default 1)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit", parents=[common], help="fit KPI distributions to a sweep dataset")
    s.add_argument("--sweep", required=True, help="sweep output directory")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("train", parents=[common], help="train surrogate models on a distribution table")
    s.add_argument("--table", required=True, help="table.csv from `fit`")
    s.add_argument("--regressor", choices=[r.value for r in surrogate.Regressor])
    s.add_argument("--degree", type=int)
    s.add_argument("--ridge", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("urban", parents=[common], help="compute per-cell intervals of constant conditions")
    s.set_defaults(func=cmd_urban)

    for name, func, text in (("run", cmd_run, "generate the city packet log and KPI report"),
                             ("whatif", cmd_whatif, "paired baseline versus injected runs")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--models", required=True, help="models.json from `train`")
        s.add_argument("--intervals", help="intervals.csv from `urban` (computed if omitted)")
        if name == "whatif":
            s.add_argument("--overlay", required=True, help="YAML list of injections")
        s.set_defaults(func=func)

    s = sub.add_parser("validate", parents=[common], help="score the surrogate against the detailed simulator")
    s.add_argument("--models", required=True, help="models.json from `train`")
    s.add_argument("--points", help="YAML list of condition points (default: validate.points)")
    s.add_argument("--reference", help="packet-log CSV of measured KPIs for a single point")
    s.add_argument("--tolerance-ks", type=float, dest="tolerance_ks")
    s.add_argument("--tolerance-mean", type=float, dest="tolerance_mean")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"citykpi {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"citykpi {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
