"""Command-line entry point: ``sataperf stress|sim|replay|calibrate|report``.

Exit status is 0 on success, 1 on an operational failure and 2 on a usage
error.  Every flag can also come from a JSON ``--config`` file keyed by flag
name; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import experiments, presets
from .disk import CalibrationError, DiskError, calibrate_disk
from .profiles import IoProfile, ProfileError, profile_by_name
from .raid import ConfigError, MirrorConfig, MirrorKind, RebuildState, Volume, simulate_array, \
    simulate_volume
from .replay import (BackendError, FireHose, LogSource, ReplayError, TimeSync,
                     external_backend, load_page_params, replay, simulated_backend)
from .replay.logs import DEFAULT_FIELDS
from .report import ReportError, Tabular, consistency_check, fit_scaling, fmt_value, \
    is_appendix_doc, percent_of_best, render
from .report import ResultTable
from .stats import IoStats
from .stress import RealFile, SimVolume, TargetError, prepare_target, run_stress

log = logging.getLogger("sataperf")

DEFAULT_SEED = 0
DEFAULT_FILE_SIZE = 2 ** 30
FORMATS = ("markdown", "csv", "json")


class UsageError(Exception):
    pass


# argument parsing ---------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="JSON file supplying any flag")
    p.add_argument("--format", choices=FORMATS, help="output format (default markdown)")
    p.add_argument("--out", default="-", metavar="PATH", help="output file, '-' for stdout")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="sataperf",
                                     description="SATA disk and RAID1 performance harness")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("stress", parents=[common], help="run an I/O profile against a target")
    p.add_argument("--target", help="file path, or sim:<preset> such as sim:wd-software")
    p.add_argument("--profile", help="profile name (e.g. rand-read-8k-d4) or JSON file/text")
    p.add_argument("--size", type=int, help=f"file size in bytes (default {DEFAULT_FILE_SIZE})")
    p.add_argument("--duration", type=float, help="run length in seconds")
    p.add_argument("--warmup", type=float, help="seconds excluded from statistics")
    p.add_argument("--controller", default="3ware-8506", help="controller preset for sim targets")
    p.add_argument("--state", choices=[s.value for s in RebuildState],
                   default=RebuildState.NORMAL.value, help="rebuild state for sim targets")
    p.add_argument("--buffered", action="store_true",
                   help="allow page-cache I/O on real files (results are not disk rates)")

    p = sub.add_parser("sim", parents=[common], help="simulate tables, scaling or one volume")
    p.add_argument("--table", type=int, choices=experiments.TABLES)
    p.add_argument("--preset", help="table row as vendor-mirror, e.g. wd-software")
    p.add_argument("--appendix", action="store_true", help="controller scaling sweep")
    p.add_argument("--profile", help="simulate one volume under this profile")
    p.add_argument("--disk", default="wd-250gb")
    p.add_argument("--mirror", choices=[k.value for k in MirrorKind], default="none")
    p.add_argument("--state", choices=[s.value for s in RebuildState],
                   default=RebuildState.NORMAL.value)
    p.add_argument("--disks", type=int, help="independent disks on one controller")
    p.add_argument("--controller", help="controller preset name or JSON file")
    p.add_argument("--duration", type=float, help="simulated seconds per run")

    p = sub.add_parser("replay", parents=[common], help="replay web logs against a backend")
    p.add_argument("--log", nargs="+", metavar="FILE", help="W3C extended log files")
    p.add_argument("--mode", choices=("firehose", "timesync"), default="firehose")
    p.add_argument("--inflight", type=int, default=20, help="fire-hose concurrency")
    p.add_argument("--speedup", type=float, default=1.0, help="time-sync pacing factor")
    p.add_argument("--backend", default="sim", help="'sim' or an endpoint template JSON file")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--cv", type=float, help="latency coefficient of variation (sim backend)")
    p.add_argument("--constant-ms", type=float, help="constant latency for every page (sim)")
    p.add_argument("--clock", choices=("virtual", "wall"),
                   help="virtual (default for sim) or wall clock")
    p.add_argument("--time-limit", type=float, help="cut each run off after this many seconds")
    p.add_argument("--fields", help="space separated field list used before any #Fields line")
    p.add_argument("--page-params", metavar="FILE", help="required parameters per page")

    p = sub.add_parser("calibrate", parents=[common], help="fit disk or rebuild parameters")
    p.add_argument("--targets", metavar="FILE", help="JSON with rand_read_iops, "
                   "rand_write_iops, seq_mbps (and optional name, capacity, rpm)")
    p.add_argument("--rebuild", action="store_true",
                   help="fit rebuild shares for --controller from the shipped tables")
    p.add_argument("--controller", default="3ware-8506")

    p = sub.add_parser("report", parents=[common], help="render or check stored results")
    p.add_argument("--table", type=int, choices=experiments.TABLES, help="shipped table")
    p.add_argument("--input", metavar="FILE", help="stored ResultTable JSON")
    p.add_argument("--check", metavar="DOC", help="tableN, appendix, or a JSON file")
    p.add_argument("--fit", metavar="DOC", help="appendix-style rows: appendix or a JSON file")
    p.add_argument("--strict", action="store_true", help="exit 1 if a check is flagged")

    parser.subcommands = sub.choices
    return parser


def _apply_config(parser: argparse.ArgumentParser, args, argv):
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    sub = parser.subcommands[args.command]
    dests = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in dests or dest in ("config", "help"):
            raise UsageError(f"config {path}: unknown flag {key!r} for {args.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# shared helpers ---------------------------------------------------------------


def _emit(args, text: str) -> None:
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        log.info("wrote %s", args.out)


def _fmt(args, default: str = "markdown") -> str:
    return args.format or default


def _blocks(fmt: str, parts: list) -> str:
    """Several tables in one output: JSON object or blank-line separated text."""
    if fmt == "json":
        return json.dumps({k: v.to_dict() for k, v in parts}, indent=2) + "\n"
    return "\n".join(render(v, fmt) for _, v in parts)


def _load_controller(name: str | None):
    if name is None:
        return None
    try:
        return presets.load_controller(name)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _load_disk(name: str):
    try:
        return presets.load_disk(name)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def _profile(text: str | None) -> IoProfile:
    if not text:
        raise UsageError("--profile is required")
    if text.lstrip().startswith("{"):
        return IoProfile.from_json(text)
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        return IoProfile.from_json(path.read_text())
    try:
        return profile_by_name(text)
    except ProfileError as exc:
        raise UsageError(str(exc)) from exc


def _parse_preset(text: str) -> tuple[str, MirrorKind]:
    """``wd-software`` -> ("WD", SOFTWARE); the hardware mirror may be named
    by its controller label."""
    vendor, _, mirror = text.rpartition("-")
    vendors = {v.lower(): v for v in presets.VENDOR_DISKS}
    mirrors = {k.value: k for k in MirrorKind}
    mirrors["3ware"] = MirrorKind.HARDWARE
    if vendor.lower() not in vendors or mirror.lower() not in mirrors:
        raise UsageError(f"preset {text!r} must look like "
                         f"<{'|'.join(sorted(vendors))}>-<{'|'.join(mirrors)}>")
    return vendors[vendor.lower()], mirrors[mirror.lower()]


def _doc(ref: str) -> dict:
    """A bundled golden document by name, or a JSON file."""
    path = Path(ref)
    if path.exists():
        return json.loads(path.read_text())
    try:
        return presets.golden(Path(ref).stem)
    except FileNotFoundError as exc:
        raise UsageError(f"{ref!r} is neither a file nor a shipped document") from exc


# subcommands --------------------------------------------------------------------


def cmd_sim(args) -> int:
    chosen = [x for x in ("table", "appendix", "profile") if getattr(args, x)]
    if len(chosen) != 1:
        raise UsageError("sim needs exactly one of --table, --appendix, --profile")
    fmt = _fmt(args)
    if args.table:
        return _sim_table(args, fmt)
    if args.appendix:
        return _sim_appendix(args, fmt)
    profile = _profile(args.profile)
    if args.duration:
        profile = profile.replace(duration=args.duration)
    disk = _load_disk(args.disk)
    controller = _load_controller(args.controller)
    if args.disks:
        if controller is None:
            raise UsageError("--disks needs --controller")
        stats = simulate_array(controller, args.disks, disk, profile, args.seed)
    else:
        mirror = MirrorConfig(MirrorKind(args.mirror), RebuildState(args.state))
        stats = simulate_volume(profile, disk, mirror, controller, args.seed)
    _emit(args, render(stats, fmt))
    return 0


def _sim_table(args, fmt: str) -> int:
    controller = _load_controller(args.controller)
    duration = args.duration or experiments.TABLE_DURATION_S
    table = experiments.simulate_table(args.table, duration=duration, seed=args.seed,
                                       controller=controller)
    pct = percent_of_best(table)
    if args.preset:
        vendor, kind = _parse_preset(args.preset)
        keep = lambda t: dataclasses.replace(  # noqa: E731
            t, rows=[r for r in t.rows if r.vendor == vendor and r.mirror is kind])
        table, pct = keep(table), keep(pct)
    _emit(args, _blocks(fmt, [("values", table), ("percent_of_best", pct)]))
    return 0


def _appendix_table(rows: list[dict]) -> Tabular:
    return Tabular(["Controller", "Pattern", "Op", "Disks", "Block", "MBps", "IOps"],
                   [[r["controller"], r["pattern"], r["op"], str(r["disks"]),
                     str(r["block_size"]), fmt_value(round(r["mbps"], 1)),
                     fmt_value(round(r["iops"], 1))] for r in rows])


def _sim_appendix(args, fmt: str) -> int:
    names = [args.controller] if args.controller else list(presets.CONTROLLERS)
    rows = []
    for name in names:
        rows.extend(experiments.simulate_appendix(_load_controller(name),
                                                  duration=args.duration or 60.0,
                                                  seed=args.seed))
    if fmt == "json":
        doc = {"label": "Simulated controller scaling", "queue_depth": 4, "rows": rows}
        _emit(args, json.dumps(doc, indent=2) + "\n")
    else:
        _emit(args, render(_appendix_table(rows), fmt))
    return 0


def _stress_target(args):
    spec = args.target
    if not spec:
        raise UsageError("--target is required")
    if spec.startswith("sim:"):
        name = spec[4:]
        controller = _load_controller(args.controller)
        if name in presets.DISKS:
            disk, kind = _load_disk(name), MirrorKind.NONE
        else:
            vendor, kind = _parse_preset(name)
            disk = _load_disk(presets.VENDOR_DISKS[vendor])
        mirror = MirrorConfig(kind, RebuildState(args.state))
        return SimVolume(Volume(disk, mirror, controller))
    path = Path(spec)
    size = args.size or (path.stat().st_size if path.exists() and path.stat().st_size
                         else DEFAULT_FILE_SIZE)
    return RealFile(path, size, direct_io=not args.buffered)


def cmd_stress(args) -> int:
    target = _stress_target(args)
    profile = _profile(args.profile)
    if args.duration:
        profile = profile.replace(duration=args.duration)
    if isinstance(target, RealFile):
        profile = profile.replace(region_size=min(profile.region_size, target.size))
        ready = prepare_target(target)
        log.info("target ready: %s", ready.to_dict())
        if target.direct_io and not ready.direct_io_supported:
            raise TargetError(f"{target.path}: direct I/O unsupported on this file system; "
                              "pass --buffered to run through the page cache")
    stats = run_stress(target, profile, args.seed, warmup=args.warmup)
    _emit(args, render(stats, _fmt(args)))
    return 0


def cmd_replay(args) -> int:
    if not args.log:
        raise UsageError("--log needs at least one file")
    fields = args.fields.split() if args.fields else DEFAULT_FIELDS
    required = load_page_params(args.page_params) if args.page_params else None
    sources = [LogSource(p, fields, required) for p in args.log]
    names = [s.name for s in sources]
    for i, s in enumerate(sources):
        if names.count(s.name) > 1:
            s.name = f"{s.name}#{i}"
    mode = FireHose(args.inflight) if args.mode == "firehose" else TimeSync(args.speedup)
    if args.backend == "sim":
        if args.constant_ms is not None:
            backend = simulated_backend(args.constant_ms, constant=True, seed=args.seed)
        elif args.cv is not None:
            backend = simulated_backend(cv=args.cv, seed=args.seed)
        else:
            backend = simulated_backend(seed=args.seed)
    else:
        backend = external_backend(args.backend)
    result = replay(sources, mode, backend, args.runs, clock=args.clock,
                    time_limit=args.time_limit)
    fmt = _fmt(args)
    if fmt == "json":
        _emit(args, json.dumps(result.to_dict(), indent=2) + "\n")
    else:
        summary = Tabular(["Field", "Value"],
                          [[k, fmt_value(v)] for k, v in result.total.to_dict().items()])
        _emit(args, _blocks(fmt, [("summary", summary), ("servers", result.server_table()),
                                  ("pages", result.page_table())]))
    return 0


def cmd_calibrate(args) -> int:
    if bool(args.targets) == bool(args.rebuild):
        raise UsageError("calibrate needs exactly one of --targets, --rebuild")
    if args.targets:
        doc = json.loads(Path(args.targets).read_text())
        missing = [k for k in ("rand_read_iops", "rand_write_iops", "seq_mbps") if k not in doc]
        if missing:
            raise UsageError(f"targets file lacks {', '.join(missing)}")
        extra = {k: doc[k] for k in ("name", "capacity", "rpm", "cache_size") if k in doc}
        params = calibrate_disk(doc["rand_read_iops"], doc["rand_write_iops"], doc["seq_mbps"],
                                **extra)
        _emit(args, params.to_json())
        return 0
    controller = _load_controller(args.controller)
    models = experiments.fit_rebuild_models(controller)
    fitted = dataclasses.replace(controller, rebuild=models)
    _emit(args, fitted.to_json())
    return 0


def _fit_rows(doc: dict) -> Tabular:
    combos = []
    for r in doc["rows"]:
        key = (r["controller"], r["pattern"], r["op"])
        if key not in combos:
            combos.append(key)
    rows = []
    for controller, pattern, op in combos:
        metric = "iops" if pattern == "random" else "mbps"
        points = [(r["disks"], float(r[metric])) for r in doc["rows"]
                  if (r["controller"], r["pattern"], r["op"]) == (controller, pattern, op)]
        if len(points) < 3:
            continue
        fit = fit_scaling(points)
        rows.append([controller, pattern, op, metric] +
                    [fmt_value(v) for v in (fit.slope, fit.intercept, round(fit.r_squared, 4),
                                            fit.saturation_point, fit.plateau)])
    return Tabular(["Controller", "Pattern", "Op", "Metric", "Slope", "Intercept", "R2",
                    "Saturation", "Plateau"], rows)


def cmd_report(args) -> int:
    chosen = [x for x in ("table", "input", "check", "fit") if getattr(args, x)]
    if len(chosen) != 1:
        raise UsageError("report needs exactly one of --table, --input, --check, --fit")
    fmt = _fmt(args)
    if args.check:
        doc = _doc(args.check)
        findings = consistency_check(doc)
        _emit(args, render(findings, fmt))
        return 1 if args.strict and any(f.flagged for f in findings) else 0
    if args.fit:
        doc = _doc(args.fit)
        if not is_appendix_doc(doc):
            raise UsageError("--fit needs appendix-style rows (controller, pattern, op, disks)")
        _emit(args, render(_fit_rows(doc), fmt))
        return 0
    if args.table:
        table = experiments.reference_table(args.table)
    else:
        doc = json.loads(Path(args.input).read_text())
        if "ops_completed" in doc:
            _emit(args, render(IoStats.from_dict(doc), fmt))
            return 0
        table = ResultTable.from_dict(doc.get("values", doc))
    _emit(args, _blocks(fmt, [("values", table), ("percent_of_best", percent_of_best(table))]))
    return 0


COMMANDS = {"stress": cmd_stress, "sim": cmd_sim, "replay": cmd_replay,
            "calibrate": cmd_calibrate, "report": cmd_report}

OPERATIONAL = (OSError, ProfileError, DiskError, CalibrationError, ConfigError, ReplayError,
               BackendError, ReportError, ValueError, KeyError)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        args = _apply_config(parser, args, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sataperf: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.subcommands[args.command].print_usage(sys.stderr)
        print(f"sataperf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OPERATIONAL as exc:
        print(f"sataperf {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
