"""Command-line surface: scenario generation, mapping runs, report comparison.

Exit codes: 0 success, 1 usage, 2 config, 3 IO, 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .deep import FusionParams, SurrogateParams
from .geometric import RayIlmParams, RayIrmParams
from .grid import env_workers
from .io import read_recording, write_grid
from .pipeline import (
    EvalReport,
    FileSource,
    MappingSession,
    MappingVariant,
    SurrogateSource,
    config_hash,
    evaluate,
    iou_scores,
    classify,
    render,
)
from .simulator import ScenarioConfig, World, generate_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INTERNAL = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="evigrid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a scan recording from a scenario config")
    p_sim.add_argument("config", help="scenario JSON file")
    p_sim.add_argument("out", help="output recording directory")

    p_map = sub.add_parser("map", help="run mapping variants over a recording")
    p_map.add_argument("config", help="run-config JSON file")
    p_map.add_argument(
        "--variant",
        action="append",
        choices=[v.value for v in MappingVariant],
        help="override the config's variant list (repeatable)",
    )
    p_map.add_argument("--unknown-floor", type=float, help="override the unknown-mass floor")
    p_map.add_argument(
        "--gamma-mode", choices=["paper", "exact"], help="override the discount bound mode"
    )
    p_map.add_argument("--workers", type=int, help="override the parallelism degree")

    p_cmp = sub.add_parser("compare", help="print a per-variant mIoU comparison table")
    p_cmp.add_argument("reports", nargs="+", help="report JSON files (at least two)")
    return parser


def cmd_simulate(config_path: str, out_dir: str) -> int:
    path = Path(config_path)
    if not path.is_file():
        print(f"error: config file not found: {path}", file=sys.stderr)
        return EXIT_IO
    try:
        config = ScenarioConfig.load(path)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid scenario config {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    generate_scenario(config, out_dir)
    print(f"recording written to {out_dir}")
    return EXIT_OK


def _load_run_config(path: Path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def cmd_map(config_path: str, args) -> int:
    path = Path(config_path)
    if not path.is_file():
        print(f"error: run config not found: {path}", file=sys.stderr)
        return EXIT_IO
    try:
        raw = _load_run_config(path)
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON in {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        variants = [MappingVariant(v) for v in (args.variant or raw.get("variants", []))]
        if not variants:
            raise ValueError("variant list is empty")
        fusion_cfg = dict(raw.get("fusion", {}))
        if args.unknown_floor is not None:
            fusion_cfg["unknown_floor"] = args.unknown_floor
        if args.gamma_mode is not None:
            fusion_cfg["gamma_bound_mode"] = args.gamma_mode
        fusion = FusionParams(**fusion_cfg)
        ilm = RayIlmParams(**raw.get("ray_ilm", {}))
        irm = RayIrmParams(**raw.get("ray_irm", {}))
        surrogate = SurrogateParams(**raw.get("surrogate", {}))
        workers = args.workers if args.workers is not None else int(raw.get("workers", 1))
        workers = min(max(1, workers), env_workers(workers))
        dump_epochs = bool(raw.get("dump_epochs", False))
        recording_path = Path(raw["recording"])
        out_dir = Path(raw["output"])
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid run config {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if not recording_path.is_dir():
        print(f"error: recording directory not found: {recording_path}", file=sys.stderr)
        return EXIT_IO
    recording = read_recording(recording_path)
    out_dir.mkdir(parents=True, exist_ok=True)

    cfg_hash = config_hash(
        {
            "fusion": fusion.__dict__,
            "ray_ilm": ilm.__dict__,
            "ray_irm": irm.__dict__,
            "surrogate": surrogate.__dict__,
            "recording": str(recording_path),
            "seed": raw.get("seed", 0),
            "variants": [v.value for v in variants],
        }
    )

    if raw.get("prediction_dir"):
        source = FileSource(raw["prediction_dir"])
    else:
        meta_world = recording.meta.get("world")
        source = (
            SurrogateSource(World(meta_world["extent"], meta_world["obstacles"]), surrogate)
            if meta_world
            else None
        )

    ground_truth = recording.ground_truth()
    has_lidar = any(s.sensor_kind == "lidar" for s in recording.scans)
    if has_lidar:
        reference = MappingSession(recording, MappingVariant.RayIlmDempster, fusion, ilm, irm, None, workers)
        for _ in reference.run():
            pass
        reference_map = reference.map
        write_grid(out_dir / "reference.evgr", reference_map)
    elif ground_truth is not None:
        reference_map = ground_truth
    else:
        print("error: recording has neither lidar scans nor ground truth", file=sys.stderr)
        return EXIT_CONFIG
    ref_classes = classify(reference_map.data)

    for variant in variants:
        session = MappingSession(recording, variant, fusion, ilm, irm, source, workers)
        per_epoch = []
        epoch_dir = out_dir / f"{variant.value}_epochs"
        if dump_epochs:
            epoch_dir.mkdir(exist_ok=True)
        for i, grid in enumerate(session.run()):
            per_epoch.append({"epoch": i, **iou_scores(classify(grid.data), ref_classes)})
            if dump_epochs:
                write_grid(epoch_dir / f"epoch_{i:04d}.evgr", grid)
        report = evaluate(session.map, reference_map, variant.value, cfg_hash)
        report.per_epoch = per_epoch
        if ground_truth is not None:
            report.miou_ground_truth = evaluate(session.map, ground_truth).miou
        report.save(out_dir / f"{variant.value}.report.json")
        report.save_csv(out_dir / f"{variant.value}.report.csv")
        write_grid(out_dir / f"{variant.value}.evgr", session.map)
        render(session.map, out_dir / f"{variant.value}.png")
        print(
            f"{variant.value}: free {report.miou['free']:.2f} / "
            f"occupied {report.miou['occupied']:.2f} / unknown {report.miou['unknown']:.2f}"
        )
    return EXIT_OK


def cmd_compare(report_paths: list[str]) -> int:
    if len(report_paths) < 2:
        print("error: compare needs at least two reports", file=sys.stderr)
        return EXIT_USAGE
    reports = []
    for p in report_paths:
        path = Path(p)
        if not path.is_file():
            print(f"error: report not found: {path}", file=sys.stderr)
            return EXIT_IO
        try:
            with open(path) as fh:
                reports.append(EvalReport.from_json(json.load(fh)))
        except (json.JSONDecodeError, ValueError) as exc:
            print(f"error: bad report {path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    header = f"{'ISM used for mapping':<24}{'fr. mIoU':>10}{'oc. mIoU':>10}{'un. mIoU':>10}"
    print(header)
    print("-" * len(header))
    for rep in reports:
        print(
            f"{rep.variant:<24}{rep.miou['free']:>10.2f}"
            f"{rep.miou['occupied']:>10.2f}{rep.miou['unknown']:>10.2f}"
        )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "map":
            return cmd_map(args.config, args)
        if args.command == "compare":
            return cmd_compare(args.reports)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError, IOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as exc:
        print(f"internal invariant breach: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
