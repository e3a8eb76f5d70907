"""Command-line interface: synth, label, eval, render."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import Config, ConfigError
from .container import ContainerError, read_emags, write_emags
from .grid_core import GridError, build_canvas
from .postprocess import BuildingError, load_buildings
from .synth import (GroundTruth, Scenario, ScenarioError, buildings_geojson, builtin_scenario_path,
                    builtin_scenarios, generate)

log = logging.getLogger("emagslabel")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3


class InputError(Exception):
    pass


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.name + suffix)


def parse_slices(text: str | None, n: int) -> range:
    if not text:
        return range(n)
    try:
        a, _, b = text.partition("..")
        lo = int(a) if a else 0
        hi = int(b) if b else n - 1
    except ValueError:
        raise InputError(f"bad slice range {text!r}, expected A..B") from None
    if not (0 <= lo <= hi < n):
        raise InputError(f"slice range {lo}..{hi} outside 0..{n - 1}")
    return range(lo, hi + 1)


def cmd_synth(args) -> int:
    src = args.input
    path = Path(src)
    if not path.exists() and src in builtin_scenarios():
        path = Path(str(builtin_scenario_path(src)))
    if not path.exists():
        raise InputError(f"no such scenario: {src}")
    scenario = Scenario.load(path)
    emags, truth = generate(scenario, args.seed)
    out = Path(args.output)
    write_emags(out, emags)
    truth_path = Path(args.truth) if args.truth else _sibling(out, ".truth.jsonl")
    truth.write(truth_path)
    written = [out, truth_path]
    if scenario.buildings:
        bpath = _sibling(out, ".buildings.geojson")
        bpath.write_text(json.dumps(buildings_geojson(scenario), indent=1) + "\n")
        written.append(bpath)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_label(args) -> int:
    from .labels import label_emags, write_labels
    emags = read_emags(args.input)
    config = Config.load(args.config) if args.config else Config()
    buildings = load_buildings(args.buildings) if args.buildings else None
    if buildings is None:
        log.info("no buildings given; building filter disabled")
    result, records = label_emags(emags, config, buildings, jobs=args.jobs)
    out = Path(args.output)
    write_labels(out, records)
    summary = result.summary()
    summary["records"] = len(records)
    _sibling(out, ".summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    from .labels import read_labels
    try:
        labels = read_labels(args.input)
        truth = GroundTruth.read(args.truth)
    except (ValueError, KeyError) as exc:
        raise InputError(str(exc)) from None
    report = evaluate(labels, truth)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_render(args) -> int:
    from .labels import read_labels
    from .render import render_slices
    emags = read_emags(args.input)
    slices = parse_slices(args.slices, len(emags))
    records = None
    if args.labels:
        try:
            records = read_labels(args.labels)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    paths = render_slices(build_canvas(emags), records, slices, out, args.scale)
    print(f"{len(paths)} images written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emagslabel", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic scenario")
    s.add_argument("--input", required=True, help="scenario JSON file or built-in scenario name")
    s.add_argument("--output", required=True, help="EMAGS container to write")
    s.add_argument("--truth", help="ground truth JSON-lines (default: <output>.truth.jsonl)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("label", help="label an EMAGS container")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True, help="label JSON-lines to write")
    s.add_argument("--buildings", help="GeoJSON building polygons in the EMAGS frame")
    s.add_argument("--config", help="JSON file overriding pipeline thresholds")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("eval", help="score labels against ground truth")
    s.add_argument("--input", required=True, help="label JSON-lines")
    s.add_argument("--truth", required=True, help="ground truth JSON-lines")
    s.add_argument("--output", help="also write the report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="write debug images")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True, help="directory for PNG files")
    s.add_argument("--labels")
    s.add_argument("--slices", help="inclusive range A..B")
    s.add_argument("--scale", type=int, default=2)
    s.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ContainerError, ScenarioError, ConfigError, BuildingError, GridError,
            FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
