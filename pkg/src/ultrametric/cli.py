"""Command-line driver: ``ultrametric run|list|schema``."""

from __future__ import annotations

import argparse
import json
import logging
import os
from pathlib import Path
import sys
import tempfile
import time

from .experiments import EXPERIMENTS, SCHEMA, ConfigError, load_config, run_experiment
from .spectral import CapacityError

log = logging.getLogger("ultrametric")

EXIT_OK, EXIT_ASSERT, EXIT_SCHEMA, EXIT_CAPACITY = 0, 1, 2, 3


def _write_json(path: Path, doc: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.config)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot read config %s: %s", path, exc)
        return EXIT_SCHEMA
    try:
        cfg = load_config(data, base_dir=path.parent)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_SCHEMA
    out = Path(args.out if args.out is not None else cfg.output_dir)
    start = time.perf_counter()
    try:
        assertions = run_experiment(cfg, out)
    except CapacityError as exc:
        log.error("capacity guard: %s", exc)
        return EXIT_CAPACITY
    summary = {
        "experiment": cfg.experiment,
        "params": cfg.params_record(),
        "assertions": assertions,
        "wall_time_s": time.perf_counter() - start,
    }
    _write_json(out / "summary.json", summary)
    failed = [a["name"] for a in assertions if not a["pass"]]
    print(f"{cfg.experiment}: {len(assertions) - len(failed)}/{len(assertions)} assertions passed -> {out}")
    for name in failed:
        print(f"  FAIL {name}")
    if failed and args.strict:
        return EXIT_ASSERT
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    names = sorted(EXPERIMENTS)
    if args.json:
        doc = [
            {
                "name": name,
                "required": list(EXPERIMENTS[name].required),
                "emits": list(EXPERIMENTS[name].emits) + ["summary.json"],
                "description": EXPERIMENTS[name].description,
            }
            for name in names
        ]
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    for name in names:
        exp = EXPERIMENTS[name]
        print(f"{name}\n  {exp.description}")
        print(f"  requires: {', '.join(exp.required)}")
        print(f"  emits:    {', '.join(exp.emits + ('summary.json',))}")
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    print(json.dumps(SCHEMA, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ultrametric", description="Batch experiments for p-adic heat kernels and random walks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--strict", action="store_true", help="exit 1 if any assertion fails")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.set_defaults(func=cmd_run)

    lst = sub.add_parser("list", help="list experiments")
    lst.add_argument("--json", action="store_true", help="machine-readable output")
    lst.set_defaults(func=cmd_list)

    sch = sub.add_parser("schema", help="print the config JSON schema")
    sch.set_defaults(func=cmd_schema)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
