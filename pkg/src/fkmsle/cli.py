"""Command line entry point: one subcommand per experiment kind.

Exit status is 0 when every declared tolerance is met, 2 when a tolerance
is violated and 1 on any error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import KINDS, ExperimentConfig, run_experiment, write_outputs

log = logging.getLogger("fkmsle")


def _seed_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fkmsle", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
        sp.add_argument("--seed", type=_seed_list, help="seed list, e.g. 1,2,3 or 1-8")
        sp.add_argument("--out", help="output directory (results.json, data/*.csv)")
        sp.add_argument("--threads", type=int, help="worker processes")
        sp.add_argument("--samples", type=int, help="override the sample count")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    d: dict = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
        if d.get("kind", args.kind) != args.kind:
            raise ValueError(f"config kind {d['kind']!r} does not match subcommand {args.kind!r}")
    d["kind"] = args.kind
    if args.seed is not None:
        d["seeds"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    if args.threads is not None:
        d["threads"] = args.threads
    if args.samples is not None:
        d["samples"] = args.samples
    return ExperimentConfig.from_dict(d)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        rec = run_experiment(cfg)
        if cfg.out:
            for p in write_outputs(rec, cfg.out):
                log.info("wrote %s", p)
    except Exception as exc:  # reported as an error exit, never as a tolerance failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(rec.summary(), indent=2, sort_keys=True))
    return 0 if rec.passed else 2


if __name__ == "__main__":
    sys.exit(main())
