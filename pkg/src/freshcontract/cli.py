"""``freshcontract`` command line: run, summarize, rerank and oracle spot checks."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .env import ConfigError
from .freshness import TimingModel, aoi_slot_oracle, average_aoi
from .rerank import SimilaritySpec, load_records, search


def _cmd_run(args) -> int:
    return experiments.run_experiment(args.config)


def _cmd_summarize(args) -> int:
    paths = experiments.expand_globs(args.patterns)
    try:
        table = experiments.summarize(paths)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return experiments.EXIT_CONFIG
    print(experiments.format_table(table))
    return experiments.EXIT_OK


def _cmd_rerank(args) -> int:
    try:
        db = load_records(args.db)
        queries = load_records(args.query)
        spec = SimilaritySpec.load(args.spec)
        out = []
        for q in queries:
            ranked = search(q, db, args.k, args.p, spec)
            out.append({"query": q.id,
                        "results": [{"id": r.id, "score": s} for r, s in ranked]})
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return experiments.EXIT_CONFIG
    for line in out:
        print(json.dumps(line))
    return experiments.EXIT_OK


def _cmd_oracle_aoi(args) -> int:
    try:
        timing = TimingModel.from_slot_length(args.t)
        slots = aoi_slot_oracle(timing, args.theta)
        closed = average_aoi(timing, args.theta)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return experiments.EXIT_CONFIG
    print(json.dumps({"theta": args.theta, "t": args.t, "oracle": slots,
                      "closed_form": closed}))
    return experiments.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freshcontract")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("summarize", help="tabulate metrics files")
    p.add_argument("patterns", nargs="+", help="metrics files or glob patterns")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("rerank", help="top-K retrieval then similarity re-ranking")
    p.add_argument("--db", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--spec", required=True, help="JSON similarity weights")
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("oracle", help="reference computations for spot checks")
    osub = p.add_subparsers(dest="oracle", required=True)
    q = osub.add_parser("aoi", help="slot-enumeration average AoI")
    q.add_argument("--theta", type=int, required=True)
    q.add_argument("--t", type=float, required=True)
    q.set_defaults(func=_cmd_oracle_aoi)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return experiments.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
