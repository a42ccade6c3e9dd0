"""Command-line interface.

Verbs map to experiment kinds: ``simulate`` (closed beat dynamics),
``envelope`` (analytic branch structure), ``control`` (Krotov runs and
sweeps), ``opensys`` (master-equation robustness, optionally under the
optimized controls) and ``validate`` (cross-oracle checks).  Every verb
takes --config/--out/--seed/--threads; the seed flag overrides the config.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from magnonlink.config import ConfigError, load_config
from magnonlink.pipelines import PipelineError, run_experiment

VERB_TO_KIND = {
    "simulate": "closed",
    "envelope": "envelope",
    "control": "control",
    "opensys": "opensys",
    "validate": "validate",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magnonlink",
        description="Remote magnon-magnon entanglement: simulation, control and noise robustness",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, kind in VERB_TO_KIND.items():
        p = sub.add_parser(verb, help=f"run a {kind!r} experiment")
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--out", default=".", help="output directory (default: cwd)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--threads", type=int, default=1,
            help="worker processes for sweep fan-out (runs are independent)",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    expected = VERB_TO_KIND[args.verb]
    if config.kind != expected:
        print(
            f"config kind {config.kind!r} does not match verb {args.verb!r} "
            f"(expected {expected!r})",
            file=sys.stderr,
        )
        return 2
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    try:
        summary = run_experiment(config, args.out, threads=args.threads)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(_brief(summary), indent=2, default=str))
    if config.kind == "validate" and not summary.get("passed", False):
        return 1
    return 0


def _brief(summary: dict) -> dict:
    out = {k: v for k, v in summary.items() if k not in ("tables",)}
    out["tables"] = summary.get("tables", [])
    return out


if __name__ == "__main__":
    raise SystemExit(main())
