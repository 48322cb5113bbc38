"""Command-line entry point: ``ilbench run | verify | cliff``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .cliff import CliffConfig, build_cliff, with_variant
from .harness import ExperimentConfig, emit_outputs, run_experiment
from .mdp import mdp_to_json, policy_to_json
from .verify import SUITES, format_table, run_suite


def _run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.out:
        config.out_dir = args.out
    curves = run_experiment(config, threads=args.threads)
    out = emit_outputs(curves, config)
    print(f"wrote {out / 'results.csv'}")
    return 0


def _verify(args) -> int:
    results = run_suite(args.suite, seed=args.seed)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def _cliff(args) -> int:
    cfg = CliffConfig.figure2() if args.preset == "figure2" else CliffConfig.theorem()
    if args.reward_variant:
        cfg = with_variant(cfg, args.reward_variant)
    mdp, expert = build_cliff(cfg)
    payload = {"cliff": asdict(cfg), "mdp": mdp_to_json(mdp), "expert": policy_to_json(expert)}
    Path(args.out).write_text(json.dumps(payload))
    print(f"wrote {args.out} (S={mdp.num_states}, A={mdp.num_actions}, H={mdp.horizon})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write CSV/SVG outputs")
    run.add_argument("--config", required=True, help="experiment config JSON")
    run.add_argument("--threads", type=int, default=None,
                     help="worker processes (default: $ILBENCH_THREADS or 1)")
    run.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    run.set_defaults(func=_run)

    verify = sub.add_parser("verify", help="randomized lemma and bound checks")
    verify.add_argument("--suite", choices=sorted(SUITES), default="all")
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=_verify)

    cliff = sub.add_parser("cliff", help="serialize a cliff MDP preset with its expert")
    cliff.add_argument("--preset", choices=("figure2", "theorem"), required=True)
    cliff.add_argument("--reward-variant", choices=("R1", "R_E_only"), default=None)
    cliff.add_argument("--out", required=True)
    cliff.set_defaults(func=_cliff)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
