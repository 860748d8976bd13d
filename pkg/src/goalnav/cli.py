"""Command line entry point: ``goalnav run`` for batches, ``goalnav generate`` for scenario sets."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import DETECTORS, EXIT_CONFIG, SCORERS, BatchConfig, run_batch
from .metrics import format_summary
from .sim.scenario import write_procedural_set


def _on_off(v: str) -> bool:
    v = v.lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap = argparse.ArgumentParser(prog="goalnav", description="Multi-agent object-goal navigation in a voxel world.",
                                 parents=[common])
    sub = ap.add_subparsers(dest="command")

    d = BatchConfig()
    run = sub.add_parser("run", help="run a batch of episodes", parents=[common])
    run.add_argument("--scenario-dir", default=None, help="directory of scenario JSON files (default: procedural set)")
    run.add_argument("--n-scenarios", type=int, default=d.n_scenarios, help="size of the procedural set")
    run.add_argument("--agents", type=int, default=d.agents)
    run.add_argument("--budget", type=int, default=d.budget, help="steps per subtask")
    run.add_argument("--scorer", choices=SCORERS, default=d.scorer)
    run.add_argument("--detector", choices=DETECTORS, default=d.detector)
    run.add_argument("--scorer-addr", default=None, help="host:port of an external perception server")
    run.add_argument("--w", type=float, default=d.w, help="weight of the value map in the frontier utility")
    run.add_argument("--beta", type=float, default=d.beta, help="UCB exploration coefficient")
    run.add_argument("--tau-det", type=float, default=d.tau_det, help="detection confidence threshold")
    run.add_argument("--n-confirm", type=int, default=d.n_confirm, help="consecutive detections before a goal is committed")
    run.add_argument("--seed", type=int, default=d.seed)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--dump-maps", action="store_true", help="write per-round map PGMs under OUT_DIR/maps")
    run.add_argument("--value-map", type=_on_off, default=True, metavar="{on,off}")
    run.add_argument("--vlm-reasoning", type=_on_off, default=True, metavar="{on,off}")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--json", action="store_true", help="print the summary as JSON")

    gen = sub.add_parser("generate", help="write a seeded procedural scenario set", parents=[common])
    gen.add_argument("out_dir")
    gen.add_argument("-n", type=int, default=20)
    gen.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate":
        for p in write_procedural_set(args.out_dir, args.n, args.seed):
            print(p)
        return 0
    if args.command != "run":
        ap.print_help()
        return EXIT_CONFIG
    try:
        cfg = BatchConfig(
            scenario_dir=args.scenario_dir, n_scenarios=args.n_scenarios, agents=args.agents, budget=args.budget,
            scorer=args.scorer, detector=args.detector, w=args.w, beta=args.beta, tau_det=args.tau_det,
            n_confirm=args.n_confirm, seed=args.seed, out_dir=args.out_dir, dump_maps=args.dump_maps,
            value_map=args.value_map, vlm_reasoning=args.vlm_reasoning, workers=args.workers,
            scorer_addr=args.scorer_addr,
        )
        result = run_batch(cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"goalnav: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.json:
        print(json.dumps(result.summary, indent=1, sort_keys=True))
    else:
        print(format_summary(result.summary))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
