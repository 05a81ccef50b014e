"""Command-line entry point: ``sacnav {train,evaluate,benchmark,render,gradcheck}``.

Exit codes: 0 success, 1 usage or config error, 2 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import config as cfgmod
from .scenarios import SUITE, held_out_worlds, training_curriculum

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list:
    return [s for s in (p.strip() for p in text.split(",")) if s]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sacnav", description="SAC local planner on polar costmaps: training and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, outdir=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        if outdir:
            sp.add_argument("--outdir", help="overrides the config outdir")

    t = sub.add_parser("train", help="train a SAC agent on the single-obstacle curriculum")
    common(t)
    t.add_argument("--episodes", type=int, help="training episodes")

    e = sub.add_parser("evaluate", help="deterministic rollouts of a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True, help="checkpoint stem (or its .json)")
    e.add_argument("--episodes", type=int, help="evaluation episodes")
    e.add_argument("--scenario", default=None,
                   help="held_out | training | one of C1..C4 (default: config evaluate.worlds)")

    b = sub.add_parser("benchmark", help="run planners on the C1-C4 suite")
    common(b)
    b.add_argument("--planner", type=_csv_list, help="comma list of sac,dwa,sp")
    b.add_argument("--scenario", type=_csv_list, help="comma list of scenario names")
    b.add_argument("--episodes", type=int, help="runs per cell (seeds seed..seed+n-1)")
    b.add_argument("--checkpoint", help="SAC checkpoint stem")

    r = sub.add_parser("render", help="SVG plot of a trajectory CSV")
    r.add_argument("log", help="trajectory CSV written by benchmark")
    r.add_argument("--scenario", required=True, help="scenario name, e.g. C3")
    r.add_argument("--seed", type=int, default=0, help="scenario seed")
    r.add_argument("--outdir", help="where to write the SVG (default: next to the log)")
    r.add_argument("--config")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    return p


def _load_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "outdir", None):
        cfg.outdir = args.outdir
    return cfg


def cmd_train(args) -> int:
    from .sac import train

    cfg = _load_config(args)
    sac = cfg.sac if args.episodes is None else replace(cfg.sac, episodes=args.episodes)
    seed = cfg.seed

    def progress(row):
        if row["episode"] % 50 == 0 or row["episode"] == sac.episodes - 1:
            print(f"episode {row['episode']:5d} steps {row['steps']:3d} return {row['return']:8.2f} "
                  f"{row['outcome']}", flush=True)

    res = train(lambda i: training_curriculum(i, seed), cfg.env, sac, cfg.net, seed, cfg.outdir, progress)
    print(f"checkpoint: {Path(cfg.outdir) / 'checkpoint'}.json")
    print(f"train success (last 100): {res.success_rate(100):.3f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .harness import load_sac_policy
    from .sac import SacAgent, evaluate

    cfg = _load_config(args)
    try:
        policy, obs = load_sac_policy(args.checkpoint)
    except FileNotFoundError as e:
        raise UsageError(str(e)) from e
    env = cfg.env if obs is None else replace(cfg.env, obs=obs)
    n = args.episodes if args.episodes is not None else cfg.evaluate.episodes
    which = args.scenario or cfg.evaluate.worlds
    seed = cfg.seed
    if which == "held_out":
        scen = lambda i: held_out_worlds(i, seed)  # noqa: E731
    elif which == "training":
        scen = lambda i: training_curriculum(i, seed)  # noqa: E731
    elif which in SUITE:
        env = replace(env, use_global_plan=True)
        scen = lambda i: SUITE[which](seed + i)  # noqa: E731
    else:
        raise UsageError(f"unknown scenario set {which!r}")
    res = evaluate(policy.agent, scen, env, n)
    out = {"checkpoint": str(args.checkpoint), "scenario": which, "episodes": n, "seed": seed,
           "success_rate": res.success_rate, "collision_rate": res.collision_rate,
           "timeout_rate": res.timeout_rate}
    print(f"success {res.success_rate:.3f} collision {res.collision_rate:.3f} timeout {res.timeout_rate:.3f}")
    if args.outdir:
        Path(args.outdir).mkdir(parents=True, exist_ok=True)
        (Path(args.outdir) / "eval.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .harness import run_benchmark

    cfg = _load_config(args)
    bench = cfg.benchmark
    planners = args.planner if args.planner is not None else bench.planners
    scenarios = args.scenario if args.scenario is not None else bench.scenarios
    if args.episodes is not None:
        seeds = list(range(cfg.seed, cfg.seed + args.episodes))
    else:
        seeds = list(bench.seeds)
    checkpoint = args.checkpoint or bench.checkpoint
    try:
        report, _ = run_benchmark(planners, scenarios, seeds, cfg.env, checkpoint, cfg.outdir,
                                  dwa=cfg.dwa, sp=cfg.sp)
    except ValueError as e:
        raise UsageError(str(e)) from e
    for c in report.cells:
        if c.status != "ok":
            print(f"{c.planner:4s} {c.scenario:4s} {c.status}")
        else:
            print(f"{c.planner:4s} {c.scenario:4s} runs {c.runs:3d} success {c.success_rate:.2f} "
                  f"collision {c.collision_rate:.2f} timeout {c.timeout_rate:.2f}")
    print(f"report: {Path(cfg.outdir) / 'report.json'}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .harness import TrajectoryLog, render_trajectory

    cfg = _load_config(args)
    if args.scenario not in SUITE:
        raise UsageError(f"unknown scenario {args.scenario!r}; expected one of {sorted(SUITE)}")
    path = Path(args.log)
    if not path.exists():
        raise UsageError(f"no such log {path}")
    log = TrajectoryLog.load(path)
    if len(log) == 0:
        raise UsageError(f"{path} has no rows")
    svg = render_trajectory(log, SUITE[args.scenario](args.seed), cfg=cfg.env)
    out = (Path(args.outdir) if args.outdir else path.parent) / (path.stem + ".svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import gradcheck_suite, report

    ok, lines = report(gradcheck_suite(args.seed))
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "benchmark": cmd_benchmark,
            "render": cmd_render, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, UsageError) as e:
        print(f"sacnav {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
