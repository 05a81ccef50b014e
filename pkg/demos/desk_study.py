"""Desk-scale learning study: polar vs Cartesian-rotation observations.

Trains one DrQ agent per (observation kind, seed) with configs/desk.yaml,
evaluates it on 100 held-out single-obstacle worlds and writes, per run,
``<outdir>/<kind>_<seed>/{checkpoint.json,checkpoint.bin,train_log.csv,eval.json}``.
Finished runs (those with an eval.json) are skipped, so the script resumes.

    python3 demos/desk_study.py --outdir artifacts/desk --seeds 0 1 2
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

import torch

from sacnav import config
from sacnav.sac import evaluate, train
from sacnav.scenarios import held_out_worlds, training_curriculum

ROOT = Path(__file__).resolve().parent.parent


def run_one(cfg: config.RunConfig, kind: str, seed: int, outdir: Path, eval_episodes: int) -> dict:
    env = replace(cfg.env, obs=replace(cfg.env.obs, kind=kind))
    run_dir = outdir / f"{kind}_{seed}"
    progress_log = (run_dir / "progress.txt")
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    with progress_log.open("w") as fh:
        def progress(row):
            fh.write(f"{row['episode']} {row['steps']} {row['return']:.2f} {row['outcome']} "
                     f"{row['alpha']:.4f} {time.time() - t0:.0f}\n")
            fh.flush()
        res = train(lambda i: training_curriculum(i, seed), env, cfg.sac, cfg.net, seed, run_dir, progress)
    train_s = time.time() - t0
    ev = evaluate(res.agent, lambda i: held_out_worlds(i, seed), env, eval_episodes)
    out = {"kind": kind, "seed": seed, "episodes": cfg.sac.episodes, "eval_episodes": eval_episodes,
           "success_rate": ev.success_rate, "collision_rate": ev.collision_rate,
           "timeout_rate": ev.timeout_rate, "train_success_last100": res.success_rate(100),
           "train_wall_s": round(train_s), "total_wall_s": round(time.time() - t0)}
    (run_dir / "eval.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.yaml"))
    p.add_argument("--outdir", default=str(ROOT / "artifacts" / "desk"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--kinds", nargs="+", default=["polar", "rotation"])
    p.add_argument("--eval-episodes", type=int, default=100)
    args = p.parse_args(argv)
    torch.set_num_threads(1)
    cfg = config.load(args.config)
    outdir = Path(args.outdir)
    for seed in args.seeds:
        for kind in args.kinds:
            if (outdir / f"{kind}_{seed}" / "eval.json").exists():
                continue
            r = run_one(cfg, kind, seed, outdir, args.eval_episodes)
            print(f"{kind} seed {seed}: success {r['success_rate']:.2f} collision {r['collision_rate']:.2f} "
                  f"timeout {r['timeout_rate']:.2f} ({r['total_wall_s']} s)", flush=True)


if __name__ == "__main__":
    main()
