"""Quickstart: run the classic planners (and a SAC checkpoint if given) on one
benchmark scenario and write SVG plots of the trajectories.

    python3 demos/quickstart.py --scenario C3 --outdir artifacts/quickstart
    python3 demos/quickstart.py --checkpoint artifacts/desk/polar_0/checkpoint
"""

from __future__ import annotations

import argparse
from pathlib import Path

from sacnav.harness import run_benchmark

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--scenario", default="C3", help="C1, C2, C3 or C4")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--checkpoint", help="SAC checkpoint stem (optional)")
    p.add_argument("--outdir", default=str(ROOT / "artifacts" / "quickstart"))
    args = p.parse_args(argv)
    planners = ["dwa", "sp"] + (["sac"] if args.checkpoint else [])
    report, _ = run_benchmark(planners, [args.scenario], range(args.seeds),
                              checkpoint=args.checkpoint, outdir=args.outdir)
    for c in report.cells:
        print(f"{c.planner:>4} {c.scenario}: {c.outcomes}  distance {c.mean_travel_distance_m} m  "
              f"time {c.mean_travel_time_s} s")
    print(f"plots and logs in {args.outdir}/trajectories")


if __name__ == "__main__":
    main()
