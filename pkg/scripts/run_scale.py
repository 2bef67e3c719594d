"""Operating feedback and request latency for several pluggable counts."""

import argparse
from pathlib import Path

from laserslot.harness import SCALE_COUNTS, ExperimentSpec, run_scale


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Path("results/scale"))
    ap.add_argument("--counts", type=lambda s: tuple(int(x) for x in s.split(",")), default=SCALE_COUNTS)
    ap.add_argument("--episodes", type=int, default=3000, help="training episodes at 4 pluggables")
    ap.add_argument("--requests", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = ExperimentSpec("scale", min(args.counts), episodes=args.episodes, requests=args.requests,
                          seed=args.seed, out_dir=args.out_dir, counts=args.counts)
    print("pluggables  feedback_s  latency_s  simulated_s")
    for r in run_scale(spec):
        print(f"{r['pluggables']:>10}  {r['avg_feedback_s']:>10.4f}  {r['avg_latency_s']:>9.4f}  "
              f"{r['wall_time_s']:>11.1f}")


if __name__ == "__main__":
    main()
