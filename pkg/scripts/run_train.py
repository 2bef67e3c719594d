"""Training run on the synthetic dataset; writes train.csv, model.json and summaries."""

import argparse
import json
from pathlib import Path

from laserslot.harness import ExperimentSpec, run_train, spec_to_document


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Path("results/train"))
    ap.add_argument("--episodes", type=int, default=3000)
    ap.add_argument("--pluggables", type=int, default=4)
    ap.add_argument("--backend", choices=["tabular", "fnn"], default="tabular")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = ExperimentSpec("train", args.pluggables, episodes=args.episodes, seed=args.seed,
                          out_dir=args.out_dir, backend=args.backend)
    res = run_train(spec)
    (spec.out_dir / "spec.json").write_text(json.dumps(spec_to_document(spec), indent=2) + "\n")
    ma = res.moving_avg
    if len(ma) >= 2500:
        print(f"MA200 at 2500: {ma[2499]:.4f} s, at {len(ma)}: {ma[-1]:.4f} s")
    print(json.dumps(res.summary, indent=2))


if __name__ == "__main__":
    main()
