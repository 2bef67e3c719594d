"""Train, then run the operating phase with the learned model (epsilon at its floor)."""

import argparse
import json
from pathlib import Path

from laserslot.harness import ExperimentSpec, operate, spec_to_document, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", type=Path, default=Path("results/operate"))
    ap.add_argument("--episodes", type=int, default=3000)
    ap.add_argument("--requests", type=int, default=500)
    ap.add_argument("--pluggables", type=int, default=4)
    ap.add_argument("--backend", choices=["tabular", "fnn"], default="tabular")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = ExperimentSpec("operate", args.pluggables, episodes=args.episodes, requests=args.requests,
                          seed=args.seed, out_dir=args.out_dir, backend=args.backend)
    dataset = spec.dataset.build()
    trained = train(spec, dataset)
    res = operate(spec, trained.model, dataset)
    (spec.out_dir / "spec.json").write_text(json.dumps(spec_to_document(spec), indent=2) + "\n")
    s = res.summary
    print(f"operating mean {s['operating_mean']:.4f} s, dataset mean {s['dataset_mean']:.4f} s, "
          f"best slot {s['best_slot_mean']:.4f} s, improvement {s['improvement_fraction']:.1%}")
    for name, mean in s["per_pluggable_mean"].items():
        print(f"  {name}: {mean:.4f} s")


if __name__ == "__main__":
    main()
