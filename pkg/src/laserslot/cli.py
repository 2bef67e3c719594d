"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import allocator, cmis, harness
from .agent import load_config, serve_forever
from .core import slot_to_frequency


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _clock(text: str) -> str:
    if text == "logical":
        return text
    if text.startswith("scaled:"):
        try:
            if float(text.split(":", 1)[1]) > 0:
                return text
        except ValueError:
            pass
    raise argparse.ArgumentTypeError("expected 'logical' or 'scaled:<factor>' with factor > 0")


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="base seed (default 0)")
    p.add_argument("--out-dir", type=Path, default=d(Path("results")), help="output directory")
    p.add_argument("--clock", type=_clock, default=d("logical"), help="logical | scaled:<factor>")


def _dataset_args(p):
    p.add_argument("--dataset", help="fit JSON from parse-logs/synth-dataset (default: synthetic)")
    p.add_argument("--low", type=float, default=3.2)
    p.add_argument("--high", type=float, default=5.5)
    p.add_argument("--std-fraction", type=float, default=0.1)
    p.add_argument("--dataset-seed", type=int, default=7)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="laserslot", description="Laser frequency slot allocation testbed")
    _common(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, **kw):
        p = sub.add_parser(name, **kw)
        _common(p, suppress=True)
        return p

    p = add("parse-logs", help="CMIS syslog -> per-slot stats CSV and log-normal fit JSON")
    p.add_argument("file", help="syslog file, or - for standard input")
    p.add_argument("--augment-copies", type=int, default=0)
    p.add_argument("--noise-fraction", type=float, default=0.05)

    p = add("synth-dataset", help="write a synthetic per-slot dataset")
    p.add_argument("--low", type=float, default=3.2)
    p.add_argument("--high", type=float, default=5.5)
    p.add_argument("--std-fraction", type=float, default=0.1)
    p.add_argument("--dataset-seed", type=int, default=7)

    p = add("train", help="training run (training-curve CSV)")
    p.add_argument("--episodes", type=int, default=3000)
    p.add_argument("--pluggables", type=int, default=4)
    p.add_argument("--backend", choices=["tabular", "fnn"], default="tabular")
    _dataset_args(p)

    p = add("operate", help="operating run with a trained model")
    p.add_argument("--model", type=Path, help="model document (default <out-dir>/model.json)")
    p.add_argument("--requests", type=int, default=500)
    p.add_argument("--pluggables", type=int, default=2)
    p.add_argument("--epsilon", type=float)
    _dataset_args(p)

    p = add("scale", help="train+operate for several pluggable counts")
    p.add_argument("--counts", default="2,4,8,16")
    p.add_argument("--episodes", type=int, default=3000)
    p.add_argument("--requests", type=int, default=500)
    p.add_argument("--backend", choices=["tabular", "fnn"], default="tabular")
    _dataset_args(p)

    p = add("agent", help="whitebox agent")
    asub = p.add_subparsers(dest="agent_command", required=True, parser_class=_Parser)
    s = asub.add_parser("serve", help="run a netconf-lite agent from a JSON config")
    s.add_argument("config", type=Path)

    p = add("model", help="inspect model documents")
    msub = p.add_subparsers(dest="model_command", required=True, parser_class=_Parser)
    s = msub.add_parser("show", help="print a model summary")
    s.add_argument("file", type=Path)
    return parser


def _dataset_spec(args) -> harness.DatasetSpec:
    return harness.DatasetSpec(args.low, args.high, args.std_fraction, args.dataset_seed, args.dataset)


def _write_dataset(out: Path, stats) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stats = list(stats)
    (out / "slot_stats.csv").write_text(cmis.stats_to_csv(stats))
    (out / "fit.json").write_text(cmis.dump_fit(stats))


def cmd_parse_logs(args) -> int:
    if args.file == "-":
        lines = sys.stdin.read().splitlines()
    else:
        with open(args.file, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    pairing = cmis.pair_events(cmis.parse_log(lines))
    data = cmis.augment(pairing.measurements, args.augment_copies, args.noise_fraction, args.seed)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "measurements.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["port", "slot", "frequency_ghz", "config_time_s", "origin"])
        for m in data:
            w.writerow([m.port, m.slot.index, slot_to_frequency(m.slot), f"{m.config_time_s:.6f}", m.origin.value])
    _write_dataset(out, cmis.aggregate(data).values())
    print(f"{len(pairing.measurements)} measurement(s), {pairing.unmatched} unmatched reinit(s), "
          f"{len(data)} record(s) after augmentation -> {out}")
    for m in pairing.measurements:
        print(f"{m.port}\tslot {m.slot.index}\t{slot_to_frequency(m.slot)} GHz\t{m.config_time_s:.6f} s")
    return 0


def cmd_synth(args) -> int:
    ds = cmis.synthesize_dataset(args.low, args.high, args.std_fraction, args.dataset_seed)
    _write_dataset(args.out_dir, ds.stats)
    print(f"overall mean {ds.overall_mean:.6f} s, minimum {ds.min_mean:.6f} s "
          f"(slot {ds.best_slot.index}) -> {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    spec = harness.ExperimentSpec("train", args.pluggables, episodes=args.episodes,
                                  dataset=_dataset_spec(args), seed=args.seed, out_dir=args.out_dir,
                                  clock=args.clock, backend=args.backend)
    res = harness.run_train(spec)
    print(json.dumps(res.summary, indent=2))
    return 0


def cmd_operate(args) -> int:
    spec = harness.ExperimentSpec("operate", args.pluggables, requests=args.requests,
                                  dataset=_dataset_spec(args), seed=args.seed, out_dir=args.out_dir,
                                  clock=args.clock, epsilon=args.epsilon, model_path=args.model)
    res = harness.run_operate(spec)
    print(json.dumps(res.summary, indent=2))
    return 0


def cmd_scale(args) -> int:
    try:
        counts = tuple(int(c) for c in args.counts.split(","))
    except ValueError:
        raise UsageError(f"bad --counts {args.counts!r}") from None
    spec = harness.ExperimentSpec("scale", min(counts), episodes=args.episodes, requests=args.requests,
                                  dataset=_dataset_spec(args), seed=args.seed, out_dir=args.out_dir,
                                  clock=args.clock, backend=args.backend, counts=counts)
    for row in harness.run_scale(spec):
        print(f"{row['pluggables']:>3} pluggables: feedback {row['avg_feedback_s']:.4f} s, "
              f"latency {row['avg_latency_s']:.4f} s")
    return 0


def cmd_agent(args) -> int:
    config = load_config(args.config, seed=args.seed)

    def ready(server):
        host, port = server.address
        print(f"agent {server.whitebox_id} listening on {host}:{port}", file=sys.stderr, flush=True)

    serve_forever(config, ready)
    return 0


def cmd_model(args) -> int:
    path = args.file
    if not path.is_file():
        raise harness.ModelNotFound(f"model document not found: {path}")
    model = allocator.load(path.read_text())
    sched = model.schedule
    print(f"backend: {model.backend}")
    print(f"episode: {sched.episode} (epsilon {allocator.epsilon_at(sched, sched.episode):.4f})")
    ts = model.transceivers if isinstance(model, allocator.FnnQ) else sorted(model.q)
    for t in ts:
        q = model.q_values(t)
        best = int(q.argmax())
        print(f"{t}: greedy slot {best} ({slot_to_frequency(best)} GHz), q={q[best]:.4f}")
    return 0


COMMANDS = {
    "parse-logs": cmd_parse_logs,
    "synth-dataset": cmd_synth,
    "train": cmd_train,
    "operate": cmd_operate,
    "scale": cmd_scale,
    "agent": cmd_agent,
    "model": cmd_model,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"laserslot: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"laserslot: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
