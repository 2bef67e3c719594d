"""Request generation and the train / operate / scale experiments.

Every experiment boots in-process agents on loopback sockets that share one
simulation clock, drives them through a ``Controller`` and writes CSV plus a
summary JSON under the output directory. Under the logical clock and fixed
seeds the CSV bytes are reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import allocator
from .agent import AgentServer, WhiteboxConfig, serve
from .cmis import Dataset, SlotStatistics, synthesize_dataset
from .controller import Controller, RequestOutcome
from .core import ConnectivityRequest, FrequencySlot, TransceiverId
from .errors import InvalidTopology, ModelNotFound
from .transceiver import LaserModel, LogicalClock, virtual_clock

log = logging.getLogger(__name__)

DEFAULT_PORT = "Ethernet0"
SCALE_COUNTS = (2, 4, 8, 16)
MA_WINDOW = 200
TRAIN_REFERENCE_PLUGGABLES = 4


@dataclass
class DatasetSpec:
    """Either a synthetic stand-in or a fit document produced by ``parse-logs``."""

    low: float = 3.2
    high: float = 5.5
    std_fraction: float = 0.1
    seed: int = 7
    fit_file: str | None = None

    def build(self) -> Dataset:
        if self.fit_file:
            return load_fit_dataset(self.fit_file)
        return synthesize_dataset(self.low, self.high, self.std_fraction, self.seed)


# The acceptance dataset: 49 means uniform in [3.2, 5.5] s (overall mean near the
# 4.34 s average of the real capture), std 10% of mean.
ACCEPTANCE_DATASET = DatasetSpec()


@dataclass
class ExperimentSpec:
    kind: str = "train"
    pluggable_count: int = 4
    episodes: int = 3000
    requests: int = 500
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    seed: int = 0
    out_dir: Path = Path("results")
    clock: str = "logical"
    backend: str = "tabular"
    epsilon: float | None = None
    model_path: Path | None = None
    counts: tuple[int, ...] = SCALE_COUNTS
    write_feedback_db: bool = True

    def __post_init__(self):
        if self.kind not in ("train", "operate", "scale"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.pluggable_count < 2:
            raise ValueError("pluggable_count must be at least 2")
        self.out_dir = Path(self.out_dir)


def load_fit_dataset(path: str | Path) -> Dataset:
    doc = json.loads(Path(path).read_text())
    slots = sorted(doc["slots"], key=lambda s: s["slot"])
    return Dataset(tuple(
        SlotStatistics(FrequencySlot(s["slot"]), s["mean_s"], s["std_s"], s.get("count", 1))
        for s in slots
    ))


def generate_requests(whiteboxes: Sequence[str], count: int, seed: int = 0,
                      ports: Mapping[str, Sequence[str]] | None = None,
                      first_id: int = 0) -> list[ConnectivityRequest]:
    """``count`` requests over uniformly drawn ordered pairs of distinct whiteboxes."""
    wbs = list(whiteboxes)
    if len(set(wbs)) < 2:
        raise InvalidTopology("at least two distinct whiteboxes are needed")
    rng = np.random.default_rng(seed)

    def port_of(wb):
        return sorted(ports[wb])[0] if ports and wb in ports else DEFAULT_PORT

    out = []
    for i in range(count):
        a, b = rng.choice(len(wbs), size=2, replace=False)
        out.append(ConnectivityRequest(first_id + i,
                                       TransceiverId(wbs[a], port_of(wbs[a])),
                                       TransceiverId(wbs[b], port_of(wbs[b]))))
    return out


def moving_average(values: Sequence[float], window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return x
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


class Topology:
    """N in-process whiteboxes, one port each, sharing one simulation clock."""

    def __init__(self, n: int, dataset: Dataset, seed: int, clock: str = "logical",
                 port: str = DEFAULT_PORT, log_dir: Path | None = None):
        self.clock: LogicalClock = virtual_clock(clock)
        params = dataset.fit()
        seeds = np.random.SeedSequence(seed).spawn(n)
        self.whiteboxes = [f"wb{i}" for i in range(n)]
        self.transceivers = [TransceiverId(wb, port) for wb in self.whiteboxes]
        self.servers: list[AgentServer] = []
        try:
            for wb, s in zip(self.whiteboxes, seeds):
                cfg = WhiteboxConfig(wb, {port: LaserModel.from_fit(params, seed=s)},
                                     clock=self.clock,
                                     log_path=log_dir / f"{wb}.log" if log_dir else None)
                self.servers.append(serve(cfg))
        except OSError as exc:
            self.close()
            raise EnvironmentError(f"cannot bind agent socket: {exc}") from exc

    @property
    def endpoints(self) -> dict[str, tuple[str, int]]:
        return {s.whitebox_id: s.address for s in self.servers}

    def controller(self, model: allocator.QModel, db_path=None, fixed_epsilon=None) -> Controller:
        ctl = Controller(self.endpoints, model, db_path=db_path, clock=self.clock,
                         fixed_epsilon=fixed_epsilon)
        ctl.connect()
        return ctl

    def close(self):
        for s in self.servers:
            s.shutdown()
        self.servers = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _seed(spec_seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([spec_seed, *path]).generate_state(1)[0])


def _num(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    feedback: list[float]
    moving_avg: np.ndarray
    summary: dict
    model: allocator.QModel
    outcomes: list


@dataclass
class OperateResult:
    outcomes: list[RequestOutcome]
    summary: dict
    model: allocator.QModel
    simulated_s: float


def _pair_feedback(o: RequestOutcome) -> float:
    return (o.ingress_time_s + o.egress_time_s) / 2


def train(spec: ExperimentSpec, dataset: Dataset | None = None, tag: str = "train",
          write: bool = True) -> TrainResult:
    dataset = dataset or spec.dataset.build()
    n = spec.pluggable_count
    with Topology(n, dataset, _seed(spec.seed, 1, n), spec.clock) as topo:
        model = allocator.make_model(spec.backend, topo.transceivers, seed=_seed(spec.seed, 2, n))
        db = spec.out_dir / f"feedback_{tag}.jsonl" if write and spec.write_feedback_db else None
        requests = generate_requests(topo.whiteboxes, spec.episodes, _seed(spec.seed, 3, n))
        with topo.controller(model, db) as ctl:
            outcomes = ctl.run_scenario(requests)
    _raise_failures(outcomes)
    feedback = [_pair_feedback(o) for o in outcomes]
    ma = moving_average(feedback)
    summary = {
        "episodes": len(feedback),
        "pluggables": n,
        "backend": spec.backend,
        "final_moving_avg": float(ma[-1]) if len(ma) else None,
        "final_epsilon": allocator.epsilon_at(model.schedule, model.schedule.episode),
        "dataset_mean": dataset.overall_mean,
        "best_slot_mean": dataset.min_mean,
        "best_slot": dataset.best_slot.index,
    }
    if write:
        _write_csv(spec.out_dir / f"{tag}.csv", ["episode", "feedback_s", f"moving_avg_{MA_WINDOW}"],
                   [[i + 1, _num(f), _num(m)] for i, (f, m) in enumerate(zip(feedback, ma))])
        _write_json(spec.out_dir / f"{tag}_summary.json", summary)
        (spec.out_dir / "model.json").write_text(model.dumps())
    return TrainResult(feedback, ma, summary, model, outcomes)


def run_train(spec: ExperimentSpec) -> TrainResult:
    return train(spec)


def _raise_failures(outcomes):
    bad = [o for o in outcomes if isinstance(o, Exception)]
    if bad:
        raise RuntimeError(f"{len(bad)} request(s) failed, first: {bad[0]}")


def operate(spec: ExperimentSpec, model: allocator.QModel, dataset: Dataset | None = None,
            tag: str = "operate", write: bool = True) -> OperateResult:
    dataset = dataset or spec.dataset.build()
    n = spec.pluggable_count
    eps = model.schedule.epsilon_min if spec.epsilon is None else spec.epsilon
    with Topology(n, dataset, _seed(spec.seed, 4, n), spec.clock) as topo:
        db = spec.out_dir / f"feedback_{tag}.jsonl" if write and spec.write_feedback_db else None
        requests = generate_requests(topo.whiteboxes, spec.requests, _seed(spec.seed, 5, n))
        with topo.controller(model, db, fixed_epsilon=eps) as ctl:
            start = topo.clock.sync()
            outcomes = ctl.run_scenario(requests)
            simulated = (topo.clock.sync() - start) / 1e6
    _raise_failures(outcomes)
    per_pluggable: dict[str, list[float]] = {}
    for req, o in zip(requests, outcomes):
        per_pluggable.setdefault(str(req.ingress), []).append(o.ingress_time_s)
        per_pluggable.setdefault(str(req.egress), []).append(o.egress_time_s)
    times = [t for o in outcomes for t in (o.ingress_time_s, o.egress_time_s)]
    mean = float(np.mean(times)) if times else None
    summary = {
        "requests": len(outcomes),
        "pluggables": n,
        "epsilon": eps,
        "per_pluggable_mean": {k: float(np.mean(v)) for k, v in sorted(per_pluggable.items())},
        "operating_mean": mean,
        "mean_latency_s": float(np.mean([o.latency_s for o in outcomes])) if outcomes else None,
        "dataset_mean": dataset.overall_mean,
        "best_slot_mean": dataset.min_mean,
        "improvement_fraction": (1 - mean / dataset.overall_mean) if mean is not None else None,
    }
    if write:
        _write_csv(spec.out_dir / f"{tag}.csv",
                   ["request_id", "slot", "ingress_time_s", "egress_time_s", "latency_s"],
                   [[o.request_id, o.slot.index, _num(o.ingress_time_s), _num(o.egress_time_s),
                     _num(o.latency_s)] for o in outcomes])
        _write_json(spec.out_dir / f"{tag}_summary.json", summary)
    return OperateResult(outcomes, summary, model, simulated)


def load_model(path: str | Path) -> allocator.QModel:
    path = Path(path)
    if not path.is_file():
        raise ModelNotFound(f"model document not found: {path}")
    return allocator.load(path.read_text())


def run_operate(spec: ExperimentSpec) -> OperateResult:
    model = load_model(spec.model_path or spec.out_dir / "model.json")
    return operate(spec, model)


def scale_episodes(base_episodes: int, count: int) -> int:
    """Training length that gives each pluggable the 4-pluggable training budget."""
    return base_episodes * max(count, TRAIN_REFERENCE_PLUGGABLES) // TRAIN_REFERENCE_PLUGGABLES


def run_scale(spec: ExperimentSpec) -> list[dict]:
    dataset = spec.dataset.build()
    rows = []
    for count in spec.counts:
        sub = ExperimentSpec(kind="scale", pluggable_count=count,
                             episodes=scale_episodes(spec.episodes, count), requests=spec.requests,
                             dataset=spec.dataset, seed=spec.seed, out_dir=spec.out_dir / f"p{count}",
                             clock=spec.clock, backend=spec.backend, epsilon=spec.epsilon,
                             write_feedback_db=spec.write_feedback_db)
        t0 = time.perf_counter()
        trained = train(sub, dataset, write=False)
        res = operate(sub, trained.model, dataset, write=False)
        log.info("scale %d pluggables: %.1f s wall", count, time.perf_counter() - t0)
        rows.append({
            "pluggables": count,
            "avg_feedback_s": res.summary["operating_mean"],
            "avg_latency_s": res.summary["mean_latency_s"],
            "wall_time_s": res.simulated_s,
            "max_pair_mean_s": float(np.mean([max(o.ingress_time_s, o.egress_time_s)
                                              for o in res.outcomes])),
        })
    _write_csv(spec.out_dir / "scale.csv",
               ["pluggables", "avg_feedback_s", "avg_latency_s", "wall_time_s"],
               [[r["pluggables"], _num(r["avg_feedback_s"]), _num(r["avg_latency_s"]),
                 _num(r["wall_time_s"])] for r in rows])
    _write_json(spec.out_dir / "scale_summary.json", {
        "counts": list(spec.counts),
        "dataset_mean": dataset.overall_mean,
        "best_slot_mean": dataset.min_mean,
        "feedback_spread": max(r["avg_feedback_s"] for r in rows) / min(r["avg_feedback_s"] for r in rows),
    })
    return rows


def spec_to_document(spec: ExperimentSpec) -> dict:
    doc = asdict(spec)
    doc["out_dir"] = str(spec.out_dir)
    doc["model_path"] = str(spec.model_path) if spec.model_path else None
    doc["counts"] = list(spec.counts)
    return doc
