"""Packet SDN controller: slot choice, concurrent endpoint configuration, learning."""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .allocator import QModel, epsilon_at, select_slot
from .cmis import Measurement
from .core import ConnectivityRequest, FeedbackRecord, FrequencySlot, TransceiverId
from .errors import DbWriteError, RequestFailed, RpcError, SessionDown
from .netconf import Session
from .transceiver import LogicalClock

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RequestOutcome:
    request_id: int
    slot: FrequencySlot
    ingress_time_s: float
    egress_time_s: float
    latency_s: float
    episode: int
    wall_s: float = field(default=0.0, compare=False)


class FeedbackDb:
    """Append-only JSON-lines sink; each append is flushed before returning."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._fh = None
        self._lock = threading.Lock()
        self.records: list[dict] = []

    def append(self, record: FeedbackRecord, episode: int, request_id: int) -> dict:
        line = {
            "ts": record.wall_time.isoformat(),
            "whitebox": record.transceiver.whitebox,
            "port": record.transceiver.port,
            "slot": record.slot.index,
            "freq_ghz": record.slot.frequency_ghz,
            "config_time_s": record.config_time_s,
            "episode": episode,
            "request_id": request_id,
        }
        with self._lock:
            self.records.append(line)
            if self.path is None:
                return line
            try:
                if self._fh is None:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    self._fh = open(self.path, "a", encoding="utf-8")
                self._fh.write(json.dumps(line) + "\n")
                self._fh.flush()
            except OSError as exc:
                raise DbWriteError(f"cannot append to {self.path}: {exc}") from exc
        return line

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def feedback_db_append(db: FeedbackDb, record: FeedbackRecord, episode: int, request_id: int) -> dict:
    return db.append(record, episode, request_id)


def read_feedback_db(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def db_measurements(rows: Iterable[dict]) -> list[Measurement]:
    return [Measurement(r["port"], FrequencySlot(r["slot"]), r["config_time_s"]) for r in rows]


class Controller:
    """One netconf-lite session per whitebox; requests are fulfilled one at a time.

    With a shared ``LogicalClock`` the request latency is measured on the
    simulation timeline; without one it is taken as the slower endpoint's
    reported time.
    """

    def __init__(self, endpoints: Mapping[str, tuple[str, int]], model: QModel,
                 db_path: str | Path | None = None, clock: LogicalClock | None = None,
                 persistent_sessions: bool = True, fixed_epsilon: float | None = None):
        self.endpoints = dict(endpoints)
        self.model = model
        self.schedule = model.schedule
        self.db = FeedbackDb(db_path)
        self.clock = clock
        self.persistent = persistent_sessions
        self.fixed_epsilon = fixed_epsilon
        self.sessions: dict[str, Session] = {}
        self.db_errors = 0
        self._pool = ThreadPoolExecutor(max_workers=2, thread_name_prefix="packetctl")

    def connect(self) -> None:
        for wb in self.endpoints:
            self._session(wb)

    def _session(self, whitebox: str) -> Session:
        s = self.sessions.get(whitebox)
        if s is None:
            try:
                host, port = self.endpoints[whitebox]
            except KeyError:
                raise SessionDown(f"no endpoint configured for whitebox {whitebox!r}") from None
            s = self.sessions[whitebox] = Session(host, port)
        return s

    def _drop_session(self, whitebox: str) -> None:
        s = self.sessions.pop(whitebox, None)
        if s is not None:
            s.close()

    def _configure(self, t: TransceiverId, freq: int) -> float:
        return self._session(t.whitebox).edit_config(t.port, freq)

    def epsilon(self) -> float:
        if self.fixed_epsilon is not None:
            return self.fixed_epsilon
        return epsilon_at(self.schedule, self.schedule.episode)

    def fulfill(self, request: ConnectivityRequest) -> RequestOutcome:
        episode = self.schedule.episode
        slot = select_slot(self.model, request.ingress, request.egress, self.epsilon())
        freq = slot.frequency_ghz
        endpoints = (request.ingress, request.egress)
        t0 = self.clock.sync() if self.clock is not None else 0
        wall0 = time.perf_counter()
        futures = [self._pool.submit(self._configure, t, freq) for t in endpoints]
        times: dict[TransceiverId, float] = {}
        errors: dict[str, Exception] = {}
        for t, fut in zip(endpoints, futures):
            try:
                times[t] = fut.result()
            except (RpcError, SessionDown) as exc:
                errors[str(t)] = exc
                if isinstance(exc, SessionDown):
                    self._drop_session(t.whitebox)
        wall = time.perf_counter() - wall0
        if not self.persistent:
            for t in endpoints:
                self._drop_session(t.whitebox)

        now = datetime.now(timezone.utc)
        for t, secs in times.items():
            self.model.update(t, slot, secs)
            try:
                self.db.append(FeedbackRecord(t, slot, secs, now), episode, request.request_id)
            except DbWriteError as exc:
                self.db_errors += 1
                log.warning("%s", exc)
        if errors:
            down = [e for e in errors.values() if isinstance(e, SessionDown)]
            if down:
                raise SessionDown(f"request {request.request_id}: {down[0]}") from down[0]
            raise RequestFailed(request.request_id, errors)

        t_in, t_eg = times[request.ingress], times[request.egress]
        if self.clock is not None:
            latency = (self.clock.sync() - t0) / 1e6
        else:
            latency = max(t_in, t_eg)
        self.schedule.episode += 1
        return RequestOutcome(request.request_id, slot, t_in, t_eg, latency, episode, wall)

    def run_scenario(self, requests: Iterable[ConnectivityRequest]) -> list[RequestOutcome | Exception]:
        out: list[RequestOutcome | Exception] = []
        for req in requests:
            try:
                out.append(self.fulfill(req))
            except (RequestFailed, SessionDown) as exc:
                out.append(exc)
        return out

    def close(self) -> None:
        for wb in list(self.sessions):
            self._drop_session(wb)
        self._pool.shutdown(wait=True)
        self.db.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def run_scenario(controller: Controller, requests: Sequence[ConnectivityRequest]):
    return controller.run_scenario(requests)
