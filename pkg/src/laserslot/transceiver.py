"""Simulated coherent pluggable and the whitebox internals that drive it.

A ``StateStore`` stands in for the switch database. Writing ``desired_freq``
for a port wakes that port's daemon thread, which walks the datapath states,
spends a log-normally distributed configuration delay on the simulation
clock, emits xcvrd-style CMIS log lines and publishes ``applied_freq``.

Simulation time is kept in integer microseconds so that the feedback value
equals the reinit-to-configured log delta exactly.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import queue
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cmis import CmisEvent, EventKind, format_event, format_timestamp, state_line
from .core import GRID_GHZ, N_SLOTS, FrequencySlot, as_slot, frequency_to_slot
from .errors import UnknownPort

log = logging.getLogger(__name__)

# xcvrd line offsets as a fraction of the total delay, taken from a real capture
# (DP_DEINIT, AP_CONFIGURED, tuning warning); reinit is at 0, configured at 1
_PHASES = (0.00432, 0.97028, 0.98118)

DEFAULT_EPOCH = datetime(2000, 6, 20, 0, 0, 0)


class LogicalClock:
    """Virtual time shared by every port of a simulation.

    Each port keeps its own busy-until mark. An operation starts at the
    later of the clock's base time and the port's mark, so operations on one
    port chain while different ports overlap. ``sync`` moves the base up to
    the latest completion seen; whoever drives the experiment calls it
    between rounds.
    """

    resolution_s = 1e-6

    def __init__(self, epoch: datetime = DEFAULT_EPOCH):
        self.epoch = epoch
        self._lock = threading.Lock()
        self._base_us = 0
        self._horizon_us = 0
        self._busy: dict[object, int] = {}

    def now_us(self) -> int:
        with self._lock:
            return self._base_us

    def horizon_us(self) -> int:
        with self._lock:
            return self._horizon_us

    def sync(self) -> int:
        with self._lock:
            self._base_us = self._horizon_us
            return self._base_us

    def reserve(self, key, delay_us: int) -> tuple[int, int]:
        """Book ``delay_us`` on ``key``'s timeline; returns (start, end) in us."""
        with self._lock:
            start = max(self._base_us, self._busy.get(key, 0))
            end = start + delay_us
            self._busy[key] = end
            self._horizon_us = max(self._horizon_us, end)
            return start, end

    def wait(self, delay_us: int) -> None:
        """Block for the wall-clock equivalent of a simulated delay."""

    def to_datetime(self, t_us: int) -> datetime:
        return self.epoch + timedelta(microseconds=t_us)


class ScaledClock(LogicalClock):
    """Logical timeline that also sleeps delay/factor wall seconds."""

    def __init__(self, factor: float, epoch: datetime = DEFAULT_EPOCH):
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        super().__init__(epoch)
        self.factor = factor

    def wait(self, delay_us: int) -> None:
        time.sleep(delay_us / 1e6 / self.factor)


def virtual_clock(mode: str = "logical", factor: float | None = None) -> LogicalClock:
    """Build a clock from ``logical``, ``scaled`` (with factor) or ``scaled:<f>``."""
    if mode.startswith("scaled"):
        if ":" in mode:
            factor = float(mode.split(":", 1)[1])
        if factor is None:
            raise ValueError("scaled clock needs a factor")
        return ScaledClock(factor)
    if mode == "logical":
        return LogicalClock()
    raise ValueError(f"unknown clock mode {mode!r}")


class LaserModel:
    """Per-slot log-normal configuration-delay model with its own generator."""

    def __init__(self, mu: Sequence[float], sigma: Sequence[float], seed: int | np.random.SeedSequence = 0):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if mu.shape != (N_SLOTS,) or sigma.shape != (N_SLOTS,):
            raise ValueError(f"need exactly {N_SLOTS} (mu, sigma) pairs")
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()) or (sigma < 0).any():
            raise ValueError("mu must be finite and sigma finite and non-negative")
        self.mu = mu
        self.sigma = sigma
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    @classmethod
    def from_fit(cls, params: Sequence[tuple[float, float]], seed=0) -> LaserModel:
        mu, sigma = zip(*params)
        return cls(mu, sigma, seed)

    @classmethod
    def constant(cls, seconds: float | Sequence[float], seed=0) -> LaserModel:
        """Degenerate model: slot k always takes ``seconds[k]`` (or one value for all)."""
        values = np.broadcast_to(np.asarray(seconds, dtype=float), (N_SLOTS,))
        return cls(np.log(values), np.zeros(N_SLOTS), seed)

    @classmethod
    def load(cls, path: str | Path, seed=0) -> LaserModel:
        doc = json.loads(Path(path).read_text())
        slots = sorted(doc["slots"], key=lambda s: s["slot"])
        return cls([s["mu"] for s in slots], [s["sigma"] for s in slots], seed)

    def sample(self, slot: FrequencySlot | int) -> float:
        k = as_slot(slot).index
        if self.sigma[k] == 0:
            return math.exp(self.mu[k])
        with self._lock:
            return math.exp(self._rng.normal(self.mu[k], self.sigma[k]))

    def sample_many(self, slot: FrequencySlot | int, n: int) -> np.ndarray:
        k = as_slot(slot).index
        with self._lock:
            return np.exp(self._rng.normal(self.mu[k], self.sigma[k], size=n))


def sample_config_time(model: LaserModel, slot: FrequencySlot | int) -> float:
    return model.sample(slot)


class DpState(enum.Enum):
    IDLE = "Idle"
    DP_DEINIT = "DpDeinit"
    AP_CONFIGURED = "ApConfigured"
    CONFIGURED_ACTIVE = "ConfiguredActive"


_TRANSITIONS = {
    DpState.IDLE: {DpState.DP_DEINIT},
    DpState.CONFIGURED_ACTIVE: {DpState.DP_DEINIT},
    DpState.DP_DEINIT: {DpState.AP_CONFIGURED},
    DpState.AP_CONFIGURED: {DpState.CONFIGURED_ACTIVE},
}


class StateStore:
    """Key-value store of (port, field) -> string with write notifications."""

    def __init__(self):
        self._data: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        self._subscribers: dict[tuple[str, str], list[Callable[[str, object], None]]] = {}

    def get(self, port: str, field: str) -> str | None:
        with self._lock:
            return self._data.get((port, field))

    def set(self, port: str, field: str, value: str, token=None) -> None:
        with self._lock:
            self._data[(port, field)] = value
            subs = list(self._subscribers.get((port, field), ()))
            # notify under the lock so subscribers see writes in commit order
            for cb in subs:
                cb(value, token)

    def subscribe(self, port: str, field: str, callback: Callable[[str, object], None]) -> None:
        with self._lock:
            self._subscribers.setdefault((port, field), []).append(callback)

    def snapshot(self) -> dict[tuple[str, str], str]:
        with self._lock:
            return dict(self._data)


@dataclass
class TransceiverState:
    port: str
    dp_state: DpState = DpState.IDLE
    desired_frequency_ghz: int | None = None
    applied_frequency_ghz: int | None = None

    def advance(self, new: DpState) -> None:
        if new not in _TRANSITIONS[self.dp_state]:
            raise RuntimeError(f"{self.port}: illegal transition {self.dp_state} -> {new}")
        self.dp_state = new
        if new is not DpState.CONFIGURED_ACTIVE:
            self.applied_frequency_ghz = None


@dataclass(frozen=True)
class Configuration:
    port: str
    frequency_ghz: int
    config_time_s: float
    start_us: int
    end_us: int


class _PortDaemon(threading.Thread):
    def __init__(self, owner: Transceivers, port: str, model: LaserModel):
        super().__init__(name=f"xcvrd-{port}", daemon=True)
        self.owner = owner
        self.port = port
        self.model = model
        self.state = TransceiverState(port)
        self.jobs: queue.Queue = queue.Queue()

    def run(self):
        while True:
            job = self.jobs.get()
            if job is None:
                return
            value, fut = job
            try:
                fut.set_result(self._configure(int(value)))
            except BaseException as exc:  # surface daemon failures to the caller
                fut.set_exception(exc)

    def _configure(self, freq: int) -> Configuration:
        owner = self.owner
        slot = frequency_to_slot(freq)
        delay_us = max(1, round(self.model.sample(slot) * 1e6))
        start, end = owner.clock.reserve(self, delay_us)
        st = self.state
        st.desired_frequency_ghz = freq
        st.advance(DpState.DP_DEINIT)
        owner.store.set(self.port, "status", st.dp_state.value)
        t = [start + round(f * delay_us) for f in _PHASES]
        owner.emit(CmisEvent(owner.clock.to_datetime(start), self.port, EventKind.DATAPATH_REINIT))
        owner.emit_raw(state_line(self._ts(t[0]), owner.host, self.port, "DP_DEINIT"))
        owner.clock.wait(delay_us)
        owner.emit_raw(state_line(self._ts(t[1]), owner.host, self.port, "DP_DEINIT"))
        st.advance(DpState.AP_CONFIGURED)
        owner.store.set(self.port, "status", st.dp_state.value)
        owner.emit(CmisEvent(owner.clock.to_datetime(t[1]), self.port, EventKind.AP_CONFIGURED))
        owner.emit(CmisEvent(owner.clock.to_datetime(t[2]), self.port, EventKind.TUNING_WARNING))
        st.advance(DpState.CONFIGURED_ACTIVE)
        st.applied_frequency_ghz = freq
        owner.store.set(self.port, "applied_freq", str(freq))
        owner.store.set(self.port, "status", st.dp_state.value)
        owner.emit(CmisEvent(owner.clock.to_datetime(end), self.port,
                             EventKind.CONFIGURED_FREQUENCY, freq, GRID_GHZ))
        return Configuration(self.port, freq, delay_us / 1e6, start, end)

    def _ts(self, t_us: int) -> str:
        return format_timestamp(self.owner.clock.to_datetime(t_us))


class Transceivers:
    """The pluggables of one whitebox, each with a dedicated daemon thread."""

    def __init__(self, models: dict[str, LaserModel], clock: LogicalClock | None = None,
                 log_sink: Callable[[str], None] | None = None, host: str = "sonic"):
        if not models:
            raise ValueError("a whitebox needs at least one port")
        self.clock = clock or LogicalClock()
        self.store = StateStore()
        self.host = host
        self.log_sink = log_sink
        self._daemons = {port: _PortDaemon(self, port, m) for port, m in models.items()}
        for port, d in self._daemons.items():
            self.store.subscribe(port, "desired_freq", self._make_handler(d))
            d.start()
        self._closed = False

    @staticmethod
    def _make_handler(daemon: _PortDaemon):
        def on_write(value, fut):
            daemon.jobs.put((value, fut if fut is not None else Future()))
        return on_write

    @property
    def ports(self) -> list[str]:
        return sorted(self._daemons)

    def state(self, port: str) -> TransceiverState:
        return self._daemon(port).state

    def _daemon(self, port: str) -> _PortDaemon:
        try:
            return self._daemons[port]
        except KeyError:
            raise UnknownPort(port) from None

    def emit(self, event: CmisEvent) -> None:
        self.emit_raw(format_event(event, self.host))

    def emit_raw(self, line: str) -> None:
        if self.log_sink is not None:
            self.log_sink(line)

    def submit(self, port: str, frequency) -> Future:
        """Queue a retune; the future resolves to a ``Configuration``."""
        self._daemon(port)
        freq = frequency_to_slot(frequency).frequency_ghz
        fut: Future = Future()
        self.store.set(port, "desired_freq", str(freq), fut)
        return fut

    def set_frequency(self, port: str, frequency) -> float:
        """Retune ``port`` and return the configuration time in seconds."""
        return self.submit(port, frequency).result().config_time_s

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for d in self._daemons.values():
            d.jobs.put(None)
        for d in self._daemons.values():
            d.join()
