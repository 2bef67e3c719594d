"""CMIS/xcvrd syslog parsing, per-slot statistics and dataset construction.

The configuration time of one laser retune is the gap between the
``force Datapath reinit`` line and the ``configured laser frequency`` line
for the same port.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .core import (
    ALL_SLOTS,
    FrequencySlot,
    SlotStatistics,
    as_slot,
    frequency_to_slot,
    slot_to_frequency,
)
from .errors import InvalidStatistics, MalformedLine, NonMonotonicTimestamps

# syslog carries no year; a leap year keeps "Feb 29" parseable
SYSLOG_YEAR = 2000
_TS_FORMAT = "%b %d %H:%M:%S.%f"

_TS_START = re.compile(r"^[A-Z][a-z]{2} [ \d]\d \d\d:\d\d:\d\d")
_LINE = re.compile(
    r"^(?P<ts>\S+\s+\d+\s+\S+)\s+(?P<host>\S+)\s+(?P<level>[A-Z]+)\s+"
    r"pmon#xcvrd:\s+CMIS:\s+(?P<rest>.*)$"
)
_REINIT = re.compile(r"^(?P<port>[^\s:]+):\s+force Datapath reinit\s*$")
_STATE = re.compile(r"^(?P<port>[^\s:]+):.*\bstate=\s*(?P<state>[A-Z_]+)")
_TUNING = re.compile(r"^(?P<port>[^\s:]+)\s+Tuning in progress")
_CONFIGURED = re.compile(
    r"^(?P<port>[^\s:]+)\s+configured laser frequency\s+(?P<freq>\S+)\s+GHz"
    r"\s+grid space\s+(?P<grid>\S+)\s+GHz\s*$"
)


class EventKind(enum.Enum):
    DATAPATH_REINIT = "DatapathReinit"
    AP_CONFIGURED = "ApConfigured"
    TUNING_WARNING = "TuningWarning"
    CONFIGURED_FREQUENCY = "ConfiguredFrequency"


class Origin(enum.Enum):
    REAL = "Real"
    AUGMENTED = "Augmented"


@dataclass(frozen=True)
class CmisEvent:
    timestamp: datetime
    port: str
    kind: EventKind
    frequency_ghz: int | None = None
    grid_ghz: int | None = None

    def __post_init__(self):
        has_freq = self.frequency_ghz is not None and self.grid_ghz is not None
        if (self.kind is EventKind.CONFIGURED_FREQUENCY) != has_freq:
            raise ValueError("frequency and grid are present iff kind is ConfiguredFrequency")


@dataclass(frozen=True)
class Measurement:
    port: str
    slot: FrequencySlot
    config_time_s: float
    origin: Origin = Origin.REAL

    def __post_init__(self):
        if not self.config_time_s > 0:
            raise ValueError(f"config_time_s must be positive, got {self.config_time_s}")


class Pairing(NamedTuple):
    measurements: list[Measurement]
    unmatched: int


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(f"{SYSLOG_YEAR} {' '.join(text.split())}", "%Y " + _TS_FORMAT)


def format_timestamp(ts: datetime) -> str:
    return f"{ts:%b} {ts.day:2d} {ts:%H:%M:%S}.{ts.microsecond:06d}"


def _parse_ghz(text: str, line: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise MalformedLine(line, f"bad frequency {text!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise MalformedLine(line, f"bad frequency {text!r}")
    return int(value)


def parse_log_line(line: str) -> CmisEvent | None:
    """Return the CMIS event on ``line``, or None for unrelated syslog lines.

    DP_DEINIT and other intermediate state lines are recognised as xcvrd
    output but carry no event of interest, so they also yield None.
    """
    m = _LINE.match(line.strip())
    if m is None:
        return None
    rest = m["rest"]
    kind = None
    freq = grid = None
    if mm := _REINIT.match(rest):
        kind = EventKind.DATAPATH_REINIT
    elif mm := _CONFIGURED.match(rest):
        kind = EventKind.CONFIGURED_FREQUENCY
        freq = _parse_ghz(mm["freq"], line)
        grid = _parse_ghz(mm["grid"], line)
    elif mm := _TUNING.match(rest):
        kind = EventKind.TUNING_WARNING
    elif (mm := _STATE.match(rest)) and mm["state"] == "AP_CONFIGURED":
        kind = EventKind.AP_CONFIGURED
    if kind is None:
        return None
    try:
        ts = parse_timestamp(m["ts"])
    except ValueError:
        raise MalformedLine(line, "bad timestamp") from None
    return CmisEvent(ts, mm["port"], kind, freq, grid)


def format_event(event: CmisEvent, host: str = "sonic") -> str:
    """Render an event as a canonical single xcvrd syslog line."""
    ts = format_timestamp(event.timestamp)
    port = event.port
    if event.kind is EventKind.DATAPATH_REINIT:
        return f"{ts} {host} NOTICE pmon#xcvrd: CMIS: {port}: force Datapath reinit"
    if event.kind is EventKind.AP_CONFIGURED:
        return state_line(ts, host, port, "AP_CONFIGURED")
    if event.kind is EventKind.TUNING_WARNING:
        return (f"{ts} {host} WARNING pmon#xcvrd: CMIS: {port} Tuning in progress, "
                "channel selection may fail!")
    return (f"{ts} {host} NOTICE pmon#xcvrd: CMIS: {port} configured laser frequency "
            f"{event.frequency_ghz} GHz grid space {event.grid_ghz} GHz")


def state_line(ts: str, host: str, port: str, state: str) -> str:
    return (f"{ts} {host} NOTICE pmon#xcvrd: CMIS: {port}: 400G, lanemask=0xff, "
            f"state={state}, appl=1, retries=0")


def iter_records(lines: Iterable[str]) -> Iterator[str]:
    """Join terminal-wrapped continuation lines onto their syslog record."""
    current = None
    for raw in lines:
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if _TS_START.match(line) or current is None:
            if current is not None:
                yield current
            current = line.strip()
        else:
            current = f"{current} {line.strip()}"
    if current is not None:
        yield current


def parse_log(lines: Iterable[str]) -> list[CmisEvent]:
    return [ev for rec in iter_records(lines) if (ev := parse_log_line(rec)) is not None]


def _seconds(delta: timedelta) -> float:
    return (delta // timedelta(microseconds=1)) / 1e6


def pair_events(events: Sequence[CmisEvent]) -> Pairing:
    """Match each reinit with the next configured-frequency event on its port.

    A second reinit on a port that is still pending restarts the episode; the
    abandoned reinit counts as unmatched.
    """
    pending: dict[str, datetime] = {}
    out: list[Measurement] = []
    unmatched = 0
    for ev in events:
        if ev.kind is EventKind.DATAPATH_REINIT:
            if ev.port in pending:
                unmatched += 1
            pending[ev.port] = ev.timestamp
        elif ev.kind is EventKind.CONFIGURED_FREQUENCY and ev.port in pending:
            start = pending.pop(ev.port)
            if ev.timestamp < start:
                raise NonMonotonicTimestamps(ev.port, start, ev.timestamp)
            dt = _seconds(ev.timestamp - start)
            if dt <= 0:
                raise NonMonotonicTimestamps(ev.port, start, ev.timestamp)
            out.append(Measurement(ev.port, frequency_to_slot(ev.frequency_ghz), dt))
    return Pairing(out, unmatched + len(pending))


def aggregate(measurements: Iterable[Measurement]) -> dict[int, SlotStatistics]:
    """Per-slot mean, population std and count, keyed and ordered by slot index."""
    by_slot: dict[int, list[float]] = defaultdict(list)
    for m in measurements:
        by_slot[m.slot.index].append(m.config_time_s)
    stats = {}
    for idx in sorted(by_slot):
        xs = np.asarray(by_slot[idx], dtype=float)
        stats[idx] = SlotStatistics(FrequencySlot(idx), float(xs.mean()), float(xs.std()), len(xs))
    return stats


def augment(measurements: Sequence[Measurement], copies: int = 8,
            noise_fraction: float = 0.05, seed: int = 0,
            floor_s: float = 0.1) -> list[Measurement]:
    """Originals followed by ``copies`` noisy replicas of each original."""
    if copies < 0 or not math.isfinite(noise_fraction) or noise_fraction < 0:
        raise ValueError("copies must be >= 0 and noise_fraction finite and >= 0")
    out = list(measurements)
    if copies == 0 or not out:
        return out
    rng = np.random.default_rng(seed)
    base = np.array([m.config_time_s for m in out])
    noise = rng.normal(0.0, 1.0, size=(len(out), copies)) * (noise_fraction * base)[:, None]
    values = base[:, None] + noise
    if noise_fraction > 0:
        values = np.maximum(values, floor_s)
    for m, row in zip(list(out), values):
        out.extend(replace(m, config_time_s=float(v), origin=Origin.AUGMENTED) for v in row)
    return out


def fit_lognormal(stats: SlotStatistics | tuple[float, float]) -> tuple[float, float]:
    """Moment-matched log-normal (mu, sigma) with the given mean and std."""
    if isinstance(stats, SlotStatistics):
        mean, std = stats.mean_s, stats.std_s
    else:
        mean, std = stats
    if not mean > 0 or std < 0:
        raise InvalidStatistics(f"need mean > 0 and std >= 0, got mean={mean}, std={std}")
    var_log = math.log1p((std / mean) ** 2)
    return math.log(mean) - var_log / 2, math.sqrt(var_log)


@dataclass(frozen=True)
class Dataset:
    """Per-slot statistics covering all 49 slots."""

    stats: tuple[SlotStatistics, ...]

    def __post_init__(self):
        if [s.slot.index for s in self.stats] != list(range(len(ALL_SLOTS))):
            raise ValueError("a dataset needs exactly one entry per slot, in slot order")

    @classmethod
    def from_mapping(cls, stats: dict[int, SlotStatistics]) -> Dataset:
        return cls(tuple(stats[i] for i in sorted(stats)))

    @property
    def means(self) -> np.ndarray:
        return np.array([s.mean_s for s in self.stats])

    @property
    def overall_mean(self) -> float:
        return float(self.means.mean())

    @property
    def min_mean(self) -> float:
        return float(self.means.min())

    @property
    def best_slot(self) -> FrequencySlot:
        return FrequencySlot(int(np.argmin(self.means)))

    def fit(self) -> list[tuple[float, float]]:
        return [fit_lognormal(s) for s in self.stats]


def synthesize_dataset(low: float = 3.2, high: float = 5.5, std_fraction: float = 0.1,
                       seed: int = 7, count: int = 2) -> Dataset:
    """Stand-in dataset: slot means uniform in [low, high], std = fraction x mean."""
    if not 0 < low <= high:
        raise ValueError(f"need 0 < low <= high, got [{low}, {high}]")
    rng = np.random.default_rng(seed)
    means = rng.uniform(low, high, size=len(ALL_SLOTS)) if high > low else np.full(len(ALL_SLOTS), low)
    return Dataset(tuple(
        SlotStatistics(slot, float(m), float(std_fraction * m), count)
        for slot, m in zip(ALL_SLOTS, means)
    ))


def stats_to_csv(stats: Iterable[SlotStatistics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "frequency_ghz", "mean_s", "std_s", "count"])
    for s in stats:
        w.writerow([s.slot.index, slot_to_frequency(s.slot), repr(s.mean_s), repr(s.std_s), s.count])
    return buf.getvalue()


def stats_from_csv(text: str) -> dict[int, SlotStatistics]:
    out = {}
    for row in csv.DictReader(io.StringIO(text)):
        slot = as_slot(int(row["slot"]))
        out[slot.index] = SlotStatistics(slot, float(row["mean_s"]), float(row["std_s"]), int(row["count"]))
    return out


def fit_document(stats: Iterable[SlotStatistics]) -> dict:
    slots = []
    for s in stats:
        mu, sigma = fit_lognormal(s)
        slots.append({"slot": s.slot.index, "frequency_ghz": slot_to_frequency(s.slot),
                      "mu": mu, "sigma": sigma, "mean_s": s.mean_s, "std_s": s.std_s})
    return {"distribution": "lognormal", "slots": slots}


def dump_fit(stats: Iterable[SlotStatistics]) -> str:
    return json.dumps(fit_document(stats), indent=2) + "\n"
