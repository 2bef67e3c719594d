"""Domain types and slot/frequency arithmetic."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

from .errors import InvalidFrequency

BASE_FREQUENCY_GHZ = 191300
GRID_GHZ = 100
N_SLOTS = 49
MAX_FREQUENCY_GHZ = BASE_FREQUENCY_GHZ + GRID_GHZ * (N_SLOTS - 1)


@dataclass(frozen=True, order=True)
class FrequencySlot:
    index: int

    def __post_init__(self):
        if isinstance(self.index, bool) or not isinstance(self.index, int):
            raise TypeError(f"slot index must be an int, got {self.index!r}")
        if not 0 <= self.index < N_SLOTS:
            raise ValueError(f"slot index {self.index} outside [0, {N_SLOTS - 1}]")

    @property
    def frequency_ghz(self) -> int:
        return slot_to_frequency(self)


ALL_SLOTS = tuple(FrequencySlot(i) for i in range(N_SLOTS))


@dataclass(frozen=True, order=True)
class TransceiverId:
    whitebox: str
    port: str

    def __post_init__(self):
        if not self.whitebox or not self.port:
            raise ValueError("whitebox and port must be non-empty")

    def __str__(self):
        return f"{self.whitebox}/{self.port}"


@dataclass(frozen=True)
class ConnectivityRequest:
    request_id: int
    ingress: TransceiverId
    egress: TransceiverId

    def __post_init__(self):
        if self.ingress.whitebox == self.egress.whitebox:
            raise ValueError("ingress and egress must sit on different whiteboxes")


@dataclass(frozen=True)
class FeedbackRecord:
    transceiver: TransceiverId
    slot: FrequencySlot
    config_time_s: float
    wall_time: datetime = field(compare=True)

    def __post_init__(self):
        if not self.config_time_s > 0:
            raise ValueError(f"config_time_s must be positive, got {self.config_time_s}")


@dataclass(frozen=True)
class SlotStatistics:
    slot: FrequencySlot
    mean_s: float
    std_s: float
    count: int

    def __post_init__(self):
        if not self.mean_s > 0:
            raise ValueError(f"mean_s must be positive, got {self.mean_s}")
        if self.std_s < 0:
            raise ValueError(f"std_s must be non-negative, got {self.std_s}")
        if self.count < 1:
            raise ValueError("count must be at least 1")


def _index(slot) -> int:
    return slot.index if isinstance(slot, FrequencySlot) else FrequencySlot(slot).index


def slot_to_frequency(slot: FrequencySlot | int) -> int:
    return BASE_FREQUENCY_GHZ + GRID_GHZ * _index(slot)


def frequency_to_slot(frequency) -> FrequencySlot:
    try:
        offset = frequency - BASE_FREQUENCY_GHZ
        index, rem = divmod(offset, GRID_GHZ)
    except TypeError:
        raise InvalidFrequency(frequency) from None
    if rem != 0 or not 0 <= index < N_SLOTS or index != int(index):
        raise InvalidFrequency(frequency)
    return FrequencySlot(int(index))


def as_slot(slot: FrequencySlot | int) -> FrequencySlot:
    return slot if isinstance(slot, FrequencySlot) else FrequencySlot(slot)
