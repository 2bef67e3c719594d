"""Laser frequency slot allocation for packet-optical whiteboxes.

A packet controller picks one of 49 laser slots for each ingress/egress
pluggable pair, configures both ends over a netconf-lite XML RPC channel and
learns from the configuration times the agents report back.
"""

from .core import (
    ALL_SLOTS,
    ConnectivityRequest,
    FeedbackRecord,
    FrequencySlot,
    SlotStatistics,
    TransceiverId,
    frequency_to_slot,
    slot_to_frequency,
)

__all__ = [
    "ALL_SLOTS",
    "ConnectivityRequest",
    "FeedbackRecord",
    "FrequencySlot",
    "SlotStatistics",
    "TransceiverId",
    "frequency_to_slot",
    "slot_to_frequency",
]
