"""Delayed feedback link, feedback payloads and transmitter provenance.

Receivers hand feedback to a `FeedbackLink`, which releases it to the
transmitters only `delay_slots` after it was sent. Every transmitter
computation is logged by an `EpisodeRecorder` with provenance tags derived
from the objects it consumed, so causality and transmitter blindness can be
asserted structurally after the episode.
"""

from dataclasses import dataclass, field
from numbers import Number
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from ergodic_ia.channel_model import ChannelMatrix, PairedChannels
from ergodic_ia.errors import (
    ConfigurationError,
    FeedbackCausalityError,
    TransmitterBlindnessError,
)
from ergodic_ia.models import FeedbackKind

logger = structlog.get_logger()


@dataclass
class _Delayed:
    delay_slots: int
    sent_at: int

    def __post_init__(self):
        if self.delay_slots < 1:
            raise ConfigurationError("feedback must be strictly delayed (delay_slots >= 1)")

    @property
    def available_at(self) -> int:
        return self.sent_at + self.delay_slots


@dataclass
class CsiFeedback(_Delayed):
    history: List[ChannelMatrix] = field(default_factory=list)
    kind = FeedbackKind.CSI


@dataclass
class TimeIndexFeedback(_Delayed):
    t1: int = 0
    t2: int = 1
    kind = FeedbackKind.TIME_INDEX

    def __post_init__(self):
        super().__post_init__()
        if not self.t1 < self.t2:
            raise ConfigurationError(f"time-index feedback needs t1 < t2, got {self.t1}, {self.t2}")


@dataclass
class OutputFeedbackValue:
    """Receiver k's reformed output, (Y_k(t1) + Y_k(t2)/c) / H_kk(t1)"""

    user: int
    value: Any


@dataclass
class OutputFeedback(_Delayed):
    values: List[OutputFeedbackValue] = field(default_factory=list)
    kind = FeedbackKind.OUTPUT

    def for_user(self, user: int) -> OutputFeedbackValue:
        for entry in self.values:
            if entry.user == user:
                return entry
        raise KeyError(f"no output feedback for user {user}")


FeedbackMessage = Union[CsiFeedback, TimeIndexFeedback, OutputFeedback]


class FeedbackLink:
    """Noiseless, infinite-precision feedback link with a fixed delay"""

    def __init__(self, delay_slots: int):
        if delay_slots < 1:
            raise ConfigurationError("feedback link delay must be >= 1 slot")
        self.delay_slots = delay_slots
        self._in_flight: List[FeedbackMessage] = []

    def send(self, message: FeedbackMessage) -> FeedbackMessage:
        if message.delay_slots != self.delay_slots:
            raise ConfigurationError("message delay does not match the link delay")
        self._in_flight.append(message)
        logger.debug(
            "feedback_sent", kind=message.kind.value, sent_at=message.sent_at,
            available_at=message.available_at,
        )
        return message

    def deliver(self, slot: int) -> List[FeedbackMessage]:
        """Messages a transmitter may read at `slot`"""
        return [m for m in self._in_flight if m.available_at <= slot]

    def receive(self, slot: int) -> FeedbackMessage:
        delivered = self.deliver(slot)
        if not delivered:
            raise FeedbackCausalityError(f"no feedback delivered by slot {slot}")
        return delivered[-1]


def provenance_tag(name: str, value: Any) -> str:
    """Classify a transmitter input as channel state, feedback or message"""
    if isinstance(value, (ChannelMatrix, PairedChannels, CsiFeedback)):
        return f"channel:{name}"
    if isinstance(value, (OutputFeedbackValue, OutputFeedback, TimeIndexFeedback)):
        return f"feedback:{name}"
    if isinstance(value, (Number, np.number, np.ndarray)):
        return f"message:{name}"
    raise TypeError(f"unclassifiable transmitter input {name!r} of type {type(value).__name__}")


@dataclass
class TransmissionRecord:
    slot: int
    transmitter: int
    phase: int
    inputs: Tuple[str, ...]
    feedback_available_at: Optional[int] = None


class EpisodeRecorder:
    """Provenance log of every transmitter computation in an episode"""

    def __init__(self):
        self.records: List[TransmissionRecord] = []

    def record(
        self,
        slot: int,
        transmitter: int,
        phase: int,
        inputs: Dict[str, Any],
        feedback: Optional[FeedbackMessage] = None,
    ) -> TransmissionRecord:
        tags = tuple(provenance_tag(name, value) for name, value in inputs.items())
        if feedback is not None:
            tags += (provenance_tag(f"{feedback.kind.value}", feedback),)
        entry = TransmissionRecord(
            slot=slot,
            transmitter=transmitter,
            phase=phase,
            inputs=tags,
            feedback_available_at=None if feedback is None else feedback.available_at,
        )
        self.records.append(entry)
        return entry

    def check_causality(self) -> None:
        for entry in self.records:
            if entry.feedback_available_at is not None and entry.slot < entry.feedback_available_at:
                raise FeedbackCausalityError(
                    f"transmitter {entry.transmitter} used feedback at slot {entry.slot}, "
                    f"delivered at {entry.feedback_available_at}"
                )

    def check_blindness(self) -> None:
        for entry in self.records:
            leaked = [tag for tag in entry.inputs if tag.startswith("channel:")]
            if leaked:
                raise TransmitterBlindnessError(
                    f"transmitter {entry.transmitter} at slot {entry.slot} read {leaked}"
                )

    def phase_slots(self, phase: int) -> List[int]:
        return sorted({entry.slot for entry in self.records if entry.phase == phase})
