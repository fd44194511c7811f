"""Ergodic interference alignment with delayed CSIT or delayed time indices.

Phase 1 sends independent messages at t1 and t2. Once delayed feedback
reveals the pairing, transmitter k sends X_k(t1) - X_k(t2) alone in its
phase-2 slot. Receiver j strips the interference out of its combined
phase-1 output with the overheard differences and decodes both of its own
messages, so 2K messages are delivered over K + 2 slots.

Each observation is held twice: as a number and as a linear form over the
episode's independent sources (see `SourceLedger`). The decoder runs the
same arithmetic on both, giving the estimates and their exact effective
model from a single code path.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg
import structlog

from ergodic_ia.channel_model import (
    ChannelMatrix,
    PairedChannels,
    acquire_pairing,
    complex_normal,
)
from ergodic_ia.config import settings
from ergodic_ia.ergodic_baseline import SymbolVector
from ergodic_ia.errors import ConfigurationError, DegenerateDrawError
from ergodic_ia.executor import EpisodeOutcome
from ergodic_ia.feedback import (
    CsiFeedback,
    EpisodeRecorder,
    FeedbackLink,
    FeedbackMessage,
    TimeIndexFeedback,
)
from ergodic_ia.metrics import LinearObservationModel, SourceLedger, model_from_forms, per_user_rates
from ergodic_ia.models import (
    DofLedgerEntry,
    EpisodeStatus,
    FeedbackKind,
    PairingMode,
    QuantizerConfig,
    Scheme,
    SymbolKind,
    SystemConfig,
)

logger = structlog.get_logger()

PHASE_ONE = 1
PHASE_TWO = 2


@dataclass
class TwoPhaseEpisode:
    """State shared by the delayed-CSIT and output-feedback episodes"""

    pair: PairedChannels
    sources: SourceLedger
    phase2_channels: List[ChannelMatrix]
    noise_variance: float
    power: float
    delay_slots: int
    amplitude: float = 1.0
    recorder: EpisodeRecorder = field(default_factory=EpisodeRecorder)
    forms: Dict[str, np.ndarray] = field(default_factory=dict)
    y_t1: Optional[SymbolVector] = None
    y_t2: Optional[SymbolVector] = None
    phase2_sent: Optional[np.ndarray] = None
    # [j, k]: receiver j in transmitter k's phase-2 slot
    phase2_received: Optional[np.ndarray] = None
    estimates: Optional[np.ndarray] = None
    models: List[LinearObservationModel] = field(default_factory=list)

    def __post_init__(self):
        if len(self.phase2_channels) != self.num_users:
            raise ConfigurationError(
                f"need {self.num_users} phase-2 channels, got {len(self.phase2_channels)}"
            )

    @property
    def num_users(self) -> int:
        return self.pair.num_users

    @property
    def x_t1(self) -> SymbolVector:
        return SymbolVector(self.sources.block("x1"))

    @property
    def x_t2(self) -> SymbolVector:
        return SymbolVector(self.sources.block("x2"))

    @property
    def truth(self) -> np.ndarray:
        return np.column_stack([self.x_t1.values, self.x_t2.values])

    @property
    def phase2_start(self) -> int:
        return self.pair.t2 + self.delay_slots

    def phase2_slot(self, k: int) -> int:
        return self.phase2_start + k

    @property
    def slots_consumed(self) -> int:
        return self.num_users + 2

    @property
    def phase2_gains(self) -> np.ndarray:
        """G[j, k] = H_jk in transmitter k's phase-2 slot"""
        return np.stack(
            [h.entries[:, k] for k, h in enumerate(self.phase2_channels)], axis=1
        )

    @property
    def phase2_power(self) -> Optional[float]:
        if self.phase2_sent is None:
            return None
        return float(np.mean(np.abs(self.phase2_sent) ** 2))

    def desired_indices(self, j: int) -> List[int]:
        return [self.sources.index("x1", j), self.sources.index("x2", j)]

    def unit_rows(self, name: str) -> np.ndarray:
        start, length = self.sources.blocks[name]
        rows = np.zeros((length, self.sources.size), dtype=np.complex128)
        rows[:, start:start + length] = np.eye(length)
        return rows


@dataclass
class EpisodeCsit(TwoPhaseEpisode):
    feedback: Optional[FeedbackMessage] = None


def phase2_amplitude(config: SystemConfig) -> float:
    # a difference of two independent CN(0, P) symbols has power 2P
    return 1 / math.sqrt(2) if config.normalize_power else 1.0


def draw_sources(
    config: SystemConfig,
    rng: np.random.Generator,
    x_t1: Optional[np.ndarray] = None,
    x_t2: Optional[np.ndarray] = None,
) -> SourceLedger:
    """Messages, phase-1 noise and phase-2 noise of one episode.

    The draws are always made so that overriding the messages leaves the
    rest of the stream unchanged.
    """
    size = config.num_users
    x1 = complex_normal(rng, size, config.power)
    x2 = complex_normal(rng, size, config.power)
    z1 = complex_normal(rng, size, config.noise_variance)
    z2 = complex_normal(rng, size, config.noise_variance)
    w = complex_normal(rng, (size, size), config.noise_variance)
    if x_t1 is not None:
        x1 = np.asarray(x_t1, dtype=np.complex128)
    if x_t2 is not None:
        x2 = np.asarray(x_t2, dtype=np.complex128)
    return SourceLedger.from_blocks(
        [
            ("x1", x1, config.power),
            ("x2", x2, config.power),
            ("z1", z1, config.noise_variance),
            ("z2", z2, config.noise_variance),
            ("w", w, config.noise_variance),
        ]
    )


def draw_phase2_channels(
    config: SystemConfig, rng: np.random.Generator, start: int
) -> List[ChannelMatrix]:
    size = config.num_users
    return [
        ChannelMatrix(complex_normal(rng, (size, size)), start + k) for k in range(size)
    ]


def run_phase_one(ep: TwoPhaseEpisode) -> None:
    """Independent messages at t1 and t2; nothing is known about the pairing yet"""
    h1, h2 = ep.pair.h1.entries, ep.pair.h2.entries
    ep.y_t1 = SymbolVector(h1 @ ep.x_t1.values + ep.sources.block("z1"), SymbolKind.RECEIVE)
    ep.y_t2 = SymbolVector(h2 @ ep.x_t2.values + ep.sources.block("z2"), SymbolKind.RECEIVE)
    ep.forms["y_t1"] = h1 @ ep.unit_rows("x1") + ep.unit_rows("z1")
    ep.forms["y_t2"] = h2 @ ep.unit_rows("x2") + ep.unit_rows("z2")

    for k in range(ep.num_users):
        ep.recorder.record(ep.pair.t1, k, PHASE_ONE, {"t1": ep.x_t1[k]})
        ep.recorder.record(ep.pair.t2, k, PHASE_ONE, {"t2": ep.x_t2[k]})


def run_phase_two(ep: TwoPhaseEpisode, sent: np.ndarray, sent_forms: np.ndarray) -> None:
    """Transmitter k alone in its phase-2 slot; all others silent"""
    size = ep.num_users
    gains = ep.phase2_gains
    ep.phase2_sent = np.asarray(sent, dtype=np.complex128)
    ep.phase2_received = gains * ep.phase2_sent[None, :] + ep.sources.block("w").reshape(size, size)
    ep.forms["phase2"] = (
        gains[:, :, None] * sent_forms[None, :, :]
        + ep.unit_rows("w").reshape(size, size, ep.sources.size)
    )


def combine_outputs(y1, y2, c: complex):
    return y1 + y2 / c


def scale_rows(rows, coefficients: np.ndarray):
    """Divide row k of `rows` by coefficients[k]; works for values and forms"""
    rows = np.asarray(rows)
    return rows / coefficients.reshape(coefficients.shape + (1,) * (rows.ndim - 1))


def cancel_interference(combined, differences, h1_row: np.ndarray, j: int):
    weights = h1_row.copy()
    weights[j] = 0
    return combined - np.tensordot(weights, differences, axes=1)


def sum_and_difference(ep: TwoPhaseEpisode, j: int, combined, differences):
    h1_row = ep.pair.h1.entries[j]
    isolated = cancel_interference(combined, differences, h1_row, j)
    total = isolated / h1_row[j]
    return (total + differences[j]) / 2, (total - differences[j]) / 2


def check_floor(values, what: str, **context) -> None:
    smallest = float(np.min(np.abs(values)))
    if smallest < settings.CHANNEL_FLOOR:
        raise DegenerateDrawError(f"{what} below channel floor", magnitude=smallest, **context)


def combine_phase1(ep: TwoPhaseEpisode, j: int) -> complex:
    """Y_j(t1) + Y_j(t2)/c"""
    return complex(combine_outputs(ep.y_t1[j], ep.y_t2[j], ep.pair.scale.value))


def phase2_transmit_csit(ep: EpisodeCsit, k: int) -> complex:
    slot = ep.phase2_slot(k)
    ep.recorder.record(
        slot, k, PHASE_TWO, {"t1": ep.x_t1[k], "t2": ep.x_t2[k]}, feedback=ep.feedback
    )
    return ep.amplitude * (ep.x_t1[k] - ep.x_t2[k])


def _decode_observations(ep: EpisodeCsit, j: int, y1, y2, phase2_row):
    differences = scale_rows(phase2_row, ep.phase2_gains[j] * ep.amplitude)
    combined = combine_outputs(y1, y2, ep.pair.scale.value)
    return sum_and_difference(ep, j, combined, differences)


def decode_csit(ep: EpisodeCsit, j: int) -> Tuple[complex, complex, LinearObservationModel]:
    check_floor(ep.pair.h1.entries[j, j], "direct channel at t1", receiver=j)
    check_floor(ep.phase2_gains[j], "phase-2 channel", receiver=j)

    x1_hat, x2_hat = _decode_observations(
        ep, j, ep.y_t1[j], ep.y_t2[j], ep.phase2_received[j]
    )
    sum_form, diff_form = _decode_observations(
        ep, j, ep.forms["y_t1"][j], ep.forms["y_t2"][j], ep.forms["phase2"][j]
    )
    model = model_from_forms(
        ep.sources,
        np.vstack([sum_form, diff_form]),
        ep.desired_indices(j),
        ep.power,
        ep.slots_consumed,
    )
    return complex(x1_hat), complex(x2_hat), model


def interference_residual(ep: EpisodeCsit, j: int) -> float:
    """Largest leftover coefficient on other users' messages after subtraction"""
    differences = scale_rows(ep.forms["phase2"][j], ep.phase2_gains[j] * ep.amplitude)
    combined = combine_outputs(ep.forms["y_t1"][j], ep.forms["y_t2"][j], ep.pair.scale.value)
    isolated = cancel_interference(combined, differences, ep.pair.h1.entries[j], j)
    others = [
        ep.sources.index(block, m)
        for block in ("x1", "x2")
        for m in range(ep.num_users)
        if m != j
    ]
    return float(np.max(np.abs(isolated[others])))


def oracle_decode_csit(ep: EpisodeCsit, j: int) -> Tuple[complex, complex]:
    """Dense least-squares solve of receiver j's combined and phase-2 outputs.

    Unknowns are X_j(t1), X_j(t2) and the K - 1 foreign differences.
    """
    size = ep.num_users
    h1, h2, c = ep.pair.h1.entries, ep.pair.h2.entries, ep.pair.scale.value
    gains = ep.phase2_gains[j] * ep.amplitude
    others = [m for m in range(size) if m != j]

    matrix = np.zeros((size + 1, size + 1), dtype=np.complex128)
    rhs = np.empty(size + 1, dtype=np.complex128)
    matrix[0, 0], matrix[0, 1] = h1[j, j], h2[j, j] / c
    matrix[0, 2:] = h1[j, others]
    rhs[0] = ep.y_t1[j] + ep.y_t2[j] / c
    matrix[1, 0], matrix[1, 1] = gains[j], -gains[j]
    rhs[1] = ep.phase2_received[j, j]
    for row, m in enumerate(others, start=2):
        matrix[row, row] = gains[m]
        rhs[row] = ep.phase2_received[j, m]

    solution = scipy.linalg.lstsq(matrix, rhs)[0]
    return complex(solution[0]), complex(solution[1])


def _feedback_message(
    pair: PairedChannels, kind: FeedbackKind, delay_slots: int
) -> FeedbackMessage:
    if kind == FeedbackKind.CSI:
        return CsiFeedback(delay_slots=delay_slots, sent_at=pair.t2, history=[pair.h1, pair.h2])
    if kind == FeedbackKind.TIME_INDEX:
        return TimeIndexFeedback(delay_slots=delay_slots, sent_at=pair.t2, t1=pair.t1, t2=pair.t2)
    raise ConfigurationError(f"delayed CSIT runs on csi or time_index feedback, not {kind.value}")


def build_episode_csit(
    config: SystemConfig,
    pair: PairedChannels,
    rng: np.random.Generator,
    feedback_kind: FeedbackKind = FeedbackKind.CSI,
    x_t1: Optional[np.ndarray] = None,
    x_t2: Optional[np.ndarray] = None,
) -> EpisodeCsit:
    """Run both phases over `pair`; decoding is left to the caller"""
    message = _feedback_message(pair, feedback_kind, config.delay_slots)
    sources = draw_sources(config, rng, x_t1, x_t2)
    ep = EpisodeCsit(
        pair=pair,
        sources=sources,
        phase2_channels=draw_phase2_channels(config, rng, pair.t2 + config.delay_slots),
        noise_variance=config.noise_variance,
        power=config.power,
        delay_slots=config.delay_slots,
        amplitude=phase2_amplitude(config),
    )
    run_phase_one(ep)

    link = FeedbackLink(config.delay_slots)
    link.send(message)
    ep.feedback = link.receive(ep.phase2_start)

    sent = np.array([phase2_transmit_csit(ep, k) for k in range(ep.num_users)])
    run_phase_two(ep, sent, ep.amplitude * (ep.unit_rows("x1") - ep.unit_rows("x2")))
    return ep


def ledger_entry(scheme: Scheme, num_users: int) -> DofLedgerEntry:
    return DofLedgerEntry(
        scheme=scheme,
        num_users=num_users,
        messages_decoded=2 * num_users,
        slots_consumed=num_users + 2,
    )


def run_episode_csit(
    config: SystemConfig,
    pairing_mode: PairingMode,
    feedback_kind: FeedbackKind,
    rng: np.random.Generator,
    q: Optional[QuantizerConfig] = None,
    scale: complex = 1 + 0j,
) -> Tuple[Optional[EpisodeCsit], Optional[DofLedgerEntry]]:
    """One pairing event end to end; (None, None) when search finds no pair"""
    pair = acquire_pairing(config, pairing_mode, rng, q, scale)
    if pair is None:
        return None, None

    ep = build_episode_csit(config, pair, rng, feedback_kind)
    estimates = np.empty((ep.num_users, 2), dtype=np.complex128)
    for j in range(ep.num_users):
        x1_hat, x2_hat, model = decode_csit(ep, j)
        estimates[j] = x1_hat, x2_hat
        ep.models.append(model)
    ep.estimates = estimates
    ep.recorder.check_causality()

    scheme = Scheme.DELAYED_CSIT if feedback_kind == FeedbackKind.CSI else Scheme.DELAYED_TIME_INDEX
    logger.debug("episode_decoded", scheme=scheme.value, t1=pair.t1, t2=pair.t2)
    return ep, ledger_entry(scheme, ep.num_users)


def episode_outcome(
    ep: TwoPhaseEpisode, ledger: DofLedgerEntry, config: SystemConfig
) -> EpisodeOutcome:
    outcome = EpisodeOutcome(
        status=EpisodeStatus.COMPLETED,
        ledger=ledger,
        max_error=float(np.max(np.abs(ep.estimates - ep.truth))),
        phase2_power=ep.phase2_power,
    )
    if not config.noiseless:
        outcome.sum_rate = float(per_user_rates(ep.models).sum())
    return outcome


def csit_episode(
    config: SystemConfig,
    rng: np.random.Generator,
    pairing_mode: PairingMode = PairingMode.GENIE,
    feedback_kind: FeedbackKind = FeedbackKind.CSI,
    q: Optional[QuantizerConfig] = None,
) -> EpisodeOutcome:
    ep, ledger = run_episode_csit(config, pairing_mode, feedback_kind, rng, q)
    if ep is None:
        return EpisodeOutcome(status=EpisodeStatus.UNPAIRED)
    return episode_outcome(ep, ledger, config)
