"""Ergodic interference alignment with delayed output feedback and no CSIT.

Receivers spot the pairing through their own CSIR and feed back the
reformed output (Y_k(t1) + Y_k(t2)/c) / H_kk(t1). Transmitter k, which never
sees a channel coefficient, retransmits that value minus 2 X_k(t2) in its
phase-2 slot. Every receiver recovers all K payloads, solves the unit-diagonal
difference system built from H(t1), and then decodes its own two messages.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
import structlog

from ergodic_ia.channel_model import PairedChannels, acquire_pairing
from ergodic_ia.config import settings
from ergodic_ia.delayed_csit import (
    PHASE_TWO,
    TwoPhaseEpisode,
    check_floor,
    combine_outputs,
    draw_phase2_channels,
    draw_sources,
    episode_outcome,
    ledger_entry,
    phase2_amplitude,
    run_phase_one,
    run_phase_two,
    scale_rows,
    sum_and_difference,
)
from ergodic_ia.errors import DegenerateDrawError
from ergodic_ia.executor import EpisodeOutcome
from ergodic_ia.feedback import FeedbackLink, OutputFeedback, OutputFeedbackValue
from ergodic_ia.metrics import LinearObservationModel, model_from_forms
from ergodic_ia.models import (
    DofLedgerEntry,
    EpisodeStatus,
    PairingMode,
    QuantizerConfig,
    Scheme,
    SystemConfig,
)

logger = structlog.get_logger()


@dataclass
class EpisodeOutputFb(TwoPhaseEpisode):
    feedback: List[OutputFeedbackValue] = field(default_factory=list)
    feedback_message: Optional[OutputFeedback] = None


@dataclass
class DifferenceSystem:
    """A d = S, with A[k, k] = 1 and A[k, m] = H_km(t1) / H_kk(t1)"""

    matrix: np.ndarray
    rhs: np.ndarray
    solution: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.matrix @ self.solution - self.rhs)))


def difference_matrix(pair: PairedChannels) -> np.ndarray:
    h1 = pair.h1.entries
    return h1 / np.diag(h1)[:, None]


def build_output_feedback(ep: EpisodeOutputFb, k: int) -> OutputFeedbackValue:
    direct = ep.pair.h1.entries[k, k]
    check_floor(direct, "direct channel at t1", receiver=k)
    combined = combine_outputs(ep.y_t1[k], ep.y_t2[k], ep.pair.scale.value)
    return OutputFeedbackValue(user=k, value=complex(combined / direct))


def _feedback_forms(ep: EpisodeOutputFb) -> np.ndarray:
    combined = combine_outputs(ep.forms["y_t1"], ep.forms["y_t2"], ep.pair.scale.value)
    return scale_rows(combined, np.diag(ep.pair.h1.entries))


def phase2_transmit_outputfb(fb: OutputFeedbackValue, x_k_t2: complex) -> complex:
    return fb.value - 2 * x_k_t2


def _transmit(ep: EpisodeOutputFb, k: int) -> complex:
    """Transmitter k's phase-2 computation, recorded with its inputs"""
    fb = ep.feedback_message.for_user(k)
    x_k_t2 = ep.x_t2[k]
    ep.recorder.record(
        ep.phase2_slot(k),
        k,
        PHASE_TWO,
        {"output": fb, "t2": x_k_t2},
        feedback=ep.feedback_message,
    )
    return ep.amplitude * phase2_transmit_outputfb(fb, x_k_t2)


def _solve(ep: EpisodeOutputFb, j: int, phase2_row) -> DifferenceSystem:
    matrix = difference_matrix(ep.pair)
    condition = np.linalg.cond(matrix)
    if condition > settings.CONDITION_LIMIT:
        raise DegenerateDrawError("ill-conditioned difference system", receiver=j, condition=condition)
    rhs = scale_rows(phase2_row, ep.phase2_gains[j] * ep.amplitude)
    return DifferenceSystem(matrix=matrix, rhs=rhs, solution=scipy.linalg.solve(matrix, rhs))


def solve_difference_system(ep: EpisodeOutputFb, j: int) -> DifferenceSystem:
    check_floor(np.diag(ep.pair.h1.entries), "direct channel at t1", receiver=j)
    check_floor(ep.phase2_gains[j], "phase-2 channel", receiver=j)
    return _solve(ep, j, ep.phase2_received[j])


def _decode_observations(ep: EpisodeOutputFb, j: int, y1, y2, phase2_row):
    differences = _solve(ep, j, phase2_row).solution
    combined = combine_outputs(y1, y2, ep.pair.scale.value)
    return sum_and_difference(ep, j, combined, differences)


def decode_outputfb(
    ep: EpisodeOutputFb, j: int
) -> Tuple[complex, complex, LinearObservationModel]:
    system = solve_difference_system(ep, j)
    combined = combine_outputs(ep.y_t1[j], ep.y_t2[j], ep.pair.scale.value)
    x1_hat, x2_hat = sum_and_difference(ep, j, combined, system.solution)

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


def decode_trials(ep: EpisodeOutputFb, j: int, source_values: np.ndarray) -> np.ndarray:
    """Decode receiver j for many source realizations over the same channels.

    `source_values` is (num_sources, trials); the result is (2, trials).
    Observations come from the episode's forms, decoding from the numeric path.
    """
    y1 = ep.forms["y_t1"][j] @ source_values
    y2 = ep.forms["y_t2"][j] @ source_values
    phase2_row = ep.forms["phase2"][j] @ source_values
    return np.vstack(_decode_observations(ep, j, y1, y2, phase2_row))


def oracle_differences(ep: EpisodeOutputFb, j: int) -> np.ndarray:
    """Least-squares solve of diag(g) A d = receiver j's phase-2 outputs"""
    stacked = (ep.phase2_gains[j] * ep.amplitude)[:, None] * difference_matrix(ep.pair)
    return scipy.linalg.lstsq(stacked, ep.phase2_received[j])[0]


def build_episode_outputfb(
    config: SystemConfig,
    pair: PairedChannels,
    rng: np.random.Generator,
    x_t1: Optional[np.ndarray] = None,
    x_t2: Optional[np.ndarray] = None,
) -> EpisodeOutputFb:
    sources = draw_sources(config, rng, x_t1, x_t2)
    ep = EpisodeOutputFb(
        pair=pair,
        sources=sources,
        phase2_channels=draw_phase2_channels(config, rng, pair.t2 + config.delay_slots),
        noise_variance=config.noise_variance,
        power=config.power,
        delay_slots=config.delay_slots,
        amplitude=phase2_amplitude(config),
    )
    run_phase_one(ep)

    ep.feedback = [build_output_feedback(ep, k) for k in range(ep.num_users)]
    link = FeedbackLink(config.delay_slots)
    link.send(OutputFeedback(delay_slots=config.delay_slots, sent_at=pair.t2, values=ep.feedback))
    ep.feedback_message = link.receive(ep.phase2_start)

    sent = np.array([_transmit(ep, k) for k in range(ep.num_users)])
    sent_forms = ep.amplitude * (_feedback_forms(ep) - 2 * ep.unit_rows("x2"))
    run_phase_two(ep, sent, sent_forms)
    return ep


def run_episode_outputfb(
    config: SystemConfig,
    pairing_mode: PairingMode,
    rng: np.random.Generator,
    q: Optional[QuantizerConfig] = None,
    scale: complex = 1 + 0j,
) -> Tuple[Optional[EpisodeOutputFb], Optional[DofLedgerEntry]]:
    pair = acquire_pairing(config, pairing_mode, rng, q, scale)
    if pair is None:
        return None, None

    ep = build_episode_outputfb(config, pair, rng)
    estimates = np.empty((ep.num_users, 2), dtype=np.complex128)
    for j in range(ep.num_users):
        x1_hat, x2_hat, model = decode_outputfb(ep, j)
        estimates[j] = x1_hat, x2_hat
        ep.models.append(model)
    ep.estimates = estimates
    ep.recorder.check_causality()
    ep.recorder.check_blindness()

    logger.debug("episode_decoded", scheme=Scheme.DELAYED_OUTPUT_FB.value, t1=pair.t1, t2=pair.t2)
    return ep, ledger_entry(Scheme.DELAYED_OUTPUT_FB, ep.num_users)


def outputfb_episode(
    config: SystemConfig,
    rng: np.random.Generator,
    pairing_mode: PairingMode = PairingMode.GENIE,
    q: Optional[QuantizerConfig] = None,
) -> EpisodeOutcome:
    ep, ledger = run_episode_outputfb(config, pairing_mode, rng, q)
    if ep is None:
        return EpisodeOutcome(status=EpisodeStatus.UNPAIRED)
    return episode_outcome(ep, ledger, config)
