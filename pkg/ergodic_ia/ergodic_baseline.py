"""Full-CSIT ergodic interference alignment.

The same symbol vector is sent at t1 and t2; receiver k adds
Y_k(t1) + Y_k(t2)/c, which cancels every cross term on a complementary
pair and leaves 2 H_kk(t1) X_k. One message per user every two slots.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ergodic_ia.channel_model import PairedChannels, acquire_pairing, complex_normal
from ergodic_ia.config import settings
from ergodic_ia.errors import ConfigurationError, DegenerateDrawError
from ergodic_ia.executor import EpisodeOutcome
from ergodic_ia.metrics import LinearObservationModel, model_rate
from ergodic_ia.models import (
    DofLedgerEntry,
    EpisodeStatus,
    PairingMode,
    QuantizerConfig,
    Scheme,
    SymbolKind,
    SystemConfig,
)

SLOTS_PER_EPISODE = 2


@dataclass
class SymbolVector:
    values: np.ndarray
    kind: SymbolKind = SymbolKind.TRANSMIT

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128).ravel()

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, k):
        return self.values[k]


@dataclass
class ReceivedPair:
    y1: SymbolVector
    y2: SymbolVector
    pair: PairedChannels
    noise_variance: float


def sample_symbols(config: SystemConfig, rng: np.random.Generator) -> SymbolVector:
    """i.i.d. CN(0, P) transmit symbols, one per user"""
    return SymbolVector(complex_normal(rng, config.num_users, config.power))


def transmit_pair(
    x: SymbolVector, pair: PairedChannels, config: SystemConfig, rng: np.random.Generator
) -> ReceivedPair:
    if x.kind != SymbolKind.TRANSMIT or len(x) != pair.num_users:
        raise ConfigurationError("transmit_pair needs a transmit vector of length K")

    z1 = complex_normal(rng, pair.num_users, config.noise_variance)
    z2 = complex_normal(rng, pair.num_users, config.noise_variance)
    return ReceivedPair(
        y1=SymbolVector(pair.h1.entries @ x.values + z1, SymbolKind.RECEIVE),
        y2=SymbolVector(pair.h2.entries @ x.values + z2, SymbolKind.RECEIVE),
        pair=pair,
        noise_variance=config.noise_variance,
    )


def combine_received(r: ReceivedPair, k: int) -> Tuple[complex, float]:
    """Sufficient statistic Y_k(t1) + Y_k(t2)/c and its noise variance"""
    c = r.pair.scale.value
    combined = r.y1[k] + r.y2[k] / c
    return complex(combined), r.noise_variance * (1 + 1 / abs(c) ** 2)


def cross_coefficients(pair: PairedChannels, k: int) -> np.ndarray:
    """Coefficient of every X_j in the combined statistic of receiver k"""
    return pair.h1.entries[k] + pair.h2.entries[k] / pair.scale.value


def decode_baseline(r: ReceivedPair, k: int) -> complex:
    desired = r.pair.h1.entries[k, k]
    if abs(desired) < settings.CHANNEL_FLOOR:
        raise DegenerateDrawError("direct channel below floor", receiver=k)
    combined, _ = combine_received(r, k)
    return combined / (2 * desired)


def baseline_rate(pair: PairedChannels, config: SystemConfig, k: int) -> float:
    """Closed-form rate 1/2 log2(1 + 2|H_kk|^2 SNR / (1 + 1/|c|^2))"""
    if config.noiseless:
        raise ConfigurationError("baseline_rate needs noise_variance > 0")
    c = pair.scale.value
    gain = abs(pair.h1.entries[k, k]) ** 2
    return 0.5 * math.log2(1 + 2 * gain * config.snr / (1 + 1 / abs(c) ** 2))


def baseline_model(pair: PairedChannels, config: SystemConfig, k: int) -> LinearObservationModel:
    """Scalar model of the combined statistic, residual cross terms as noise"""
    coefficients = cross_coefficients(pair, k)
    interference = np.delete(coefficients, k)
    c = pair.scale.value
    noise = config.noise_variance * (1 + 1 / abs(c) ** 2)
    noise += config.power * float(np.sum(np.abs(interference) ** 2))
    return LinearObservationModel(
        gain=[[coefficients[k]]],
        noise_covariance=[[noise]],
        input_power=config.power,
        slots_consumed=SLOTS_PER_EPISODE,
    )


def ledger_entry(num_users: int) -> DofLedgerEntry:
    return DofLedgerEntry(
        scheme=Scheme.BASELINE,
        num_users=num_users,
        messages_decoded=num_users,
        slots_consumed=SLOTS_PER_EPISODE,
    )


def run_episode_baseline(
    config: SystemConfig,
    pairing_mode: PairingMode,
    rng: np.random.Generator,
    q: Optional[QuantizerConfig] = None,
) -> Tuple[Optional[ReceivedPair], Optional[SymbolVector], Optional[DofLedgerEntry]]:
    pair = acquire_pairing(config, pairing_mode, rng, q)
    if pair is None:
        return None, None, None
    x = sample_symbols(config, rng)
    return transmit_pair(x, pair, config, rng), x, ledger_entry(config.num_users)


def baseline_episode(
    config: SystemConfig,
    rng: np.random.Generator,
    pairing_mode: PairingMode = PairingMode.GENIE,
    q: Optional[QuantizerConfig] = None,
) -> EpisodeOutcome:
    received, x, ledger = run_episode_baseline(config, pairing_mode, rng, q)
    if received is None:
        return EpisodeOutcome(status=EpisodeStatus.UNPAIRED)

    users = range(config.num_users)
    estimates = np.array([decode_baseline(received, k) for k in users])
    outcome = EpisodeOutcome(
        status=EpisodeStatus.COMPLETED,
        ledger=ledger,
        max_error=float(np.max(np.abs(estimates - x.values))),
    )
    if not config.noiseless:
        outcome.sum_rate = sum(model_rate(baseline_model(received.pair, config, k)) for k in users)
    return outcome
