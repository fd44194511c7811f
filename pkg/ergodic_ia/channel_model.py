"""Time-varying K-user fading channels and complementary-pair machinery.

H(t) is K x K with entry (j, i) the coefficient from transmitter i to
receiver j, drawn i.i.d. CN(0, 1) per slot. Two slots t1 < t2 form a
complementary pair when H(t2) = c * flip(H(t1)), where flip negates the
off-diagonal entries.
"""

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Tuple

import numpy as np
import structlog

from ergodic_ia.config import settings
from ergodic_ia.errors import ConfigurationError
from ergodic_ia.logger import episode_logger
from ergodic_ia.models import PairingMode, QuantizerConfig, SystemConfig

logger = structlog.get_logger()

# floating-point slack for exact-construction checks
_ROUNDING_SLACK = 16 * np.finfo(float).eps
_GRID_MATCH_ATOL = 1e-9


@dataclass(frozen=True)
class PairingScale:
    value: complex

    def __post_init__(self):
        value = complex(self.value)
        if not (math.isfinite(value.real) and math.isfinite(value.imag)) or abs(value) == 0:
            raise ConfigurationError(f"pairing scale must be finite and nonzero, got {value}")
        object.__setattr__(self, "value", value)


@dataclass
class ChannelMatrix:
    entries: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ConfigurationError(f"channel matrix must be square, got {self.entries.shape}")
        if not np.all(np.isfinite(self.entries)):
            raise ConfigurationError("channel matrix has non-finite entries")
        if self.time_index < 0:
            raise ConfigurationError("time index must be non-negative")

    @property
    def num_users(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, key):
        return self.entries[key]


@dataclass
class PairedChannels:
    h1: ChannelMatrix
    h2: ChannelMatrix
    scale: PairingScale
    t1: int
    t2: int

    def __post_init__(self):
        if self.t2 <= self.t1:
            raise ConfigurationError(f"pairing needs t2 > t1, got t1={self.t1} t2={self.t2}")
        if self.h1.entries.shape != self.h2.entries.shape:
            raise ConfigurationError("paired channel matrices differ in dimension")

    @property
    def num_users(self) -> int:
        return self.h1.num_users

    @property
    def residual(self) -> float:
        """Max entry-wise deviation from the exact complementary condition"""
        target = self.scale.value * flip(self.h1.entries)
        return float(np.max(np.abs(self.h2.entries - target)))


def flip(entries: np.ndarray) -> np.ndarray:
    """Negate off-diagonal entries of (..., K, K) arrays"""
    entries = np.asarray(entries)
    size = entries.shape[-1]
    signs = np.where(np.eye(size, dtype=bool), 1.0, -1.0)
    return entries * signs


def complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric CN(0, variance) samples"""
    scale = math.sqrt(variance / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channel(
    config: SystemConfig, rng: np.random.Generator, time_index: int = 0
) -> ChannelMatrix:
    size = config.num_users
    return ChannelMatrix(complex_normal(rng, (size, size)), time_index)


def sample_channels(config: SystemConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    """Stack of `count` independent channel draws, shape (count, K, K)"""
    size = config.num_users
    return complex_normal(rng, (count, size, size))


def channel_stream(
    config: SystemConfig, rng: np.random.Generator, start: int = 0, chunk: Optional[int] = None
) -> Iterator[ChannelMatrix]:
    """Endless slot-by-slot channel sequence starting at time `start`"""
    chunk = chunk or settings.SEARCH_CHUNK
    t = start
    while True:
        for entries in sample_channels(config, rng, chunk):
            yield ChannelMatrix(entries, t)
            t += 1


def genie_pair(
    h1: ChannelMatrix, scale, time_index: Optional[int] = None
) -> ChannelMatrix:
    if not isinstance(scale, PairingScale):
        scale = PairingScale(scale)
    t2 = h1.time_index + 1 if time_index is None else time_index
    return ChannelMatrix(scale.value * flip(h1.entries), t2)


def is_complementary_pair(
    h1: ChannelMatrix,
    h2: ChannelMatrix,
    tolerance: float,
    floor: Optional[float] = None,
) -> Optional[PairingScale]:
    if h1.entries.shape != h2.entries.shape:
        raise ConfigurationError("channel matrices differ in dimension")
    if tolerance < 0:
        raise ConfigurationError("tolerance must be non-negative")
    floor = settings.CHANNEL_FLOOR if floor is None else floor

    reference = h1.entries[0, 0]
    if abs(reference) < floor:
        return None
    c = h2.entries[0, 0] / reference
    if abs(c) == 0:
        return None

    deviation = np.max(np.abs(h2.entries - c * flip(h1.entries)))
    slack = _ROUNDING_SLACK * max(1.0, float(np.max(np.abs(h2.entries))))
    if deviation > tolerance + slack:
        return None
    return PairingScale(c)


def _level_count(q: QuantizerConfig) -> int:
    # magnitude levels i * step strictly below the cap; the cap is level n
    return math.ceil(q.magnitude_cap / q.magnitude_step - 1e-12)


def grid_indices(entries: np.ndarray, q: QuantizerConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Polar-grid (magnitude level, phase bin) indices of every entry"""
    entries = np.asarray(entries)
    cap_level = _level_count(q)
    magnitude = np.abs(entries)

    levels = np.minimum(np.rint(magnitude / q.magnitude_step), cap_level)
    levels = np.where(magnitude >= q.magnitude_cap * (1 - 1e-12), cap_level, levels)

    bins = np.rint(np.angle(entries) / q.phase_step) % q.phase_bins
    bins = np.where(levels == 0, 0, bins)
    return levels.astype(np.int64), bins.astype(np.int64)


def grid_values(levels: np.ndarray, bins: np.ndarray, q: QuantizerConfig) -> np.ndarray:
    cap_level = _level_count(q)
    magnitude = np.where(levels == cap_level, q.magnitude_cap, levels * q.magnitude_step)
    return magnitude * np.exp(1j * bins * q.phase_step)


def quantize(h: ChannelMatrix, q: QuantizerConfig) -> ChannelMatrix:
    levels, bins = grid_indices(h.entries, q)
    return ChannelMatrix(grid_values(levels, bins, q), h.time_index)


def _key(levels: np.ndarray, bins: np.ndarray) -> bytes:
    return np.stack([levels, bins]).astype(np.int32).tobytes()


def _source_indices(
    quantized: np.ndarray, scale: complex, q: QuantizerConfig
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Grid indices of flip(Q)/c, the quantized H(t1) that would pair with Q.

    Returns None when flip(Q)/c is not itself a grid point, in which case no
    earlier quantized matrix can equal it.
    """
    target = flip(quantized) / scale
    levels, bins = grid_indices(target, q)
    if not np.allclose(grid_values(levels, bins, q), target, rtol=0, atol=_GRID_MATCH_ATOL):
        return None
    return levels, bins


def find_pairing(
    sequence: Iterable[ChannelMatrix], q: QuantizerConfig
) -> Optional[PairedChannels]:
    """First slot pair whose quantized matrices are exactly complementary.

    Keeps an index from quantized-matrix key to the earliest unquantized
    matrix carrying that key, so the scan is linear in the sequence length.
    """
    earliest = {}
    scanned = 0
    for h in sequence:
        scanned += 1
        levels, bins = grid_indices(h.entries, q)
        quantized = grid_values(levels, bins, q)
        for scale in q.scale_candidates:
            source = _source_indices(quantized, scale, q)
            if source is None:
                continue
            h1 = earliest.get(_key(*source))
            if h1 is not None:
                episode_logger.log_pairing(True, scanned, t1=h1.time_index, t2=h.time_index)
                return PairedChannels(h1, h, PairingScale(scale), h1.time_index, h.time_index)
        earliest.setdefault(_key(levels, bins), h)

    episode_logger.log_pairing(False, scanned)
    return None


def count_pairings(entries: np.ndarray, q: QuantizerConfig, counts: Optional[Counter] = None):
    """Count every matching (t1, t2) slot pair in a (T, K, K) stack.

    `counts` carries keys seen in earlier stacks so a long stream can be
    processed chunk by chunk. Returns (matches, counts).
    """
    counts = Counter() if counts is None else counts
    levels, bins = grid_indices(entries, q)
    quantized = grid_values(levels, bins, q)

    sources = []
    for scale in q.scale_candidates:
        target = flip(quantized) / scale
        t_levels, t_bins = grid_indices(target, q)
        on_grid = np.all(
            np.abs(grid_values(t_levels, t_bins, q) - target) <= _GRID_MATCH_ATOL, axis=(-2, -1)
        )
        sources.append((t_levels, t_bins, on_grid))

    matches = 0
    for t in range(entries.shape[0]):
        for t_levels, t_bins, on_grid in sources:
            if on_grid[t]:
                matches += counts.get(_key(t_levels[t], t_bins[t]), 0)
        counts[_key(levels[t], bins[t])] += 1
    return matches, counts


def match_rate(
    config: SystemConfig,
    q: QuantizerConfig,
    num_slots: int,
    rng: np.random.Generator,
    chunk: Optional[int] = None,
) -> float:
    """Fraction of slot pairs among `num_slots` slots that pair under `q`"""
    if num_slots < 2:
        raise ConfigurationError("match rate needs at least two slots")
    chunk = chunk or settings.SEARCH_CHUNK
    counts = Counter()
    matches = 0
    remaining = num_slots
    while remaining > 0:
        size = min(chunk, remaining)
        found, counts = count_pairings(sample_channels(config, rng, size), q, counts)
        matches += found
        remaining -= size
    pairs = num_slots * (num_slots - 1) // 2
    logger.debug("match_rate_measured", slots=num_slots, matches=matches, pairs=pairs)
    return matches / pairs


def sample_matched_pair(
    config: SystemConfig,
    q: QuantizerConfig,
    rng: np.random.Generator,
    scale: complex = 1 + 0j,
    batch: int = 4096,
    max_batches: int = 10_000,
) -> PairedChannels:
    """Draw (H(t1), H(t2)) conditioned on a quantized complementary match.

    Entries are independent and the match condition factorizes over
    entries, so each entry pair is drawn jointly by rejection.
    """
    size = config.num_users
    signs = np.where(np.eye(size, dtype=bool), 1.0, -1.0)
    h1 = np.empty((size, size), dtype=np.complex128)
    h2 = np.empty((size, size), dtype=np.complex128)

    for j, i in itertools.product(range(size), range(size)):
        for _ in range(max_batches):
            first = complex_normal(rng, batch)
            second = complex_normal(rng, batch)
            target = scale * signs[j, i] * grid_values(*grid_indices(first, q), q)
            levels, bins = grid_indices(second, q)
            hit = np.abs(grid_values(levels, bins, q) - target) <= _GRID_MATCH_ATOL
            if hit.any():
                index = int(np.argmax(hit))
                h1[j, i], h2[j, i] = first[index], second[index]
                break
        else:
            raise ConfigurationError(
                f"no quantized match for entry ({j}, {i}); scale {scale} may be off-grid"
            )

    return PairedChannels(
        ChannelMatrix(h1, 0), ChannelMatrix(h2, 1), PairingScale(scale), 0, 1
    )


def acquire_pairing(
    config: SystemConfig,
    mode: PairingMode,
    rng: np.random.Generator,
    q: Optional[QuantizerConfig] = None,
    scale: complex = 1 + 0j,
    horizon: Optional[int] = None,
) -> Optional[PairedChannels]:
    """Pairing event that opens an episode.

    Genie mode builds H(t2) from H(t1) at t1 = 0, t2 = 1. Search mode scans a
    fresh channel stream for a quantized match within `horizon` slots and
    returns None when none is found.
    """
    if mode == PairingMode.GENIE:
        h1 = sample_channel(config, rng, time_index=0)
        return PairedChannels(h1, genie_pair(h1, scale, time_index=1), PairingScale(scale), 0, 1)

    q = q or settings.default_quantizer()
    horizon = horizon or settings.SEARCH_HORIZON
    return find_pairing(itertools.islice(channel_stream(config, rng), horizon), q)
