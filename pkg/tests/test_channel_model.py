import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ergodic_ia.channel_model import (
    ChannelMatrix,
    PairedChannels,
    PairingScale,
    acquire_pairing,
    channel_stream,
    count_pairings,
    find_pairing,
    flip,
    genie_pair,
    grid_indices,
    is_complementary_pair,
    match_rate,
    quantize,
    sample_channel,
    sample_channels,
    sample_matched_pair,
)
from ergodic_ia.ergodic_baseline import cross_coefficients
from ergodic_ia.errors import ConfigurationError
from ergodic_ia.models import PairingMode, QuantizerConfig, SystemConfig


class TestTypes:
    def test_scale_rejects_zero(self):
        with pytest.raises(ConfigurationError):
            PairingScale(0)

    def test_scale_rejects_nan(self):
        with pytest.raises(ConfigurationError):
            PairingScale(complex(float("nan"), 0))

    def test_channel_matrix_must_be_square(self):
        with pytest.raises(ConfigurationError):
            ChannelMatrix(np.ones((2, 3)))

    def test_paired_channels_need_ordered_slots(self, rng, noiseless_config):
        h = sample_channel(noiseless_config, rng)
        with pytest.raises(ConfigurationError):
            PairedChannels(h, genie_pair(h, 1), PairingScale(1), 4, 4)


class TestSampling:
    def test_flip_negates_off_diagonal(self):
        entries = np.arange(9, dtype=complex).reshape(3, 3) + 1
        flipped = flip(entries)
        assert_array_equal(np.diag(flipped), np.diag(entries))
        off = ~np.eye(3, dtype=bool)
        assert_array_equal(flipped[off], -entries[off])

    def test_flip_is_an_involution_on_stacks(self, rng, noiseless_config):
        stack = sample_channels(noiseless_config, rng, 5)
        assert_array_equal(flip(flip(stack)), stack)

    def test_unit_variance_entries(self, rng):
        config = SystemConfig(num_users=4)
        stack = sample_channels(config, rng, 20_000)
        assert stack.shape == (20_000, 4, 4)
        assert_allclose(np.mean(np.abs(stack) ** 2), 1.0, rtol=0.02)
        assert abs(np.mean(stack)) < 0.01

    def test_real_and_imaginary_variance(self, rng):
        stack = sample_channels(SystemConfig(num_users=4), rng, 20_000)
        assert_allclose(np.var(stack.real), 0.5, rtol=0.03)
        assert_allclose(np.var(stack.imag), 0.5, rtol=0.03)

    def test_stream_time_indices(self, rng, noiseless_config):
        stream = channel_stream(noiseless_config, rng, start=7, chunk=3)
        times = [h.time_index for h in itertools.islice(stream, 8)]
        assert times == list(range(7, 15))

    def test_same_seed_same_channels(self, noiseless_config):
        a = sample_channel(noiseless_config, np.random.default_rng(3))
        b = sample_channel(noiseless_config, np.random.default_rng(3))
        assert_array_equal(a.entries, b.entries)


class TestComplementaryPairs:
    @pytest.mark.parametrize("scale", [1, -1, 2.5, 0.3 - 1.7j])
    def test_genie_pair_is_detected_exactly(self, rng, scale):
        for k in range(3, 9):
            h1 = sample_channel(SystemConfig(num_users=k), rng)
            h2 = genie_pair(h1, scale)
            detected = is_complementary_pair(h1, h2, tolerance=0.0)
            assert detected is not None
            assert_allclose(detected.value, scale, rtol=1e-14)

    def test_genie_pair_composition(self, rng, noiseless_config):
        h = sample_channel(noiseless_config, rng)
        c, c2 = 2.5, 0.3 - 1.7j
        twice = genie_pair(genie_pair(h, c), c2)
        # the two flips cancel, leaving every entry scaled by c * c2
        assert_allclose(twice.entries, c * c2 * h.entries, rtol=1e-14)
        assert twice.time_index == h.time_index + 2

    def test_off_diagonal_perturbation_rejected(self, rng, noiseless_config):
        h1 = sample_channel(noiseless_config, rng)
        h2 = genie_pair(h1, 1)
        perturbed = h2.entries.copy()
        perturbed[2, 0] += 1e-6
        assert is_complementary_pair(h1, ChannelMatrix(perturbed, 1), tolerance=0.0) is None
        assert is_complementary_pair(h1, ChannelMatrix(perturbed, 1), tolerance=1e-5) is not None

    def test_diagonal_mismatch_rejected(self, rng, noiseless_config):
        h1 = sample_channel(noiseless_config, rng)
        h2 = genie_pair(h1, 1).entries.copy()
        h2[1, 1] *= 1.01
        assert is_complementary_pair(h1, ChannelMatrix(h2, 1), tolerance=1e-9) is None

    def test_reference_below_floor(self, rng, noiseless_config):
        entries = sample_channel(noiseless_config, rng).entries
        entries[0, 0] = 1e-9
        h1 = ChannelMatrix(entries)
        assert is_complementary_pair(h1, genie_pair(h1, 1), tolerance=0.0) is None

    def test_residual_of_genie_pair(self, rng, noiseless_config):
        pair = acquire_pairing(noiseless_config, PairingMode.GENIE, rng, scale=1.5j)
        assert (pair.t1, pair.t2) == (0, 1)
        assert pair.residual < 1e-15


class TestQuantizer:
    @pytest.mark.parametrize(
        "q",
        [
            QuantizerConfig(magnitude_step=1.0, phase_bins=4, magnitude_cap=2.0),
            QuantizerConfig(magnitude_step=0.3, phase_bins=12, magnitude_cap=2.5),
            QuantizerConfig(magnitude_step=0.125, phase_bins=64, magnitude_cap=4.0),
        ],
    )
    def test_idempotent_and_bounded(self, rng, q):
        config = SystemConfig(num_users=5)
        for _ in range(200):
            h = sample_channel(config, rng)
            qh = quantize(h, q)
            assert_allclose(quantize(qh, q).entries, qh.entries, atol=1e-12)
            under_cap = np.abs(h.entries) < q.magnitude_cap
            error = np.abs(qh.entries - h.entries)[under_cap]
            assert np.all(error <= q.error_bound + 1e-12)

    def test_zero_maps_to_origin(self, coarse_quantizer):
        levels, bins = grid_indices(np.array([0.0 + 0j, 0.2j, -0.1]), coarse_quantizer)
        assert_array_equal(levels, 0)
        assert_array_equal(bins, 0)

    def test_large_entries_clip_to_cap(self, coarse_quantizer):
        qh = quantize(ChannelMatrix(np.full((3, 3), 10.0 + 0j)), coarse_quantizer)
        assert_allclose(np.abs(qh.entries), coarse_quantizer.magnitude_cap)

    def test_cap_must_exceed_step(self):
        with pytest.raises(ValueError):
            QuantizerConfig(magnitude_step=2.0, phase_bins=4, magnitude_cap=1.0)

    @pytest.mark.parametrize("bins", [5, 7, 63])
    def test_odd_phase_bins_rejected(self, bins):
        with pytest.raises(ValueError, match="even"):
            QuantizerConfig(magnitude_step=1.0, phase_bins=bins, magnitude_cap=2.0)


class TestSearch:
    def test_counts_a_planted_pair(self, rng, noiseless_config, coarse_quantizer):
        h = sample_channel(noiseless_config, rng).entries
        matches, _ = count_pairings(np.stack([h, flip(h)]), coarse_quantizer)
        assert matches >= 1

    def test_find_pairing_returns_earliest_source(self, rng, noiseless_config, coarse_quantizer):
        h = sample_channel(noiseless_config, rng, time_index=0)
        twin = ChannelMatrix(h.entries.copy(), 1)
        partner = ChannelMatrix(flip(h.entries), 2)
        pair = find_pairing([h, twin, partner], coarse_quantizer)
        assert pair is not None
        assert (pair.t1, pair.t2) == (0, 2)

    def test_no_pair_in_empty_sequence(self, coarse_quantizer):
        assert find_pairing([], coarse_quantizer) is None

    def test_single_matrix_has_no_pair(self, rng, noiseless_config, coarse_quantizer):
        h = sample_channel(noiseless_config, rng, time_index=0)
        assert find_pairing([h], coarse_quantizer) is None

    def test_search_mode_finds_quantized_match(self, rng, noiseless_config, coarse_quantizer):
        pair = acquire_pairing(noiseless_config, PairingMode.SEARCH, rng, coarse_quantizer)
        assert pair is not None and pair.t1 < pair.t2
        assert_allclose(
            quantize(pair.h2, coarse_quantizer).entries,
            flip(quantize(pair.h1, coarse_quantizer).entries),
            atol=1e-9,
        )

    def test_search_horizon_exhausted(self, rng, noiseless_config, coarse_quantizer):
        assert acquire_pairing(noiseless_config, PairingMode.SEARCH, rng, coarse_quantizer, horizon=2) is None

    def test_coarse_match_rate_is_positive(self, rng, noiseless_config, coarse_quantizer):
        rate = match_rate(noiseless_config, coarse_quantizer, 50_000, rng)
        # nine independent entries, each matching with probability about 0.165
        assert 3e-8 < rate < 3e-7

    @pytest.mark.slow
    def test_match_rate_over_a_million_slots(self, rng, noiseless_config, coarse_quantizer):
        assert match_rate(noiseless_config, coarse_quantizer, 1_000_000, rng) > 0

    def test_matched_pair_quantizes_to_a_complementary_pair(self, rng, noiseless_config):
        q = QuantizerConfig(magnitude_step=0.5, phase_bins=16, magnitude_cap=3.0)
        pair = sample_matched_pair(noiseless_config, q, rng)
        assert_allclose(quantize(pair.h2, q).entries, flip(quantize(pair.h1, q).entries), atol=1e-9)
        assert pair.residual <= 2 * q.error_bound

    @pytest.mark.slow
    def test_residual_interference_shrinks_with_step(self, rng_factory, noiseless_config):
        means = []
        for step in (1.0, 0.5, 0.25):
            q = QuantizerConfig(magnitude_step=step, phase_bins=64, magnitude_cap=3.0)
            rng = rng_factory(8, int(step * 100))
            powers = []
            for _ in range(200):
                pair = sample_matched_pair(noiseless_config, q, rng)
                for k in range(3):
                    powers.append(np.sum(np.abs(np.delete(cross_coefficients(pair, k), k)) ** 2))
            means.append(np.mean(powers))
        assert means[0] > means[1] > means[2]
