import math
from functools import partial

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ergodic_ia import delayed_csit
from ergodic_ia.channel_model import acquire_pairing
from ergodic_ia.delayed_csit import (
    build_episode_csit,
    combine_phase1,
    csit_episode,
    decode_csit,
    interference_residual,
    oracle_decode_csit,
    phase2_transmit_csit,
    run_episode_csit,
)
from ergodic_ia.errors import ConfigurationError, DegenerateDrawError
from ergodic_ia.feedback import CsiFeedback, TimeIndexFeedback
from ergodic_ia.metrics import dof_slope, model_rate
from ergodic_ia.models import FeedbackKind, PairingMode, Scheme, SystemConfig
from ergodic_ia.validation import PropertyValidator


def _episode(config, rng, **kwargs):
    pair = acquire_pairing(config, PairingMode.GENIE, rng)
    return build_episode_csit(config, pair, rng, **kwargs)


class TestPhaseTwo:
    def test_equal_messages_send_nothing(self, rng, noiseless_config):
        x = np.array([1 + 1j, -0.5j, 2.0])
        ep = _episode(noiseless_config, rng, x_t1=x, x_t2=x)
        assert_array_equal(ep.phase2_sent, 0)

    def test_schedule_one_transmitter_per_slot(self, rng, noiseless_config):
        ep = _episode(noiseless_config, rng)
        slots = ep.recorder.phase_slots(2)
        assert slots == [ep.pair.t2 + 1 + k for k in range(3)]
        for k in range(3):
            senders = [r.transmitter for r in ep.recorder.records if r.phase == 2 and r.slot == slots[k]]
            assert senders == [k]

    def test_sends_own_difference(self, rng, noiseless_config):
        ep = _episode(noiseless_config, rng)
        value = phase2_transmit_csit(ep, 1)
        assert value == ep.x_t1[1] - ep.x_t2[1]

    def test_difference_power_is_twice_p(self, rng_factory):
        config = SystemConfig(num_users=3, power=1.0, noise_variance=0.0)
        rng = rng_factory(21)
        powers = [_episode(config, rng).phase2_power for _ in range(4000)]
        assert_allclose(np.mean(powers), 2.0, rtol=0.05)

    def test_normalized_difference_power(self, rng_factory):
        config = SystemConfig(num_users=3, power=1.0, noise_variance=0.0, normalize_power=True)
        rng = rng_factory(22)
        powers = [_episode(config, rng).phase2_power for _ in range(4000)]
        assert_allclose(np.mean(powers), 1.0, rtol=0.05)

    def test_phase_two_waits_for_the_delay(self, rng):
        config = SystemConfig(num_users=4, noise_variance=0.0, delay_slots=3)
        ep = _episode(config, rng)
        assert ep.phase2_start == ep.pair.t2 + 3
        assert ep.feedback.available_at == ep.phase2_start
        ep.recorder.check_causality()


class TestCombinePhase1:
    def test_noiseless_structure(self, rng, noiseless_config):
        ep = _episode(noiseless_config, rng)
        h1, x1, x2 = ep.pair.h1.entries, ep.x_t1.values, ep.x_t2.values
        for j in range(3):
            expected = h1[j, j] * (x1[j] + x2[j]) + sum(
                h1[j, m] * (x1[m] - x2[m]) for m in range(3) if m != j
            )
            assert_allclose(combine_phase1(ep, j), expected, atol=1e-12)

    def test_equal_messages_reduce_to_baseline(self, rng, noiseless_config):
        x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        ep = _episode(noiseless_config, rng, x_t1=x, x_t2=x)
        for j in range(3):
            assert_allclose(combine_phase1(ep, j), 2 * ep.pair.h1.entries[j, j] * x[j], atol=1e-12)

    def test_zero_input(self, rng, noiseless_config):
        ep = _episode(noiseless_config, rng, x_t1=np.zeros(3), x_t2=np.zeros(3))
        assert combine_phase1(ep, 0) == 0


class TestDecode:
    @pytest.mark.parametrize("num_users", range(3, 9))
    def test_noiseless_exact_recovery(self, rng, num_users):
        config = SystemConfig(num_users=num_users, noise_variance=0.0)
        for _ in range(25):
            ep, ledger = run_episode_csit(config, PairingMode.GENIE, FeedbackKind.CSI, rng)
            assert np.max(np.abs(ep.estimates - ep.truth)) < 1e-9
            assert (ledger.messages_decoded, ledger.slots_consumed) == (2 * num_users, num_users + 2)

    def test_matches_dense_oracle(self, rng):
        config = SystemConfig(num_users=6, noise_variance=0.0)
        ep = _episode(config, rng)
        for j in range(6):
            x1_hat, x2_hat, _ = decode_csit(ep, j)
            assert_allclose(oracle_decode_csit(ep, j), (x1_hat, x2_hat), atol=1e-9)

    def test_equal_messages(self, rng, noiseless_config):
        x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        ep = _episode(noiseless_config, rng, x_t1=x, x_t2=x)
        for j in range(3):
            x1_hat, x2_hat, _ = decode_csit(ep, j)
            assert_allclose([x1_hat, x2_hat], [x[j], x[j]], atol=1e-12)

    def test_interference_fully_subtracted(self, rng):
        ep = _episode(SystemConfig(num_users=5, noise_variance=0.0), rng)
        for j in range(5):
            assert interference_residual(ep, j) < 1e-12

    def test_noiseless_model_is_identity(self, rng, noiseless_config):
        ep = _episode(noiseless_config, rng)
        _, _, model = decode_csit(ep, 0)
        assert_allclose(model.gain, np.eye(2), atol=1e-12)
        assert_allclose(model.noise_covariance, 0, atol=1e-20)
        assert model.slots_consumed == 5

    def test_degenerate_phase_two_channel(self, rng, noiseless_config):
        ep = _episode(noiseless_config, rng)
        ep.phase2_channels[2].entries[0, 2] = 0
        with pytest.raises(DegenerateDrawError):
            decode_csit(ep, 0)

    def test_sign_fault_breaks_exactness(self, rng, noiseless_config, monkeypatch):
        monkeypatch.setattr(delayed_csit, "combine_outputs", lambda y1, y2, c: y1 - y2 / c)
        ep, _ = run_episode_csit(noiseless_config, PairingMode.GENIE, FeedbackKind.CSI, rng)
        assert np.max(np.abs(ep.estimates - ep.truth)) > 1e-3

    def test_verify_suite_catches_sign_fault(self, monkeypatch):
        monkeypatch.setattr(delayed_csit, "combine_outputs", lambda y1, y2, c: y1 - y2 / c)
        validator = PropertyValidator(episodes_per_k=5)
        result = validator.check_exactness("delayed_csit")
        assert not result.passed


class TestFeedbackKinds:
    def test_payloads(self, rng, noiseless_config):
        pair = acquire_pairing(noiseless_config, PairingMode.GENIE, rng)
        csi = build_episode_csit(noiseless_config, pair, np.random.default_rng(1), FeedbackKind.CSI)
        index = build_episode_csit(noiseless_config, pair, np.random.default_rng(1), FeedbackKind.TIME_INDEX)
        assert isinstance(csi.feedback, CsiFeedback)
        assert isinstance(index.feedback, TimeIndexFeedback)
        assert (index.feedback.t1, index.feedback.t2) == (pair.t1, pair.t2)

    @pytest.mark.parametrize("num_users", [3, 6])
    def test_identical_decoded_symbols(self, num_users, rng_factory):
        config = SystemConfig.at_snr_db(30.0, num_users=num_users)
        for seed in range(10):
            csi, ledger_csi = run_episode_csit(config, PairingMode.GENIE, FeedbackKind.CSI, rng_factory(seed))
            index, ledger_index = run_episode_csit(
                config, PairingMode.GENIE, FeedbackKind.TIME_INDEX, rng_factory(seed)
            )
            assert_array_equal(csi.estimates, index.estimates)
            assert ledger_csi.scheme == Scheme.DELAYED_CSIT
            assert ledger_index.scheme == Scheme.DELAYED_TIME_INDEX

    def test_output_feedback_is_rejected(self, rng, noiseless_config):
        with pytest.raises(ConfigurationError):
            run_episode_csit(noiseless_config, PairingMode.GENIE, FeedbackKind.OUTPUT, rng)


class TestEpisode:
    @pytest.mark.parametrize("num_users, ratio", [(3, (6, 5)), (10, (5, 3))])
    def test_ledger_ratio(self, rng, num_users, ratio):
        config = SystemConfig(num_users=num_users, noise_variance=0.0)
        outcome = csit_episode(config, rng)
        assert (outcome.ledger.ratio.numerator, outcome.ledger.ratio.denominator) == ratio

    def test_search_mode_episode(self, rng, coarse_quantizer):
        config = SystemConfig.at_snr_db(30.0, num_users=3)
        ep, ledger = run_episode_csit(config, PairingMode.SEARCH, FeedbackKind.CSI, rng, coarse_quantizer)
        assert ep is not None
        assert ep.pair.t2 > ep.pair.t1
        assert ledger.slots_consumed == 5

    def test_noisy_rate_is_positive(self, rng, noisy_config):
        ep, _ = run_episode_csit(noisy_config, PairingMode.GENIE, FeedbackKind.CSI, rng)
        assert all(model_rate(m) > 0 for m in ep.models)

    @pytest.mark.slow
    def test_slope_is_six_fifths(self, executor):
        runner = partial(csit_episode, feedback_kind=FeedbackKind.CSI)
        slope = dof_slope(runner, 3, [40.0, 60.0], 10_000, executor=executor)
        assert math.isclose(slope, 1.2, rel_tol=0.05)
