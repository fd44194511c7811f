from functools import partial

import numpy as np
import pytest

from ergodic_ia.config import settings
from ergodic_ia.delayed_csit import csit_episode
from ergodic_ia.errors import DegenerateDrawError
from ergodic_ia.executor import EpisodeExecutor, EpisodeOutcome, RunSummary, run_resampled, runner_name
from ergodic_ia.models import EpisodeStatus, PairingMode, SystemConfig


class _FlakyRunner:
    """Fails the first `failures` calls with a degenerate draw"""

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def __call__(self, config, rng):
        self.calls += 1
        if self.calls <= self.failures:
            raise DegenerateDrawError("planted", call=self.calls)
        return EpisodeOutcome(status=EpisodeStatus.COMPLETED, max_error=0.0)


class TestResampling:
    def test_aborts_are_counted(self, rng, noiseless_config):
        outcome = run_resampled(_FlakyRunner(3), noiseless_config, rng)
        assert outcome.status == EpisodeStatus.COMPLETED
        assert outcome.aborts == 3

    def test_gives_up_after_the_limit(self, rng, noiseless_config):
        outcome = run_resampled(_FlakyRunner(10**9), noiseless_config, rng)
        assert outcome.status == EpisodeStatus.ABORTED
        assert outcome.aborts == settings.MAX_RESAMPLES

    def test_summary_counts(self, noiseless_config):
        summary = EpisodeExecutor(workers=1, batch_size=4).run(_FlakyRunner(2), noiseless_config, 5, seed=1)
        assert summary.episodes_completed == 5
        assert summary.episodes_aborted == 2

    def test_runner_name_of_partial(self):
        assert runner_name(partial(csit_episode, pairing_mode=PairingMode.GENIE)) == "csit_episode"


class TestDeterminism:
    @pytest.mark.parametrize("workers", [1, 3])
    def test_same_result_for_any_worker_count(self, workers):
        config = SystemConfig.at_snr_db(30.0, num_users=3)
        reference = EpisodeExecutor(workers=1, batch_size=7).run(csit_episode, config, 30, seed=99)
        summary = EpisodeExecutor(workers=workers, batch_size=7).run(csit_episode, config, 30, seed=99)
        rates = [o.sum_rate for o in summary.outcomes]
        assert rates == [o.sum_rate for o in reference.outcomes]
        assert summary.mean_sum_rate == reference.mean_sum_rate

    def test_seed_changes_the_draws(self):
        config = SystemConfig.at_snr_db(30.0, num_users=3)
        executor = EpisodeExecutor(workers=2, batch_size=10)
        a = executor.run(csit_episode, config, 20, seed=1)
        b = executor.run(csit_episode, config, 20, seed=2)
        assert a.mean_sum_rate != b.mean_sum_rate

    def test_resource_usage_is_reported(self, noiseless_config):
        summary = EpisodeExecutor(workers=2, batch_size=5).run(csit_episode, noiseless_config, 12, seed=3)
        assert summary.resource_usage["batches"] == 3
        assert summary.resource_usage["workers"] == 2
        assert summary.resource_usage["memory_rss_mb"] > 0
        assert summary.max_error < 1e-9
        assert summary.mean_phase2_power > 0


class TestUnpaired:
    def test_search_horizon_exhaustion_is_unpaired(self, noiseless_config, coarse_quantizer, monkeypatch):
        monkeypatch.setattr(settings, "SEARCH_HORIZON", 2)
        runner = partial(csit_episode, pairing_mode=PairingMode.SEARCH, q=coarse_quantizer)
        summary = EpisodeExecutor(workers=1, batch_size=5).run(runner, noiseless_config, 5, seed=4)
        assert summary.episodes_unpaired == 5
        assert summary.episodes_completed == 0
        assert summary.episodes_aborted == 5
        assert summary.mean_sum_rate is None
        assert summary.ledgers == []

    def test_mixed_outcomes(self):
        summary = RunSummary(
            outcomes=[
                EpisodeOutcome(status=EpisodeStatus.COMPLETED, sum_rate=2.0, aborts=1),
                EpisodeOutcome(status=EpisodeStatus.COMPLETED, sum_rate=4.0),
                EpisodeOutcome(status=EpisodeStatus.UNPAIRED),
                EpisodeOutcome(status=EpisodeStatus.ABORTED, aborts=settings.MAX_RESAMPLES),
            ]
        )
        assert summary.episodes_completed == 2
        assert summary.episodes_unpaired == 1
        assert summary.episodes_aborted == 1 + settings.MAX_RESAMPLES + 1
        assert np.isclose(summary.mean_sum_rate, 3.0)
