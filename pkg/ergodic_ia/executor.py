import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import psutil
import structlog

from ergodic_ia.config import settings
from ergodic_ia.errors import DegenerateDrawError
from ergodic_ia.logger import episode_logger, system_logger
from ergodic_ia.models import DofLedgerEntry, EpisodeStatus, SystemConfig

logger = structlog.get_logger()


@dataclass
class EpisodeOutcome:
    status: EpisodeStatus
    ledger: Optional[DofLedgerEntry] = None
    sum_rate: Optional[float] = None
    max_error: Optional[float] = None
    phase2_power: Optional[float] = None
    aborts: int = 0


Runner = Callable[[SystemConfig, np.random.Generator], EpisodeOutcome]


@dataclass
class BatchResult:
    batch_index: int
    outcomes: List[EpisodeOutcome] = field(default_factory=list)


@dataclass
class RunSummary:
    outcomes: List[EpisodeOutcome]
    wall_time: float = 0.0
    resource_usage: Dict[str, Any] = field(default_factory=dict)

    @property
    def completed(self) -> List[EpisodeOutcome]:
        """Outcomes that decoded"""
        return [o for o in self.outcomes if o.status == EpisodeStatus.COMPLETED]

    @property
    def episodes_completed(self) -> int:
        """Number of decoded episodes"""
        return len(self.completed)

    @property
    def episodes_unpaired(self) -> int:
        """Searches that ran out of horizon"""
        return sum(1 for o in self.outcomes if o.status == EpisodeStatus.UNPAIRED)

    @property
    def episodes_aborted(self) -> int:
        # every resampled degenerate draw and every unpaired search counts
        return sum(o.aborts for o in self.outcomes) + self.episodes_unpaired

    @property
    def mean_sum_rate(self) -> Optional[float]:
        """Mean sum rate over decoded episodes, bits/slot"""
        rates = [o.sum_rate for o in self.completed if o.sum_rate is not None]
        return float(np.mean(rates)) if rates else None

    @property
    def max_error(self) -> Optional[float]:
        """Worst decode error over decoded episodes"""
        errors = [o.max_error for o in self.completed if o.max_error is not None]
        return float(np.max(errors)) if errors else None

    @property
    def mean_phase2_power(self) -> Optional[float]:
        """Mean phase-2 transmit power per symbol"""
        powers = [o.phase2_power for o in self.completed if o.phase2_power is not None]
        return float(np.mean(powers)) if powers else None

    @property
    def ledgers(self) -> List[DofLedgerEntry]:
        """DoF ledgers of decoded episodes"""
        return [o.ledger for o in self.completed if o.ledger is not None]


def runner_name(runner: Runner) -> str:
    """Scheme name of a runner, looking through functools.partial"""
    inner = getattr(runner, "func", runner)
    return getattr(inner, "__name__", "episode")


def run_resampled(runner: Runner, config: SystemConfig, rng: np.random.Generator) -> EpisodeOutcome:
    """Run one episode, resampling degenerate draws up to MAX_RESAMPLES times"""
    for attempt in range(settings.MAX_RESAMPLES):
        try:
            outcome = runner(config, rng)
        except DegenerateDrawError as e:
            episode_logger.log_episode_aborted(runner_name(runner), e.reason, attempt, **e.context)
            continue
        outcome.aborts = attempt
        episode_logger.log_episode_completed(runner_name(runner), outcome.status.value, attempt)
        return outcome

    logger.warning("Episode abandoned after resampling", attempts=settings.MAX_RESAMPLES)
    return EpisodeOutcome(status=EpisodeStatus.ABORTED, aborts=settings.MAX_RESAMPLES)


class EpisodeExecutor:
    """Runs independent episodes in seeded batches over a thread pool.

    Batch b draws from the b-th child of SeedSequence(seed); the batch
    layout depends only on the episode count, so results are identical for
    any number of workers.
    """

    def __init__(self, workers: Optional[int] = None, batch_size: Optional[int] = None):
        self.workers = workers or settings.MAX_WORKERS
        self.batch_size = batch_size or settings.BATCH_SIZE

    def _run_batch(
        self,
        runner: Runner,
        config: SystemConfig,
        batch_index: int,
        count: int,
        seed_seq: np.random.SeedSequence,
    ) -> BatchResult:
        """Run one batch on its own generator"""
        rng = np.random.default_rng(seed_seq)
        episode_logger.log_batch_event("started", batch_index, episodes=count)
        result = BatchResult(batch_index)
        for _ in range(count):
            result.outcomes.append(run_resampled(runner, config, rng))
        episode_logger.log_batch_event("completed", batch_index, episodes=count)
        return result

    def run(self, runner: Runner, config: SystemConfig, episodes: int, seed: int) -> RunSummary:
        """Run episodes in seeded batches and summarize them"""
        num_batches = math.ceil(episodes / self.batch_size)
        children = np.random.SeedSequence(seed).spawn(num_batches)
        sizes = [
            min(self.batch_size, episodes - b * self.batch_size) for b in range(num_batches)
        ]

        process = psutil.Process()
        cpu_before = process.cpu_times()
        start = time.perf_counter()

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            batches = list(
                pool.map(
                    lambda b: self._run_batch(runner, config, b, sizes[b], children[b]),
                    range(num_batches),
                )
            )

        cpu_after = process.cpu_times()
        summary = RunSummary(
            outcomes=[o for batch in sorted(batches, key=lambda r: r.batch_index) for o in batch.outcomes],
            wall_time=time.perf_counter() - start,
            resource_usage={
                "memory_rss_mb": round(process.memory_info().rss / 1024 / 1024, 1),
                "cpu_time_ms": int(
                    (cpu_after.user + cpu_after.system - cpu_before.user - cpu_before.system)
                    * 1000
                ),
                "workers": self.workers,
                "batches": num_batches,
            },
        )

        system_logger.log_run_complete(
            scheme=runner_name(runner),
            episodes_completed=summary.episodes_completed,
            episodes_aborted=summary.episodes_aborted,
            wall_time_seconds=round(summary.wall_time, 3),
            **summary.resource_usage,
        )
        return summary
