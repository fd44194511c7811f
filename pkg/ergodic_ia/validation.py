from fractions import Fraction
from functools import partial
from typing import Callable, Dict, List, Optional

import numpy as np
import structlog

from ergodic_ia.channel_model import (
    ChannelMatrix,
    acquire_pairing,
    genie_pair,
    is_complementary_pair,
    quantize,
    sample_channel,
)
from ergodic_ia.config import settings
from ergodic_ia.delayed_csit import csit_episode, interference_residual, run_episode_csit
from ergodic_ia.delayed_output_feedback import outputfb_episode, run_episode_outputfb
from ergodic_ia.ergodic_baseline import baseline_episode, cross_coefficients
from ergodic_ia.errors import (
    DegenerateDrawError,
    FeedbackCausalityError,
    TransmitterBlindnessError,
)
from ergodic_ia.executor import EpisodeExecutor, RunSummary, Runner
from ergodic_ia.logger import system_logger
from ergodic_ia.metrics import dof_formulas
from ergodic_ia.models import (
    FeedbackKind,
    PairingMode,
    PropertyResult,
    QuantizerConfig,
    SystemConfig,
)

logger = structlog.get_logger()


class PropertyValidator:
    """Property suite run by `verify`.

    Every check is deterministic given the seed and returns a
    PropertyResult; nothing raises out of `run_all`.
    """

    EXACTNESS_USERS = range(3, 9)
    EXACTNESS_LIMIT = 1e-8
    FORMULA_ORDER_MAX_K = 10**4
    LIMIT_K = 10**6
    LIMIT_TOLERANCE = 1e-4

    # closed-form values at K = 3
    FORMULAS_AT_THREE = {
        "proposed": Fraction(6, 5),
        "retro_csit": Fraction(9, 8),
        "retro_outputfb": Fraction(6, 5),
    }

    def __init__(
        self,
        episodes_per_k: int = 200,
        seed: Optional[int] = None,
        executor: Optional[EpisodeExecutor] = None,
    ):
        self.episodes_per_k = episodes_per_k
        self.seed = settings.DEFAULT_SEED if seed is None else seed
        self.executor = executor or EpisodeExecutor()
        self._summaries: Dict[str, Dict[int, RunSummary]] = {}

    @property
    def runners(self) -> Dict[str, Runner]:
        """Delayed schemes checked for exactness"""
        return {
            "delayed_csit": partial(csit_episode, feedback_kind=FeedbackKind.CSI),
            "delayed_time_index": partial(csit_episode, feedback_kind=FeedbackKind.TIME_INDEX),
            "delayed_output_fb": outputfb_episode,
        }

    def checks(self) -> Dict[str, Callable[[], PropertyResult]]:
        """Checks in the order `verify` prints them"""
        named = {
            "formula_table": self.check_formula_table,
            "formula_ordering": self.check_formula_ordering,
            "pairing_detection": self.check_pairing_detection,
            "quantizer_grid": self.check_quantizer_grid,
            "baseline_cancellation": self.check_baseline_cancellation,
        }
        for scheme in self.runners:
            named[f"exactness_{scheme}"] = partial(self.check_exactness, scheme)
        named.update(
            {
                "ledger_invariant": self.check_ledger_invariant,
                "interference_subtraction": self.check_interference_subtraction,
                "feedback_kind_equivalence": self.check_feedback_equivalence,
                "transmitter_blindness": self.check_transmitter_blindness,
                "feedback_causality": self.check_causality,
            }
        )
        return named

    def run_all(self) -> List[PropertyResult]:
        """Run every check; a crash counts as a failure"""
        results = []
        for name, check in self.checks().items():
            try:
                result = check()
            except Exception as e:
                logger.error("Property check crashed", name=name, error=str(e))
                result = PropertyResult(name=name, passed=False, detail=f"{type(e).__name__}: {e}")
            system_logger.log_property_check(result.name, result.passed, detail=result.detail)
            results.append(result)
        return results

    def _genie_config(self, num_users: int, **overrides) -> SystemConfig:
        return SystemConfig(num_users=num_users, noise_variance=0.0, rng_seed=self.seed, **overrides)

    def _rng(self, *keys: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *keys]))

    def _scheme_summaries(self, scheme: str) -> Dict[int, RunSummary]:
        """Noiseless runs per K, cached across checks"""
        if scheme not in self._summaries:
            runner = self.runners[scheme]
            self._summaries[scheme] = {
                k: self.executor.run(runner, self._genie_config(k), self.episodes_per_k, self.seed)
                for k in self.EXACTNESS_USERS
            }
        return self._summaries[scheme]

    def check_formula_table(self) -> PropertyResult:
        """Closed forms at K = 3 and their large-K limits"""
        name = "formula_table"
        at_three = dof_formulas(3)._asdict()
        for key, expected in self.FORMULAS_AT_THREE.items():
            if at_three[key] != expected:
                return PropertyResult(name=name, passed=False, detail=f"K=3 {key}={at_three[key]}")

        limits = dof_formulas(self.LIMIT_K)
        for key, expected in (("proposed", 2), ("retro_csit", 1), ("retro_outputfb", 1)):
            value = float(getattr(limits, key))
            if abs(value - expected) > self.LIMIT_TOLERANCE:
                return PropertyResult(
                    name=name, passed=False, detail=f"K={self.LIMIT_K} {key}={value}"
                )
        return PropertyResult(name=name, passed=True, detail="K=3 values and K->inf limits")

    def check_formula_ordering(self) -> PropertyResult:
        """Proposed DoF increases in K and dominates both retrospective values"""
        name = "formula_ordering"
        previous = Fraction(0)
        for k in range(3, self.FORMULA_ORDER_MAX_K + 1):
            f = dof_formulas(k)
            if f.proposed <= previous:
                return PropertyResult(name=name, passed=False, detail=f"proposed not increasing at K={k}")
            if f.proposed <= f.retro_csit:
                return PropertyResult(name=name, passed=False, detail=f"proposed <= retro_csit at K={k}")
            if (f.proposed == f.retro_outputfb) != (k == 3) or f.proposed < f.retro_outputfb:
                return PropertyResult(name=name, passed=False, detail=f"retro_outputfb ordering at K={k}")
            previous = f.proposed
        return PropertyResult(
            name=name, passed=True, detail=f"exact over K=3..{self.FORMULA_ORDER_MAX_K}"
        )

    def check_pairing_detection(self, trials: int = 200) -> PropertyResult:
        """Genie pairs are detected and random pairs rejected"""
        name = "pairing_detection"
        rng = self._rng(1)
        config = self._genie_config(3)
        for trial in range(trials):
            h1 = sample_channel(config, rng)
            scale = complex(rng.standard_normal(), rng.standard_normal())
            h2 = genie_pair(h1, scale)
            detected = is_complementary_pair(h1, h2, tolerance=0.0)
            if detected is None or not np.isclose(detected.value, scale, rtol=1e-12, atol=0):
                return PropertyResult(name=name, passed=False, detail=f"genie pair missed at trial {trial}")

            perturbed = h2.entries.copy()
            perturbed[0, 1] += 1e-3
            if is_complementary_pair(h1, ChannelMatrix(perturbed, h2.time_index), tolerance=0.0):
                return PropertyResult(name=name, passed=False, detail=f"perturbed pair accepted at trial {trial}")
        return PropertyResult(name=name, passed=True, detail=f"{trials} constructed pairs")

    def check_quantizer_grid(self, trials: int = 500) -> PropertyResult:
        """Quantized entries stay within the grid error bound"""
        name = "quantizer_grid"
        rng = self._rng(2)
        config = self._genie_config(3)
        for q in (
            settings.default_quantizer(),
            QuantizerConfig(magnitude_step=0.25, phase_bins=16, magnitude_cap=3.0),
        ):
            for _ in range(trials):
                h = sample_channel(config, rng)
                qh = quantize(h, q)
                if not np.allclose(quantize(qh, q).entries, qh.entries, rtol=0, atol=1e-12):
                    return PropertyResult(name=name, passed=False, detail="quantize is not idempotent")
                under_cap = np.abs(h.entries) < q.magnitude_cap
                error = np.abs(qh.entries - h.entries)[under_cap]
                if error.size and error.max() > q.error_bound + 1e-12:
                    return PropertyResult(
                        name=name, passed=False, detail=f"error {error.max():.3g} > {q.error_bound:.3g}"
                    )
        return PropertyResult(name=name, passed=True, detail="idempotent within the error bound")

    def check_baseline_cancellation(self) -> PropertyResult:
        """Full-CSIT baseline cancels all cross terms"""
        name = "baseline_cancellation"
        worst_cross = 0.0
        for k_users in self.EXACTNESS_USERS:
            rng = self._rng(3, k_users)
            config = self._genie_config(k_users)
            for _ in range(self.episodes_per_k):
                pair = acquire_pairing(config, PairingMode.GENIE, rng)
                for k in range(k_users):
                    worst_cross = max(
                        worst_cross, float(np.max(np.abs(np.delete(cross_coefficients(pair, k), k))))
                    )
            summary = self.executor.run(baseline_episode, config, self.episodes_per_k, self.seed)
            if summary.max_error is None or summary.max_error >= self.EXACTNESS_LIMIT:
                return PropertyResult(
                    name=name, passed=False, detail=f"K={k_users} decode error {summary.max_error}"
                )
        passed = worst_cross < settings.EXACTNESS_TOLERANCE
        return PropertyResult(name=name, passed=passed, detail=f"largest cross coefficient {worst_cross:.3g}")

    def check_exactness(self, scheme: str) -> PropertyResult:
        """Noiseless decoding is exact for every K"""
        name = f"exactness_{scheme}"
        for k, summary in self._scheme_summaries(scheme).items():
            if summary.episodes_completed != self.episodes_per_k:
                return PropertyResult(
                    name=name, passed=False, detail=f"K={k}: {summary.episodes_aborted} aborted"
                )
            if summary.max_error >= self.EXACTNESS_LIMIT:
                return PropertyResult(
                    name=name, passed=False, detail=f"K={k}: max error {summary.max_error:.3g}"
                )
        return PropertyResult(
            name=name,
            passed=True,
            detail=f"K={self.EXACTNESS_USERS.start}..{self.EXACTNESS_USERS.stop - 1}, "
            f"{self.episodes_per_k} episodes each",
        )

    def check_ledger_invariant(self) -> PropertyResult:
        """Every episode decodes 2K messages over K+2 slots"""
        name = "ledger_invariant"
        for scheme in self.runners:
            for k, summary in self._scheme_summaries(scheme).items():
                for entry in summary.ledgers:
                    if entry.messages_decoded != 2 * k or entry.slots_consumed != k + 2:
                        return PropertyResult(
                            name=name,
                            passed=False,
                            detail=f"{scheme} K={k}: {entry.messages_decoded}/{entry.slots_consumed}",
                        )
        return PropertyResult(name=name, passed=True, detail="2K messages over K+2 slots")

    def check_interference_subtraction(self) -> PropertyResult:
        """Phase-2 differences remove all interference"""
        name = "interference_subtraction"
        worst = 0.0
        for k_users in self.EXACTNESS_USERS:
            rng = self._rng(4, k_users)
            ep, _ = run_episode_csit(
                self._genie_config(k_users), PairingMode.GENIE, FeedbackKind.CSI, rng
            )
            worst = max(worst, max(interference_residual(ep, j) for j in range(k_users)))
        return PropertyResult(
            name=name, passed=worst < settings.EXACTNESS_TOLERANCE, detail=f"largest residual {worst:.3g}"
        )

    def check_feedback_equivalence(self, episodes: int = 20) -> PropertyResult:
        """CSI and time-index feedback decode identically"""
        name = "feedback_kind_equivalence"
        for k_users in self.EXACTNESS_USERS:
            config = self._genie_config(k_users)
            for episode in range(episodes):
                decoded = []
                for kind in (FeedbackKind.CSI, FeedbackKind.TIME_INDEX):
                    try:
                        ep, _ = run_episode_csit(config, PairingMode.GENIE, kind, self._rng(5, k_users, episode))
                    except DegenerateDrawError:
                        ep = None
                    decoded.append(None if ep is None else ep.estimates)
                same = (decoded[0] is None and decoded[1] is None) or (
                    decoded[0] is not None
                    and decoded[1] is not None
                    and np.array_equal(decoded[0], decoded[1])
                )
                if not same:
                    return PropertyResult(
                        name=name, passed=False, detail=f"K={k_users} episode {episode} differs"
                    )
        return PropertyResult(name=name, passed=True, detail="bitwise identical estimates")

    def check_transmitter_blindness(self) -> PropertyResult:
        """Output-feedback transmitters never read channel state"""
        name = "transmitter_blindness"
        checked = 0
        for k_users in self.EXACTNESS_USERS:
            rng = self._rng(6, k_users)
            for _ in range(self.episodes_per_k // 10 or 1):
                try:
                    ep, _ = run_episode_outputfb(self._genie_config(k_users), PairingMode.GENIE, rng)
                except TransmitterBlindnessError as e:
                    return PropertyResult(name=name, passed=False, detail=str(e))
                except DegenerateDrawError:
                    continue
                checked += len(ep.recorder.records)
        return PropertyResult(name=name, passed=True, detail=f"{checked} transmitter computations")

    def check_causality(self) -> PropertyResult:
        """Phase 2 never starts before feedback arrives"""
        name = "feedback_causality"
        for delay in (1, 3):
            for k_users in (3, 5):
                config = self._genie_config(k_users, delay_slots=delay)
                rng = self._rng(7, delay, k_users)
                try:
                    csit, _ = run_episode_csit(config, PairingMode.GENIE, FeedbackKind.TIME_INDEX, rng)
                    outfb, _ = run_episode_outputfb(config, PairingMode.GENIE, rng)
                except FeedbackCausalityError as e:
                    return PropertyResult(name=name, passed=False, detail=str(e))
                except DegenerateDrawError:
                    continue
                for ep in (csit, outfb):
                    if ep.recorder.phase_slots(2)[0] < ep.pair.t2 + delay:
                        return PropertyResult(
                            name=name, passed=False, detail=f"phase 2 starts early with delay {delay}"
                        )
        return PropertyResult(name=name, passed=True, detail="delays 1 and 3")
