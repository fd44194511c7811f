"""Rates of effective linear models, DoF slopes and closed-form DoF values."""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from ergodic_ia.config import settings
from ergodic_ia.errors import ConfigurationError, InsufficientEpisodesError, SingularCovarianceError
from ergodic_ia.executor import EpisodeExecutor, Runner
from ergodic_ia.models import DofReport, Scheme, SystemConfig

K_MAX = 10**6


@dataclass
class SourceLedger:
    """Independent zero-mean sources an episode is linear in.

    Every observed or transmitted quantity of an episode is a linear form
    over these sources; `values` holds their realization and `variances`
    their second moments, so any form has value `form @ values` and any set
    of forms has covariance `F diag(variances) F^H`.
    """

    values: np.ndarray
    variances: np.ndarray
    blocks: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Tuple[str, np.ndarray, float]]) -> "SourceLedger":
        offsets = {}
        values, variances = [], []
        start = 0
        for name, block_values, variance in blocks:
            block_values = np.asarray(block_values, dtype=np.complex128).ravel()
            offsets[name] = (start, block_values.size)
            values.append(block_values)
            variances.append(np.full(block_values.size, float(variance)))
            start += block_values.size
        return cls(np.concatenate(values), np.concatenate(variances), offsets)

    @property
    def size(self) -> int:
        return self.values.size

    def index(self, name: str, position: int = 0) -> int:
        start, length = self.blocks[name]
        if not 0 <= position < length:
            raise IndexError(f"{name}[{position}] outside block of length {length}")
        return start + position

    def unit(self, name: str, position: int = 0) -> np.ndarray:
        form = np.zeros(self.size, dtype=np.complex128)
        form[self.index(name, position)] = 1.0
        return form

    def block(self, name: str) -> np.ndarray:
        start, length = self.blocks[name]
        return self.values[start:start + length]

    def evaluate(self, forms: np.ndarray):
        return np.asarray(forms) @ self.values

    def covariance(self, forms: np.ndarray, exclude: Iterable[int] = ()) -> np.ndarray:
        forms = np.atleast_2d(forms)
        keep = np.ones(self.size, dtype=bool)
        keep[list(exclude)] = False
        weighted = forms[:, keep] * self.variances[keep]
        return weighted @ forms[:, keep].conj().T


@dataclass
class LinearObservationModel:
    gain: np.ndarray
    noise_covariance: np.ndarray
    input_power: float
    slots_consumed: int

    def __post_init__(self):
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=np.complex128))
        self.noise_covariance = np.atleast_2d(np.asarray(self.noise_covariance, dtype=np.complex128))
        rows = self.gain.shape[0]
        if self.noise_covariance.shape != (rows, rows):
            raise ConfigurationError(
                f"noise covariance {self.noise_covariance.shape} does not match gain {self.gain.shape}"
            )
        scale = max(1.0, float(np.max(np.abs(self.noise_covariance))))
        if not np.allclose(self.noise_covariance, self.noise_covariance.conj().T, atol=1e-10 * scale):
            raise ConfigurationError("noise covariance is not Hermitian")
        if np.min(np.linalg.eigvalsh(self.noise_covariance)) < -1e-9 * scale:
            raise ConfigurationError("noise covariance has negative eigenvalues")
        if self.input_power < 0 or self.slots_consumed < 1:
            raise ConfigurationError("input power must be >= 0 and slots_consumed >= 1")

    def error_covariance(self) -> np.ndarray:
        """Covariance of (statistic - input) for unit-gain estimators"""
        if self.gain.shape[0] != self.gain.shape[1]:
            raise ConfigurationError("error covariance needs a square gain")
        bias = self.gain - np.eye(self.gain.shape[0])
        return self.input_power * bias @ bias.conj().T + self.noise_covariance


def model_from_forms(
    ledger: SourceLedger,
    forms: np.ndarray,
    desired: Sequence[int],
    power: float,
    slots: int,
) -> LinearObservationModel:
    """Effective model of statistics `forms` for the sources in `desired`.

    Everything not in `desired` (noise and residual interference) is
    folded into the noise covariance.
    """
    forms = np.atleast_2d(forms)
    return LinearObservationModel(
        gain=forms[:, list(desired)],
        noise_covariance=ledger.covariance(forms, exclude=desired),
        input_power=power,
        slots_consumed=slots,
    )


def model_rate(m: LinearObservationModel) -> float:
    """(1/slots) log2 det(I + P G^H Sigma^-1 G), bits per channel slot"""
    try:
        factor = scipy.linalg.cho_factor(m.noise_covariance, lower=True)
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError("noise covariance is singular; use the exactness path") from e
    whitened = scipy.linalg.cho_solve(factor, m.gain)
    information = np.eye(m.gain.shape[1]) + m.input_power * (m.gain.conj().T @ whitened)
    sign, logdet = np.linalg.slogdet(information)
    return float(logdet / math.log(2) / m.slots_consumed)


def per_user_rates(models: Sequence[LinearObservationModel]) -> np.ndarray:
    return np.array([model_rate(m) for m in models])


def slope_from_points(snr_db: Sequence[float], sum_rates: Sequence[float]) -> float:
    """Least-squares slope of sum rate against log2(SNR)"""
    log2_snr = np.asarray(snr_db, dtype=float) * math.log2(10) / 10
    return float(stats.linregress(log2_snr, np.asarray(sum_rates, dtype=float)).slope)


def dof_slope(
    runner: Runner,
    num_users: int,
    snr_db_points: Sequence[float],
    episodes_per_point: int,
    seed: Optional[int] = None,
    executor: Optional[EpisodeExecutor] = None,
    **config_overrides,
) -> float:
    """Measured prelog of the per-slot sum rate.

    Every SNR point reuses the same seed, so the points differ only in SNR
    and the regression sees common random channels.
    """
    if len(snr_db_points) < 2:
        raise InsufficientEpisodesError("a slope needs at least two SNR points")
    if min(snr_db_points) < settings.MIN_SLOPE_SNR_DB:
        raise InsufficientEpisodesError(
            f"slope points must be >= {settings.MIN_SLOPE_SNR_DB} dB, got {min(snr_db_points)}"
        )
    if episodes_per_point < settings.MIN_SLOPE_EPISODES:
        raise InsufficientEpisodesError(
            f"need >= {settings.MIN_SLOPE_EPISODES} episodes per point, got {episodes_per_point}"
        )

    seed = settings.DEFAULT_SEED if seed is None else seed
    executor = executor or EpisodeExecutor()
    means = []
    for snr_db in snr_db_points:
        config = SystemConfig.at_snr_db(snr_db, num_users=num_users, rng_seed=seed, **config_overrides)
        summary = executor.run(runner, config, episodes_per_point, seed)
        if summary.mean_sum_rate is None:
            raise InsufficientEpisodesError(f"no completed episodes at {snr_db} dB")
        means.append(summary.mean_sum_rate)
    return slope_from_points(snr_db_points, means)


class DofFormulas(NamedTuple):
    proposed: Fraction
    retro_csit: Fraction
    retro_outputfb: Fraction
    baseline: Fraction


def dof_formulas(num_users: int) -> DofFormulas:
    if num_users < 3:
        raise ConfigurationError(f"formulas are stated for K >= 3, got {num_users}")
    k = num_users
    half = (k + 1) // 2
    return DofFormulas(
        proposed=Fraction(2 * k, k + 2),
        retro_csit=Fraction(k * k, k * k - 1),
        retro_outputfb=Fraction(half * k, half * (k - 1) + 1),
        baseline=Fraction(k, 2),
    )


def scheme_formula(scheme: Scheme, num_users: int) -> Fraction:
    formulas = dof_formulas(num_users)
    return formulas.baseline if scheme == Scheme.BASELINE else formulas.proposed


def figure_data(k_range: Iterable[int], k_max: int = K_MAX) -> pd.DataFrame:
    """Sum-DoF table for the proposed and retrospective schemes"""
    rows = []
    for k in k_range:
        if not 3 <= k <= k_max:
            raise ConfigurationError(f"K={k} outside [3, {k_max}]")
        formulas = dof_formulas(k)
        rows.append(
            {
                "K": k,
                "proposed": str(formulas.proposed),
                "retro_csit": str(formulas.retro_csit),
                "retro_outputfb": str(formulas.retro_outputfb),
                "proposed_decimal": float(formulas.proposed),
                "retro_csit_decimal": float(formulas.retro_csit),
                "retro_outputfb_decimal": float(formulas.retro_outputfb),
            }
        )
    return pd.DataFrame(rows)


def dof_report(
    scheme: Scheme,
    num_users: int,
    snr_points: List[Tuple[float, float]],
    messages_per_episode: int,
    slots_per_episode: int,
) -> DofReport:
    slope = (
        slope_from_points([s for s, _ in snr_points], [r for _, r in snr_points])
        if len(snr_points) >= 2
        else None
    )
    return DofReport(
        scheme=scheme,
        num_users=num_users,
        formula_value=scheme_formula(scheme, num_users),
        measured_slope=slope,
        snr_points=snr_points,
        messages_per_episode=messages_per_episode,
        slots_per_episode=slots_per_episode,
    )
