import math
from enum import Enum
from fractions import Fraction
from typing import Annotated, List, Optional, Tuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PlainSerializer,
    PlainValidator,
    field_validator,
    model_validator,
)

from ergodic_ia.config import settings


def _to_complex(value) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    return complex(value)


ComplexValue = Annotated[
    complex,
    PlainValidator(_to_complex),
    PlainSerializer(lambda c: [c.real, c.imag], return_type=list),
]


class Scheme(str, Enum):
    BASELINE = "baseline"
    DELAYED_CSIT = "delayed_csit"
    DELAYED_TIME_INDEX = "delayed_time_index"
    DELAYED_OUTPUT_FB = "delayed_output_fb"
    FORMULAS = "formulas"


class PairingMode(str, Enum):
    GENIE = "genie"
    SEARCH = "search"


class FeedbackKind(str, Enum):
    CSI = "csi"
    TIME_INDEX = "time_index"
    OUTPUT = "output"


class SymbolKind(str, Enum):
    TRANSMIT = "transmit"
    RECEIVE = "receive"


class EpisodeStatus(str, Enum):
    COMPLETED = "completed"
    ABORTED = "aborted"
    UNPAIRED = "unpaired"


class SystemConfig(BaseModel):
    num_users: int = Field(settings.DEFAULT_NUM_USERS, ge=3, description="K")
    power: float = Field(settings.DEFAULT_POWER, gt=0, description="Per-symbol power P")
    noise_variance: float = Field(
        settings.DEFAULT_NOISE_VARIANCE, ge=0, description="N0; zero selects noiseless mode"
    )
    rng_seed: int = Field(settings.DEFAULT_SEED, ge=0, lt=2**64)
    delay_slots: int = Field(settings.DEFAULT_DELAY_SLOTS, ge=1)
    normalize_power: bool = Field(
        False, description="Scale phase-2 transmissions back to power P"
    )

    @property
    def noiseless(self) -> bool:
        return self.noise_variance == 0

    @property
    def snr(self) -> float:
        return math.inf if self.noiseless else self.power / self.noise_variance

    @classmethod
    def at_snr_db(cls, snr_db: float, **kwargs) -> "SystemConfig":
        """Unit noise, power set to the requested SNR"""
        return cls(power=10 ** (snr_db / 10), noise_variance=1.0, **kwargs)


class QuantizerConfig(BaseModel):
    magnitude_step: float = Field(gt=0)
    phase_bins: int = Field(ge=4)
    magnitude_cap: float = Field(gt=0)
    scale_candidates: List[ComplexValue] = Field(default_factory=lambda: [1 + 0j])

    @model_validator(mode="after")
    def check_grid(self) -> "QuantizerConfig":
        if self.magnitude_cap <= self.magnitude_step:
            raise ValueError("magnitude_cap must exceed magnitude_step")
        if self.phase_bins % 2:
            # negation shifts phase by pi, which is a grid phase only for even bins
            raise ValueError("phase_bins must be even so negated grid points stay on the grid")
        if not self.scale_candidates:
            raise ValueError("at least one scale candidate is required")
        if any(abs(c) == 0 for c in self.scale_candidates):
            raise ValueError("scale candidates must be nonzero")
        return self

    @property
    def phase_step(self) -> float:
        return 2 * math.pi / self.phase_bins

    @property
    def error_bound(self) -> float:
        """Largest entry displacement for entries under the cap"""
        return self.magnitude_step / 2 + self.magnitude_cap * math.pi / self.phase_bins


class DofLedgerEntry(BaseModel):
    scheme: Scheme
    num_users: int
    messages_decoded: int = Field(ge=0)
    slots_consumed: int = Field(gt=0)

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.messages_decoded, self.slots_consumed)


class DofReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scheme: Scheme
    num_users: int
    formula_value: Fraction
    measured_slope: Optional[float] = None
    snr_points: List[Tuple[float, float]] = Field(
        default_factory=list, description="(SNR dB, mean sum rate bits/slot)"
    )
    messages_per_episode: int
    slots_per_episode: int

    @property
    def ledger_ratio(self) -> Fraction:
        return Fraction(self.messages_per_episode, self.slots_per_episode)


class RunConfig(BaseModel):
    scheme: Scheme
    num_users: int = Field(settings.DEFAULT_NUM_USERS, ge=3)
    k_range: Optional[Tuple[int, int]] = None
    snr_db_list: List[float] = Field(default_factory=lambda: [40.0, 60.0])
    episodes: int = Field(1000, ge=1)
    pairing_mode: PairingMode = PairingMode.GENIE
    quantizer: QuantizerConfig = Field(default_factory=lambda: settings.default_quantizer())
    seed: int = Field(settings.DEFAULT_SEED, ge=0, lt=2**64)
    output_path: Optional[str] = None
    noiseless: bool = False
    delay_slots: int = Field(settings.DEFAULT_DELAY_SLOTS, ge=1)
    normalize_power: bool = False
    workers: int = Field(settings.MAX_WORKERS, ge=1)

    @field_validator("k_range")
    @classmethod
    def check_k_range(cls, value):
        if value is not None:
            low, high = value
            if low < 3 or high < low:
                raise ValueError("k_range must satisfy 3 <= low <= high")
        return value

    @model_validator(mode="after")
    def check_scheme_constraints(self) -> "RunConfig":
        if self.scheme == Scheme.FORMULAS:
            # formulas are SNR-free
            self.snr_db_list = []
            if self.k_range is None:
                self.k_range = (self.num_users, self.num_users)
            return self
        if self.k_range is not None:
            raise ValueError("k_range is only meaningful for the formulas scheme")
        if not self.noiseless and not self.snr_db_list:
            raise ValueError("at least one SNR point is required")
        if self.noiseless:
            self.snr_db_list = []
        return self

    def system_config(self, snr_db: Optional[float] = None) -> SystemConfig:
        common = dict(
            num_users=self.num_users,
            rng_seed=self.seed,
            delay_slots=self.delay_slots,
            normalize_power=self.normalize_power,
        )
        if snr_db is None:
            return SystemConfig(power=settings.DEFAULT_POWER, noise_variance=0.0, **common)
        return SystemConfig.at_snr_db(snr_db, **common)


class ResultRow(BaseModel):
    scheme: Scheme
    K: int
    snr_db: Optional[float] = None
    mean_sum_rate: Optional[float] = None
    episodes_completed: int = 0
    episodes_aborted: int = 0
    episodes_unpaired: int = 0
    ledger_ratio: Optional[float] = None
    formula_value: Optional[float] = None
    retro_csit: Optional[float] = None
    retro_outputfb: Optional[float] = None
    max_decode_error: Optional[float] = None
    mean_phase2_power: Optional[float] = None
    slope: Optional[float] = None


class PropertyResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class SweepDefinition(BaseModel):
    name: str = Field(..., min_length=1, max_length=100)
    description: Optional[str] = None
    runs: List[RunConfig] = Field(..., min_length=1)
