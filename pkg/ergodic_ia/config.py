from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Numerical guards
    CHANNEL_FLOOR: float = 1e-6
    CONDITION_LIMIT: float = 1e8
    EXACTNESS_TOLERANCE: float = 1e-9

    # System defaults
    DEFAULT_NUM_USERS: int = 3
    DEFAULT_POWER: float = 1.0
    DEFAULT_NOISE_VARIANCE: float = 1.0
    DEFAULT_SEED: int = 20240601
    DEFAULT_DELAY_SLOTS: int = 1

    # Ergodic search
    SEARCH_HORIZON: int = 200_000
    SEARCH_CHUNK: int = 4096
    QUANT_MAGNITUDE_STEP: float = 1.0
    QUANT_PHASE_BINS: int = 4
    QUANT_MAGNITUDE_CAP: float = 2.0

    # Episode harness
    MAX_RESAMPLES: int = 100
    MAX_WORKERS: int = 4
    BATCH_SIZE: int = 250
    MIN_SLOPE_EPISODES: int = 1000
    MIN_SLOPE_SNR_DB: float = 30.0

    # Output
    CSV_PRECISION: int = 12
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"

    def get_csv_float_format(self) -> str:
        return f"%.{self.CSV_PRECISION}g"

    def default_quantizer(self):
        from ergodic_ia.models import QuantizerConfig

        return QuantizerConfig(
            magnitude_step=self.QUANT_MAGNITUDE_STEP,
            phase_bins=self.QUANT_PHASE_BINS,
            magnitude_cap=self.QUANT_MAGNITUDE_CAP,
        )


settings = Settings()
