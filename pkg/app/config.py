"""Application configuration and settings."""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

BAND_COUNT = 6


class Settings(BaseSettings):
    """Runtime settings for the command-line surface."""

    model_config = SettingsConfigDict(env_prefix="PAIRNET_", env_file=".env", env_file_encoding="utf-8", extra="ignore")

    data_directory: Path = Path("data")
    database_url: str = ""
    sample_rate_hz: float = 100.0
    log_level: str = "INFO"
    workers: int = Field(default=1, ge=1)
    record_runs: bool = True
    predict_chunk_rows: int = Field(default=4096, ge=1)

    @model_validator(mode="after")
    def _registry_in_data_directory(self) -> Settings:
        if not self.database_url:
            self.database_url = f"sqlite:///{self.data_directory / 'pairnet.db'}"
        return self


@lru_cache
def get_settings() -> Settings:
    """Return a cached settings instance."""

    settings = Settings()
    settings.data_directory.mkdir(parents=True, exist_ok=True)
    return settings


class KeyValueFileSettings(BaseSettings):
    """Settings read only from explicit arguments and a flat key=value file.

    The process environment is never consulted, so a run is fully described by
    its file plus command-line overrides.
    """

    model_config = SettingsConfigDict(env_file_encoding="utf-8", extra="forbid", frozen=True)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, dotenv_settings)

    @classmethod
    def from_file(cls, path: Path | str | None = None, **overrides):
        if path is not None and not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls(_env_file=path, **overrides)


class TrainConfig(KeyValueFileSettings):
    """Hyper-parameters of pairwise training and feature selection."""

    epochs: int = Field(default=200, ge=1)
    epoch_patience: int | None = Field(default=None, ge=1)
    learning_rate: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    selection_patience: int = Field(default=2, ge=1)
    max_features: int = Field(default=58, ge=1)
    validation_fraction: float = Field(default=0.25, gt=0, lt=1)
    test_fraction: float = Field(default=1 / 3, gt=0, lt=1)
    learner: Literal["pocket", "thermal"] = "pocket"
    standardize: bool = True
    thermal_temperature: float = Field(default=1.0, gt=0)


class SyntheticSpec(KeyValueFileSettings):
    """Shape of a synthetic corpus with age-like spectral classes."""

    q: int = Field(default=16, ge=2)
    records_per_class: int = Field(default=4, ge=1)
    segments_per_record: int = Field(default=30, ge=1)
    sample_rate_hz: float = Field(default=100.0, gt=50)
    class_band_profile: list[list[float]] | None = None
    overlap: float = Field(default=0.15, ge=0)
    bba_drift: float = Field(default=0.1, ge=0)
    noise_floor: float = Field(default=0.5, ge=0)
    artifact_rate: float = Field(default=0.0, ge=0, lt=1)
    channel_asymmetry: float = Field(default=0.9, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_profile(self) -> SyntheticSpec:
        if self.class_band_profile is None:
            return self
        if len(self.class_band_profile) != self.q:
            rows = len(self.class_band_profile)
            raise ValueError(f"class_band_profile needs {self.q} rows (one per class), got {rows}")
        for row in self.class_band_profile:
            if len(row) != BAND_COUNT or any(value < 0 for value in row):
                raise ValueError(f"each class_band_profile row needs {BAND_COUNT} non-negative amplitudes")
        return self
