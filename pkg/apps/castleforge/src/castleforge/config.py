"""Configuration settings for castleforge.

Uses pydantic-settings so every tunable can be overridden from the
environment (prefix CASTLEFORGE_) or a .env file.
"""

from fractions import Fraction

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="CASTLEFORGE_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    LOG_LEVEL: str = Field(default="WARNING", description="stdlib log level name")

    # Følner scans
    MAX_FOLNER_INDEX: int = Field(
        default=4096,
        description="Largest Følner family index any scan may reach",
    )

    # Substitution measures
    FREQUENCY_TOLERANCE: str = Field(
        default="1/1000000",
        description="Target width of word-frequency intervals, as p/q",
    )
    MAX_FREQUENCY_STEPS: int = Field(
        default=400,
        description="Iteration cap for frequency enclosures",
    )

    # Resolution
    MAX_ATOMS: int = Field(
        default=1 << 18,
        description="Largest atom count a construction may sweep",
    )
    MAX_REFINE_DEPTH: int = Field(
        default=256,
        description="Extra levels an atom may be split by while its translates straddle a set",
    )

    # Aperiodicity certificate (L, p)
    APERIODICITY_WORD_LENGTH: int = Field(default=64, description="Word length L")
    APERIODICITY_MAX_PERIOD: int = Field(default=16, description="Largest period p")

    # Rotation census
    SAMPLE_SEED: int = Field(default=20240611, description="Seed for census sampling")

    JOBS: int = Field(default=1, description="Worker threads for independent verifications")

    @property
    def frequency_tolerance(self) -> Fraction:
        return Fraction(self.FREQUENCY_TOLERANCE)


# Global settings instance
settings = Settings()
