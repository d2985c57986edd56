from enum import Enum
from pathlib import Path

from dotenv import load_dotenv
from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class ExecutionMode(str, Enum):
    DETERMINISTIC = "deterministic"
    FAST = "fast"


class LogFormat(str, Enum):
    CONSOLE = "console"
    JSON = "json"


class LoggingSettings(BaseSettings):
    """Logging configuration settings."""
    model_config = SettingsConfigDict(env_prefix="SSNI_LOG_", case_sensitive=False, extra="ignore")

    level: str = Field(default="INFO")
    format: LogFormat = Field(default=LogFormat.CONSOLE)


class RuntimeSettings(BaseSettings):
    """Execution profile: device, worker count, numeric precision, output root."""
    model_config = SettingsConfigDict(env_prefix="SSNI_", case_sensitive=False, extra="ignore")

    mode: ExecutionMode = Field(default=ExecutionMode.DETERMINISTIC)
    device: str = Field(default="cpu")
    num_workers: int = Field(default=1, ge=1)
    output_root: Path = Field(default=Path("results"))

    @model_validator(mode="after")
    def enforce_mode_rules(self):
        """Deterministic runs are single-worker; fast runs may fan out."""
        if self.mode == ExecutionMode.DETERMINISTIC:
            self.num_workers = 1
        return self

    @property
    def deterministic(self) -> bool:
        return self.mode == ExecutionMode.DETERMINISTIC

    @property
    def float64(self) -> bool:
        # Deterministic mode accumulates in 64-bit.
        return self.deterministic


class Settings(BaseSettings):
    """Main application settings."""
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")

    app_name: str = "SSNI Purification Lab"
    app_version: str = "0.1.0"

    # Sub-settings
    logging: LoggingSettings = Field(default_factory=LoggingSettings)
    runtime: RuntimeSettings = Field(default_factory=RuntimeSettings)


# Global settings instance
settings = Settings()
