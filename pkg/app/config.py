"""
Process-level configuration for cmoe-lab.

Centralizes environment variables (output location, logging, worker count)
for the experiment runner. Experiment settings themselves live in JSON
documents validated by ``app.models.experiment``.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

# Load environment variables first
load_dotenv()

logger = logging.getLogger(__name__)


@dataclass
class LoggingSettings:
    """Logging configuration."""

    level: str = "INFO"
    log_dir: Optional[str] = None
    json_console: bool = False


@dataclass
class OutputSettings:
    """Where run artifacts are written."""

    out_override: Optional[str] = None
    default_out: str = "runs"


@dataclass
class RuntimeSettings:
    """Execution settings for experiment commands."""

    default_jobs: int = 1
    log_every: int = 500


class LabConfig:
    """
    Central configuration manager for the lab.

    Loads environment variables and provides configuration access
    throughout the application.
    """

    def __init__(self) -> None:
        """Initialize configuration from environment variables."""
        self._load_configuration()
        logger.debug("cmoe-lab configuration loaded")

    def _load_configuration(self) -> None:
        """Load configuration from environment variables."""
        self.app_name = "cmoe-lab"
        self.app_version = os.getenv("APP_VERSION", "1.0.0")
        self.environment = os.getenv("CMOE_LAB_ENVIRONMENT", "development")

        self.logging = LoggingSettings(
            level=os.getenv("CMOE_LAB_LOG_LEVEL", "INFO").upper(),
            log_dir=os.getenv("CMOE_LAB_LOG_DIR") or None,
            json_console=not self.is_development(),
        )

        self.output = OutputSettings(
            out_override=os.getenv("CMOE_LAB_OUT") or None,
            default_out=os.getenv("CMOE_LAB_DEFAULT_OUT", "runs"),
        )

        self.runtime = RuntimeSettings(
            default_jobs=max(1, int(os.getenv("CMOE_LAB_JOBS", "1"))),
            log_every=max(1, int(os.getenv("CMOE_LAB_LOG_EVERY", "500"))),
        )

    @property
    def log_level(self) -> str:
        return self.logging.level

    def is_development(self) -> bool:
        """Check if running in development environment."""
        return self.environment == "development"

    def resolve_output_dir(self, cli_out: Optional[str]) -> Path:
        """
        Pick the output directory for a command.

        ``CMOE_LAB_OUT`` wins over ``--out``; ``--out`` wins over the default.
        """
        if self.output.out_override:
            return Path(self.output.out_override)
        if cli_out:
            return Path(cli_out)
        return Path(self.output.default_out)

    def export_config_summary(self) -> Dict[str, Any]:
        """
        Export configuration summary for debugging.

        Returns:
            Dictionary with configuration details
        """
        return {
            "app_name": self.app_name,
            "app_version": self.app_version,
            "environment": self.environment,
            "log_level": self.logging.level,
            "log_dir": self.logging.log_dir,
            "out_override": self.output.out_override,
            "default_jobs": self.runtime.default_jobs,
        }


# Global configuration instance
config = LabConfig()
