"""
Simulator configuration.

Defaults live in ``config.yaml`` at the repository root. Environment
variables override the file:

- ``FAIREX_CONFIG``: path of an alternative config file
- ``FAIREX_STEP_BUDGET``: default step budget
- ``FAIREX_LOG_LEVEL``: log level of the command-line tool

A scenario's own ``step_budget`` wins over both.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from fairex.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config.yaml"
DEFAULT_STEP_BUDGET = 100_000

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


class SimulatorConfig(BaseModel):
    """
    Validated simulator defaults.

    Attributes:
        step_budget: Steps a run may take before it is cut off
        default_price: Contract amount for scenarios that do not set one
        log_level: Root log level used by the command-line tool
        transcript_dir: Where ``run`` writes transcripts when no --out is given
    """

    model_config = ConfigDict(extra="forbid")

    step_budget: int = Field(DEFAULT_STEP_BUDGET, gt=0)
    default_price: int = Field(1, gt=0, lt=2**64)
    log_level: LogLevel = "WARNING"
    transcript_dir: str = Field("transcripts", min_length=1)


def _read_yaml(path: Path) -> dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    return data


def load_config(path: Optional[str | Path] = None) -> SimulatorConfig:
    """
    Load the simulator configuration.

    Args:
        path: Config file to read; defaults to $FAIREX_CONFIG, then the
            repository's config.yaml. A missing default file means built-in
            defaults; a missing explicit file is an error.

    Returns:
        The validated configuration with environment overrides applied

    Raises:
        ConfigError: If the file is unreadable, malformed or fails validation
    """
    explicit = path if path is not None else os.environ.get("FAIREX_CONFIG")
    config_path = Path(explicit) if explicit else DEFAULT_CONFIG_PATH

    data: dict[str, Any] = {}
    if config_path.exists():
        data = _read_yaml(config_path)
        logger.debug("Loaded config from %s", config_path)
    elif explicit:
        raise ConfigError(f"Config file not found: {config_path}")
    else:
        logger.debug("No config file at %s, using defaults", config_path)

    step_budget = os.environ.get("FAIREX_STEP_BUDGET")
    if step_budget:
        data["step_budget"] = step_budget
    log_level = os.environ.get("FAIREX_LOG_LEVEL")
    if log_level:
        data["log_level"] = log_level.upper()

    try:
        return SimulatorConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
