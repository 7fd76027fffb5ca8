#!/usr/bin/env python3
"""
Shared utilities for the command-line scripts

Provides configuration loading, logging setup and colored console output.
"""

import logging
import sys
from pathlib import Path
from typing import Optional

from colorama import Fore, Style, init

from fairex.config import SimulatorConfig, load_config
from fairex.errors import ConfigError, ScenarioValidationError

init(autoreset=True)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_config(config_path: Optional[str] = None) -> SimulatorConfig:
    """
    Load the simulator configuration or exit.

    Args:
        config_path: Config file (if None, FAIREX_CONFIG or config.yaml)

    Returns:
        The validated configuration
    """
    try:
        return load_config(config_path)
    except ConfigError as e:
        print_msg(str(e), "error")
        sys.exit(1)


def setup_logging(level: str) -> None:
    """Configure root logging to stderr so stdout stays readable."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.WARNING),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def print_msg(message: str, level: str = "info") -> None:
    """
    Print formatted message.

    Args:
        message: Message to print
        level: 'success', 'error', 'info', or 'section'
    """
    if level == "success":
        print(f"{Fore.GREEN}✓ {message}{Style.RESET_ALL}")
    elif level == "error":
        print(f"{Fore.RED}✗ {message}{Style.RESET_ALL}", file=sys.stderr)
    elif level == "info":
        print(f"{Fore.YELLOW}ℹ {message}{Style.RESET_ALL}")
    elif level == "section":
        print_section(message)


def print_section(title: str, width: int = 60) -> None:
    """Print section header."""
    print("\n" + "=" * width)
    print(title)
    print("=" * width + "\n")


def print_validation_error(error: ScenarioValidationError, source: str) -> None:
    """Print every scenario issue as ``file:line: location: message``."""
    print_msg(f"{source}: invalid scenario", "error")
    for issue in error.issues:
        where = f"{source}:{issue.line}" if issue.line is not None else source
        print(f"  {where}: {issue.location}: {issue.message}", file=sys.stderr)


def default_transcript_path(config: SimulatorConfig, scenario: str, seed: int) -> Path:
    """Transcript path used by ``run`` when no --out is given."""
    return Path(config.transcript_dir) / f"{scenario}-seed{seed}.jsonl"
