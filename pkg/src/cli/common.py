"""
Helpers shared by the command modules.
"""

from typing import Optional

from src.crowd_fusion.config import ExperimentConfig, parse_config


def banner(title: str) -> None:
    print("=" * 80)
    print(title)
    print("=" * 80)


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Parsed configuration, or the defaults when no file is given."""
    return parse_config(path) if path else ExperimentConfig()
