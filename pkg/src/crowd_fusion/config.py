"""
YAML experiment configuration.

Every section maps onto one settings dataclass; missing keys take the
dataclass defaults and unknown keys are rejected with their dotted path.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from src.simulation.phantom import PhantomConfig
from src.simulation.protocol import ProtocolConfig, WorkerPoolConfig

from .exceptions import ConfigError, ValidationError
from .inference import METHODS, FusionConfig
from .models import InferenceConfig, LearnConfig, ModelConfig, StapleConfig


@dataclass(frozen=True)
class MetricsConfig:
    """Cell matching settings; ``max_centroid_dist=None`` uses the per-cell radius rule."""
    radius_factor: float = 1.5
    max_centroid_dist: Optional[float] = None

    def __post_init__(self):
        if not self.radius_factor > 0:
            raise ValidationError(f"radius_factor must be positive, got {self.radius_factor}")
        if self.max_centroid_dist is not None and not self.max_centroid_dist > 0:
            raise ValidationError(f"max_centroid_dist must be positive, got {self.max_centroid_dist}")


SECTIONS = {
    'phantom': PhantomConfig,
    'protocol': ProtocolConfig,
    'workers': WorkerPoolConfig,
    'model': ModelConfig,
    'learner': LearnConfig,
    'staple': StapleConfig,
    'inference': InferenceConfig,
    'metrics': MetricsConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of a simulation and fusion sweep."""
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    workers: WorkerPoolConfig = field(default_factory=WorkerPoolConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    learner: LearnConfig = field(default_factory=LearnConfig)
    staple: StapleConfig = field(default_factory=StapleConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    fractions: Tuple[float, ...] = (0.1, 0.25, 0.5, 1.0)
    repetitions: int = 10
    seed: int = 0
    methods: Tuple[str, ...] = ('istaple', 'staple')
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'fractions', tuple(float(f) for f in self.fractions))
        object.__setattr__(self, 'methods', tuple(str(m) for m in self.methods))
        if not self.fractions:
            raise ValidationError("fractions must not be empty")
        for fraction in self.fractions:
            if not 0.0 < fraction <= 1.0:
                raise ValidationError(f"fractions must lie in (0, 1], got {fraction}")
        if self.repetitions < 1:
            raise ValidationError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        unknown = [m for m in self.methods if m not in METHODS]
        if not self.methods or unknown:
            raise ValidationError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")

    def to_dict(self) -> Dict[str, Any]:
        """Effective configuration as plain YAML-compatible data."""
        return _plain(dataclasses.asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    def fusion_config(self) -> FusionConfig:
        return build_fusion_config(self)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _tuples(value):
    if isinstance(value, list):
        return tuple(_tuples(v) for v in value)
    return value


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'configuration'} must be a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{_join(path, key)}'")

    kwargs = {}
    for key, value in data.items():
        section = SECTIONS.get(key) if cls is ExperimentConfig else None
        if section is not None:
            kwargs[key] = _build(section, value, _join(path, key))
        else:
            kwargs[key] = _tuples(value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValidationError, TypeError) as e:
        raise ConfigError(f"invalid value in '{path or 'configuration'}': {e}") from e


def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


def config_from_dict(data: Optional[Dict]) -> ExperimentConfig:
    return _build(ExperimentConfig, data, '')


def parse_config(path) -> ExperimentConfig:
    """
    Load and validate an experiment configuration.

    Args:
        path: YAML file

    Returns:
        ExperimentConfig with defaults filled in

    Raises:
        ConfigError: malformed YAML (with its line number), unknown keys or
            invalid values
    """
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}: malformed YAML{line}: {getattr(e, 'problem', e)}") from e
    return config_from_dict(data)


def build_fusion_config(cfg: ExperimentConfig) -> FusionConfig:
    return FusionConfig(model=cfg.model, learner=cfg.learner, staple=cfg.staple, inference=cfg.inference)
