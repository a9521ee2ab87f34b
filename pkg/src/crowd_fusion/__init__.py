"""
Core label fusion components: models, MRF, Gibbs sampling, learning,
baselines, inference and evaluation.
"""

from .exceptions import ConfigError, CrowdFusionError, NumericError, ValidationError
from .extractor import CrowdDataExtractor
from .inference import FusionConfig, fuse, mpm_decision
from .learner import UserModelLearner
from .persister import ResultPersister
from .staple import majority_vote, run_staple

__all__ = [
    "ConfigError",
    "CrowdFusionError",
    "NumericError",
    "ValidationError",
    "CrowdDataExtractor",
    "FusionConfig",
    "fuse",
    "mpm_decision",
    "UserModelLearner",
    "ResultPersister",
    "majority_vote",
    "run_staple",
]
