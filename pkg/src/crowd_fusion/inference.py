"""
Final segmentation decision and the end-to-end fusion pipeline.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .exceptions import ValidationError
from .gibbs import GibbsSampler
from .grid import check_annotation_dims, coverage_mask
from .learner import UserModelLearner
from .models import (
    Annotation,
    FusionResult,
    ImageGrid,
    InferenceConfig,
    LabelGrid,
    LearnConfig,
    MarginalField,
    ModelConfig,
    MrfModel,
    ShadingField,
    StapleConfig,
)
from .mrf import init_appearance, potts_prior
from .staple import majority_vote, run_staple, staple_mstep

logger = logging.getLogger(__name__)

METHODS = ('istaple', 'staple', 'majority')


@dataclass(frozen=True)
class FusionConfig:
    """Everything ``fuse`` needs besides the data."""
    model: ModelConfig = field(default_factory=ModelConfig)
    learner: LearnConfig = field(default_factory=LearnConfig)
    staple: StapleConfig = field(default_factory=StapleConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)


def mpm_decision(m: MarginalField) -> LabelGrid:
    """
    Maximum posterior marginal labeling.

    Label 1 iff p1 > 0.5; an exact tie goes to label 0 (membrane).
    """
    return LabelGrid((m.p1 > 0.5).astype(np.uint8))


def initial_model(x: ImageGrid, annotations: Sequence[Annotation], cfg: ModelConfig) -> MrfModel:
    """Potts prior, bootstrapped appearance and flat shading."""
    classes = cfg.classes
    return MrfModel(
        prior=potts_prior(cfg.potts_strength, classes, (0.0, cfg.unary_bias)),
        appearance=init_appearance(x, annotations, cfg.n_components, cfg.appearance_iterations),
        shading=ShadingField.zeros(x.dims, cfg.smoothness_weight),
        classes=classes,
    )


def fuse(x: Optional[ImageGrid], annotations: Sequence[Annotation], method: str,
         cfg: FusionConfig = FusionConfig(), seed: Optional[int] = None) -> FusionResult:
    """
    Fuse crowd annotations into one segmentation.

    Args:
        x: Image; required for ``istaple`` and ignored otherwise
        annotations: Worker observations
        method: One of ``istaple``, ``staple``, ``majority``
        cfg: Fusion settings
        seed: Overrides the learner seed when given

    Returns:
        FusionResult whose labeling is the MPM decision of its marginals
    """
    if not annotations:
        raise ValidationError("fusion needs at least one annotation")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    dims = annotations[0].dims
    check_annotation_dims(annotations, dims)
    coverage = coverage_mask(annotations)
    history = []
    model = None

    if method == 'istaple':
        if x is None:
            raise ValidationError("istaple needs an image")
        check_annotation_dims(annotations, x.dims)
        learn_cfg = cfg.learner if seed is None else replace(cfg.learner, seed=seed)
        model0 = initial_model(x, annotations, cfg.model)
        trained = UserModelLearner(learn_cfg).learn(x, annotations, model0)
        sampler = GibbsSampler(trained.model, x, annotations, checkerboard=cfg.inference.checkerboard)
        marginals, _ = sampler.estimate_marginals(
            trained.chain, cfg.inference.burn_in, cfg.inference.n_samples
        )
        confusions = trained.model.confusions
        history = trained.history
        model = trained.model
    elif method == 'staple':
        result = run_staple(annotations, cfg.staple)
        marginals, confusions = result.marginals, result.confusions
    else:
        marginals = majority_vote(annotations)
        confusions, _ = staple_mstep(annotations, marginals)

    labeling = mpm_decision(marginals)
    logger.info("%s fusion: %.1f%% covered, %.1f%% interior", method,
                100.0 * coverage.mean(), 100.0 * labeling.labels.mean())
    return FusionResult(labeling, marginals, confusions, method, coverage, history, model)
