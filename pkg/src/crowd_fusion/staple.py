"""
Image-unaware baselines: STAPLE with partial and repeated annotations per
worker, and plain majority voting.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import NumericError, ValidationError
from .grid import coverage_mask
from .learner import pooled_frequencies, worker_ids
from .models import Annotation, ConfusionMatrix, MarginalField, StapleConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StapleResult:
    marginals: MarginalField
    confusions: Dict[str, ConfusionMatrix]
    iterations: int
    log_likelihoods: List[float]
    prior_p1: float


def empirical_prior(annotations: Sequence[Annotation]) -> float:
    """Mean foreground fraction over each annotation's observed pixels."""
    fractions = [
        float(a.labels.labels[a.observed].mean()) for a in annotations if a.n_observed > 0
    ]
    if not fractions:
        return 0.5
    # keep the prior strictly inside (0, 1)
    return float(np.clip(np.mean(fractions), 1e-3, 1.0 - 1e-3))


def resolve_prior(annotations: Sequence[Annotation], cfg: StapleConfig) -> float:
    return cfg.prior_p1 if cfg.prior_p1 is not None else empirical_prior(annotations)


def _log_masses(annotations: Sequence[Annotation], confusions: Dict[str, ConfusionMatrix],
                prior_p1: float) -> np.ndarray:
    """log prior(l) + sum over observers of log p_u(z_i | l), shape (height, width, 2)."""
    shape = annotations[0].labels.labels.shape
    log_mass = np.empty(shape + (2,))
    log_mass[..., 0] = np.log(1.0 - prior_p1)
    log_mass[..., 1] = np.log(prior_p1)
    for annotation in annotations:
        confusion = confusions.get(annotation.worker_id)
        if confusion is None:
            raise ValidationError(f"no confusion matrix for worker {annotation.worker_id}")
        reported = annotation.labels.labels.astype(np.int64)
        with np.errstate(divide='ignore'):
            log_p = np.log(confusion.p)
        for label in (0, 1):
            log_mass[..., label] += np.where(annotation.observed, log_p[label][reported], 0.0)
    return log_mass


def staple_estep(annotations: Sequence[Annotation], confusions: Dict[str, ConfusionMatrix],
                 cfg: StapleConfig) -> MarginalField:
    """
    Independent-pixel posterior marginals.

    Args:
        annotations: Worker observations
        confusions: Current confusion matrix per worker
        cfg: Baseline settings (prior)

    Returns:
        MarginalField; pixels nobody observes get the prior

    Raises:
        NumericError: both label masses vanish at some pixel
    """
    if not annotations:
        raise ValidationError("the E-step needs at least one annotation")
    prior_p1 = resolve_prior(annotations, cfg)
    log_mass = _log_masses(annotations, confusions, prior_p1)
    norm = np.logaddexp(log_mass[..., 0], log_mass[..., 1])
    if not np.isfinite(norm).all():
        raise NumericError("both label masses vanish at some pixel")
    return MarginalField(np.exp(log_mass[..., 1] - norm))


def staple_mstep(annotations: Sequence[Annotation],
                 marginals: MarginalField) -> Tuple[Dict[str, ConfusionMatrix], List[str]]:
    """
    Confusion matrices proportional to expected co-occurrence counts.

    Returns:
        (confusions per worker, workers with an empty count column whose row
        was set to uniform)
    """
    frequencies = pooled_frequencies(annotations, marginals, soft=True)
    confusions = {}
    flagged = []
    for worker in sorted(frequencies):
        n = frequencies[worker].n
        p = np.empty((2, 2))
        for true_label in (0, 1):
            total = n[:, true_label].sum()
            if total > 0:
                p[true_label] = n[:, true_label] / total
            else:
                p[true_label] = 0.5
                flagged.append(worker)
        confusions[worker] = ConfusionMatrix(p)
    if flagged:
        logger.warning("workers with empty count columns set to uniform: %s", sorted(set(flagged)))
    return confusions, sorted(set(flagged))


def staple_log_likelihood(annotations: Sequence[Annotation], confusions: Dict[str, ConfusionMatrix],
                          prior_p1: float) -> float:
    """Incomplete-data log-likelihood sum_i log sum_l prior(l) prod_u p_u(z_i | l)."""
    log_mass = _log_masses(annotations, confusions, prior_p1)
    return float(np.logaddexp(log_mass[..., 0], log_mass[..., 1]).sum())


def run_staple(annotations: Sequence[Annotation], cfg: StapleConfig) -> StapleResult:
    """
    Alternate E- and M-steps until the marginals settle.

    Args:
        annotations: Worker observations
        cfg: Baseline settings

    Returns:
        StapleResult with final marginals, confusions and per-iteration log-likelihoods
    """
    if not annotations:
        raise ValidationError("STAPLE needs at least one annotation")
    prior_p1 = resolve_prior(annotations, cfg)
    fixed = StapleConfig(prior_p1, cfg.max_iterations, cfg.convergence_tol, cfg.initial_diagonal)

    confusions = {w: ConfusionMatrix.initial(cfg.initial_diagonal) for w in worker_ids(annotations)}
    marginals = staple_estep(annotations, confusions, fixed)
    log_likelihoods = [staple_log_likelihood(annotations, confusions, prior_p1)]

    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        confusions, _ = staple_mstep(annotations, marginals)
        updated = staple_estep(annotations, confusions, fixed)
        log_likelihoods.append(staple_log_likelihood(annotations, confusions, prior_p1))
        change = float(np.abs(updated.p1 - marginals.p1).max())
        marginals = updated
        if change < cfg.convergence_tol:
            break

    logger.info("STAPLE finished after %d iterations (prior %.3f)", iterations, prior_p1)
    return StapleResult(marginals, confusions, iterations, log_likelihoods, prior_p1)


def majority_vote(annotations: Sequence[Annotation]) -> MarginalField:
    """
    Fraction of observing annotations that report label 1; unobserved pixels get 0.5.
    """
    if not annotations:
        raise ValidationError("majority vote needs at least one annotation")
    covered = coverage_mask(annotations)
    votes = np.zeros(covered.shape)
    observers = np.zeros(covered.shape)
    for annotation in annotations:
        votes += np.where(annotation.observed, annotation.labels.labels, 0)
        observers += annotation.observed
    p1 = np.where(covered, votes / np.maximum(observers, 1), 0.5)
    return MarginalField(p1)

