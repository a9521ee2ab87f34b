"""
Learning the user models with EM on a persistent Gibbs chain.

Each EM iteration performs one warm-started sweep, counts per-worker
co-occurrences of reported and sampled labels, and moves every confusion
matrix a small step toward the normalised counts.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ValidationError
from .gibbs import GibbsSampler, initial_chain
from .grid import check_annotation_dims
from .models import (
    Annotation,
    ConfusionMatrix,
    FrequencyTable,
    ImageGrid,
    IterationRecord,
    LabelGrid,
    LearnConfig,
    MarginalField,
    MrfModel,
    TrainedModel,
)
from .mrf import fit_appearance, prior_statistics, update_prior_pcd, update_shading

logger = logging.getLogger(__name__)


def worker_frequencies(a: Annotation, y_sample: LabelGrid) -> FrequencyTable:
    """
    Hard co-occurrence counts over the annotation's observed pixels.

    Returns:
        n[l'][l] = #{i observed : z_i = l', y_i = l}
    """
    if a.dims != y_sample.dims:
        raise ValidationError(f"annotation dims {a.dims} differ from sample dims {y_sample.dims}")
    reported = a.labels.labels[a.observed].astype(np.int64)
    sampled = y_sample.labels[a.observed].astype(np.int64)
    counts = np.zeros((2, 2))
    np.add.at(counts, (reported, sampled), 1.0)
    return FrequencyTable(counts)


def soft_worker_frequencies(a: Annotation, marginals: MarginalField) -> FrequencyTable:
    """
    Expected co-occurrence counts under posterior marginals.

    Returns:
        n[l'][l] = sum over observed i with z_i = l' of p(y_i = l)
    """
    if a.dims != marginals.dims:
        raise ValidationError(f"annotation dims {a.dims} differ from marginal dims {marginals.dims}")
    reported = a.labels.labels[a.observed].astype(np.int64)
    p1 = marginals.p1[a.observed]
    counts = np.zeros((2, 2))
    for label in (0, 1):
        chosen = reported == label
        counts[label, 1] = p1[chosen].sum()
        counts[label, 0] = (1.0 - p1[chosen]).sum()
    return FrequencyTable(counts)


def pooled_frequencies(annotations: Sequence[Annotation], reference,
                       soft: bool = False) -> Dict[str, FrequencyTable]:
    """
    Sum the counts of every annotation of the same worker.

    Args:
        annotations: Worker observations (several may share a worker)
        reference: LabelGrid sample (hard) or MarginalField (soft)
        soft: Use expected counts

    Returns:
        Mapping worker_id -> FrequencyTable
    """
    counter = soft_worker_frequencies if soft else worker_frequencies
    pooled: Dict[str, FrequencyTable] = {}
    for annotation in annotations:
        table = counter(annotation, reference)
        previous = pooled.get(annotation.worker_id)
        pooled[annotation.worker_id] = table if previous is None else previous + table
    return pooled


def confusion_step(prev: ConfusionMatrix, freq: FrequencyTable, step: float) -> ConfusionMatrix:
    """
    Move a confusion matrix toward the normalised frequencies.

    p(l'|l) <- (1 - step) p(l'|l) + step n(l', l) / sum_l'' n(l'', l); a true
    label whose count column is empty keeps its row.

    Args:
        prev: Current confusion matrix
        freq: Co-occurrence counts
        step: Step size in (0, 1]

    Returns:
        Updated ConfusionMatrix
    """
    if not 0.0 < step <= 1.0:
        raise ValidationError(f"step must lie in (0, 1], got {step}")
    updated = prev.p.copy()
    column_sums = freq.n.sum(axis=0)
    for true_label in (0, 1):
        total = column_sums[true_label]
        if total <= 0:
            continue
        target = freq.n[:, true_label] / total
        updated[true_label] = (1.0 - step) * prev.p[true_label] + step * target
    return ConfusionMatrix(updated)


def pseudo_loglik(annotations: Sequence[Annotation], confusions: Dict[str, ConfusionMatrix],
                  y_sample: LabelGrid) -> Dict[str, float]:
    """Per-worker sum of log p_u(z_i | y_i) over observed pixels, y taken from a sample."""
    scores: Dict[str, float] = {}
    for annotation in annotations:
        reported = annotation.labels.labels[annotation.observed].astype(np.int64)
        sampled = y_sample.labels[annotation.observed].astype(np.int64)
        with np.errstate(divide='ignore'):
            value = float(np.log(confusions[annotation.worker_id].p[sampled, reported]).sum())
        scores[annotation.worker_id] = scores.get(annotation.worker_id, 0.0) + value
    return scores


def worker_ids(annotations: Sequence[Annotation]) -> List[str]:
    """Distinct worker ids in sorted order."""
    return sorted({annotation.worker_id for annotation in annotations})


class UserModelLearner:
    """
    Joint estimation of worker confusion matrices (and optionally the image
    model) from a single persistent Gibbs chain.
    """

    def __init__(self, cfg: LearnConfig):
        """
        Initialize the learner.

        Args:
            cfg: Learning settings
        """
        self.cfg = cfg

    def _initial_confusions(self, model0: MrfModel, workers: Sequence[str]) -> Dict[str, ConfusionMatrix]:
        confusions = {}
        for worker in workers:
            confusions[worker] = model0.confusions.get(worker) or ConfusionMatrix.initial(
                self.cfg.initial_diagonal
            )
        return confusions

    def learn(self, x: Optional[ImageGrid], annotations: Sequence[Annotation],
              model0: MrfModel) -> TrainedModel:
        """
        Run the EM loop.

        Args:
            x: Image, or None for an image-unaware run
            annotations: Worker observations
            model0: Starting model

        Returns:
            TrainedModel with learned confusions, final chain and history
        """
        cfg = self.cfg
        if not annotations:
            raise ValidationError("learning requires at least one annotation")
        check_annotation_dims(annotations, model0.dims)
        if x is None and (cfg.refresh_appearance or cfg.refresh_shading):
            raise ValidationError("appearance or shading refresh requires an image")

        workers = worker_ids(annotations)
        model = model0.with_confusions(self._initial_confusions(model0, workers))
        chain = initial_chain(model.dims, cfg.seed)
        history = [IterationRecord(0, dict(model.confusions),
                                   pseudo_loglik(annotations, model.confusions, chain.labeling))]

        sampler = GibbsSampler(model, x, annotations)
        model_chain = None
        prior_sampler = None
        if cfg.learn_prior:
            model_chain = initial_chain(model.dims, cfg.seed + 1)
            prior_sampler = GibbsSampler(model, include_data=False)

        logger.info("learning %d workers from %d annotations, %d iterations",
                    len(workers), len(annotations), cfg.em_iterations)

        for t in range(1, cfg.em_iterations + 1):
            chain = sampler.sweep(chain, 1)
            sample = chain.labeling

            frequencies = pooled_frequencies(annotations, sample)
            confusions = {
                worker: confusion_step(model.confusions[worker], frequencies[worker], cfg.step_size)
                for worker in workers
            }
            model = model.with_confusions(confusions)

            if t % cfg.refresh_every == 0:
                model, model_chain = self._refresh(x, sample, model, model_chain, prior_sampler)

            history.append(IterationRecord(t, dict(confusions),
                                           pseudo_loglik(annotations, confusions, sample)))
            sampler.bind(model, x, annotations)

            if t % 50 == 0:
                logger.debug("iteration %d: foreground fraction %.3f", t, float(sample.labels.mean()))

        return TrainedModel(model=model, chain=chain, history=history)

    def _refresh(self, x: Optional[ImageGrid], sample: LabelGrid, model: MrfModel,
                 model_chain, prior_sampler) -> Tuple[MrfModel, object]:
        """Optional appearance / shading / prior updates on the current sample."""
        cfg = self.cfg
        appearance, shading, prior = model.appearance, model.shading, model.prior

        if cfg.refresh_appearance:
            appearance, _ = fit_appearance(x, sample, shading, appearance)
        if cfg.refresh_shading:
            shading = update_shading(x, sample, appearance, shading, cfg.shading_sweeps)
        if cfg.learn_prior:
            prior_sampler.bind(model, include_data=False)
            model_chain = prior_sampler.sweep(model_chain, 1)
            prior = update_prior_pcd(
                prior_statistics(sample, model.classes),
                prior_statistics(model_chain.labeling, model.classes),
                prior,
                cfg.pcd_step,
            )

        refreshed = MrfModel(prior, appearance, shading, model.classes, model.confusions)
        return refreshed, model_chain


def learn(x: Optional[ImageGrid], annotations: Sequence[Annotation], model0: MrfModel,
          cfg: LearnConfig) -> TrainedModel:
    """Convenience wrapper around ``UserModelLearner(cfg).learn``."""
    return UserModelLearner(cfg).learn(x, annotations, model0)


def history_rows(history: Sequence[IterationRecord]) -> List[Tuple]:
    """
    Flatten learning history to CSV rows.

    Returns:
        (iteration, worker_id, p(0|0), p(1|0), p(0|1), p(1|1), pseudo_loglik) tuples
    """
    rows = []
    for record in history:
        for worker in sorted(record.confusions):
            rows.append((record.iteration, worker) + record.confusions[worker].as_row()
                        + (record.pseudo_loglik.get(worker, float('nan')),))
    return rows
