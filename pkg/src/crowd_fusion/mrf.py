"""
The image-aware generative model: Gibbs prior over labelings, Gaussian
mixture appearance with an additive shading field, user confusion factors,
and the learning steps for the image-side parameters.

The partition function of the prior is never evaluated; everything here
works with energy differences or sampled frequencies.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .exceptions import NumericError, ValidationError
from .grid import coverage_mask, edge_pairs
from .models import (
    Annotation,
    AppearanceParams,
    ConfusionMatrix,
    EdgeClassSet,
    ImageGrid,
    LabelGrid,
    MrfModel,
    PriorParams,
    ShadingField,
)

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class PriorStats:
    """Label and pair-configuration frequencies of one labeling, shaped like PriorParams."""
    unary: np.ndarray
    pairwise: np.ndarray


def potts_prior(strength: float, classes: EdgeClassSet,
                unary: Tuple[float, float] = (0.0, 0.0)) -> PriorParams:
    """Prior with psi_c(a, b) = strength * [a != b] for every edge class."""
    table = strength * np.array([[0.0, 1.0], [1.0, 0.0]])
    return PriorParams(np.asarray(unary, dtype=np.float64), np.repeat(table[None], len(classes), axis=0))


def prior_energy(y: LabelGrid, p: PriorParams, classes: EdgeClassSet) -> float:
    """
    Energy of a labeling under the prior.

    Args:
        y: Labeling
        p: Prior potentials
        classes: Edge classes matching ``p.pairwise``

    Returns:
        sum_i psi_0(y_i) + sum_c sum_{ij in E_c} psi_c(y_i, y_j)
    """
    if p.n_classes != len(classes):
        raise ValidationError("prior tables and edge classes disagree in length")
    flat = y.flat().astype(np.int64)
    energy = float(p.unary[flat].sum())
    for table, pairs in zip(p.pairwise, edge_pairs(y.dims, classes)):
        if len(pairs):
            energy += float(table[flat[pairs[:, 0]], flat[pairs[:, 1]]].sum())
    return energy


def appearance_log_density(x: ImageGrid, a: AppearanceParams, s: ShadingField) -> np.ndarray:
    """
    Per-pixel log p(x_i | l, s) for both labels.

    Returns:
        Array of shape (height, width, 2)
    """
    if x.values.shape != s.values.shape:
        raise ValidationError(f"image shape {x.values.shape} and shading shape {s.values.shape} differ")
    residual = (x.values - s.values)[..., None]
    log_normal = -_LOG_SQRT_2PI - np.log(a.sigma) - (residual - a.means) ** 2 / (2.0 * a.sigma ** 2)
    with np.errstate(divide='ignore'):
        per_label = [logsumexp(log_normal, b=a.weights[label], axis=-1) for label in (0, 1)]
    return np.stack(per_label, axis=-1)


def appearance_loglik(x: ImageGrid, y: LabelGrid, a: AppearanceParams, s: ShadingField,
                      mask: Optional[np.ndarray] = None) -> float:
    """
    Log-likelihood of the image under the mixture appearance model.

    Args:
        x: Image
        y: Labeling selecting the label-specific weights
        a: Appearance parameters
        s: Shading field
        mask: Optional subset of pixels to sum over

    Returns:
        sum_i log sum_j w_{y_i j} N(x_i - s_i; mu_j, sigma^2)

    Raises:
        NumericError: the result is not finite
    """
    density = appearance_log_density(x, a, s)
    labels = y.labels.astype(np.int64)
    per_pixel = np.take_along_axis(density, labels[..., None], axis=-1)[..., 0]
    if mask is not None:
        per_pixel = per_pixel[np.asarray(mask, dtype=bool)]
    total = float(per_pixel.sum())
    if not np.isfinite(total):
        raise NumericError("appearance log-likelihood is not finite (sigma underflow?)")
    return total


def annotation_log_factors(annotations: Sequence[Annotation],
                           confusions: Dict[str, ConfusionMatrix],
                           shape: Tuple[int, int]) -> np.ndarray:
    """
    Sum over observing annotations of log p_u(z_i^u | l).

    Returns:
        Array of shape (height, width, 2); zero where nobody observes a pixel
    """
    factors = np.zeros(shape + (2,))
    for annotation in annotations:
        confusion = confusions.get(annotation.worker_id)
        if confusion is None:
            raise ValidationError(f"no confusion matrix for worker {annotation.worker_id}")
        reported = annotation.labels.labels.astype(np.int64)
        with np.errstate(divide='ignore'):
            log_p = np.log(confusion.p)
        for label in (0, 1):
            # log_p[label, reported] = log p_u(reported | label)
            factors[..., label] += np.where(annotation.observed, log_p[label][reported], 0.0)
    return factors


def unary_log_factors(x: Optional[ImageGrid], model: MrfModel,
                      annotations: Sequence[Annotation], include_data: bool = True) -> np.ndarray:
    """
    Label-dependent log factors that do not involve neighbours.

    Returns:
        Array of shape (height, width, 2): -psi_0(l) plus, when ``include_data``,
        the appearance and annotation terms
    """
    width, height = model.dims
    factors = np.broadcast_to(-model.prior.unary, (height, width, 2)).copy()
    if include_data:
        if x is not None:
            factors += appearance_log_density(x, model.appearance, model.shading)
        factors += annotation_log_factors(annotations, model.confusions, (height, width))
    return factors


def site_log_potentials(i: int, y: LabelGrid, prior: PriorParams, classes: EdgeClassSet) -> np.ndarray:
    """
    Prior log factor of each label at site ``i`` given its neighbours.

    Returns:
        (2,) array: -psi_0(l) - sum over incident edges of psi_c
    """
    width, height = y.dims
    labels = y.labels
    row, col = divmod(int(i), width)
    log_pot = -prior.unary.copy()
    for table, (dx, dy) in zip(prior.pairwise, classes.offsets):
        # forward edge (i, i + v): i is the first argument
        r, c = row + dy, col + dx
        if 0 <= r < height and 0 <= c < width:
            log_pot -= table[:, labels[r, c]]
        # backward edge (i - v, i): i is the second argument
        r, c = row - dy, col - dx
        if 0 <= r < height and 0 <= c < width:
            log_pot -= table[labels[r, c], :]
    return log_pot


def site_conditional(i: int, x: Optional[ImageGrid], y: LabelGrid, model: MrfModel,
                     annotations: Sequence[Annotation]) -> np.ndarray:
    """
    Conditional distribution of y_i given all other labels and the data.

    Args:
        i: Flat pixel index
        x: Image, or None for an image-unaware conditional
        y: Current labeling (the value at ``i`` is ignored)
        model: Model parameters
        annotations: Worker observations

    Returns:
        (2,) array (p(y_i = 0), p(y_i = 1))

    Raises:
        NumericError: both unnormalised masses are zero
    """
    width, height = y.dims
    row, col = divmod(int(i), width)
    log_mass = site_log_potentials(i, y, model.prior, model.classes)

    if x is not None:
        residual = x.values[row, col] - model.shading.values[row, col]
        a = model.appearance
        log_normal = -_LOG_SQRT_2PI - np.log(a.sigma) - (residual - a.means) ** 2 / (2.0 * a.sigma ** 2)
        with np.errstate(divide='ignore'):
            log_mass = log_mass + np.array(
                [logsumexp(log_normal, b=a.weights[label]) for label in (0, 1)]
            )

    for annotation in annotations:
        if not annotation.observed[row, col]:
            continue
        reported = int(annotation.labels.labels[row, col])
        confusion = model.confusions[annotation.worker_id]
        with np.errstate(divide='ignore'):
            log_mass = log_mass + np.log(confusion.p[:, reported])

    norm = np.logaddexp(log_mass[0], log_mass[1])
    if not np.isfinite(norm):
        raise NumericError(f"both conditional masses vanish at site {i}")
    return np.exp(log_mass - norm)


def shading_targets(x: ImageGrid, y: LabelGrid, a: AppearanceParams, s: ShadingField) -> np.ndarray:
    """
    Residual targets x_i - mu_j for the most responsible component of each pixel.
    """
    residual = (x.values - s.values)[..., None]
    log_normal = -(residual - a.means) ** 2 / (2.0 * a.sigma ** 2)
    with np.errstate(divide='ignore'):
        log_resp = np.log(a.weights[y.labels.astype(np.int64)]) + log_normal
    best = np.argmax(log_resp, axis=-1)
    return x.values - a.means[best]


def _neighbour_sums(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sum and count of 4-neighbours for every pixel."""
    total = np.zeros_like(values)
    count = np.zeros_like(values)
    total[1:, :] += values[:-1, :]
    total[:-1, :] += values[1:, :]
    total[:, 1:] += values[:, :-1]
    total[:, :-1] += values[:, 1:]
    count[1:, :] += 1
    count[:-1, :] += 1
    count[:, 1:] += 1
    count[:, :-1] += 1
    return total, count


def shading_objective(targets: np.ndarray, s: ShadingField, sigma: float) -> float:
    """
    Quadratic surrogate minimised by the shading update.

    Returns:
        sum_i (t_i - s_i)^2 / (2 sigma^2) + weight/2 * sum_{4-neighbour pairs} (s_i - s_j)^2
    """
    values = s.values
    data = ((targets - values) ** 2).sum() / (2.0 * sigma ** 2)
    smooth = ((values[1:, :] - values[:-1, :]) ** 2).sum() + ((values[:, 1:] - values[:, :-1]) ** 2).sum()
    return float(data + 0.5 * s.smoothness_weight * smooth)


def update_shading(x: ImageGrid, y_sample: LabelGrid, a: AppearanceParams, s: ShadingField,
                   sweeps: int = 1) -> ShadingField:
    """
    Coordinate descent on the shading field.

    Component assignments are fixed from the incoming shading; each sweep then
    updates the two checkerboard colours in turn, each site moving to the
    exact minimiser of the quadratic objective given its neighbours.

    Args:
        x: Image
        y_sample: Current labeling sample
        a: Appearance parameters
        s: Shading field to start from
        sweeps: Number of red-black sweeps

    Returns:
        Updated ShadingField
    """
    if sweeps < 0:
        raise ValidationError(f"sweeps must be >= 0, got {sweeps}")
    if sweeps == 0:
        return s

    targets = shading_targets(x, y_sample, a, s)
    precision = 1.0 / a.sigma ** 2
    weight = s.smoothness_weight
    values = s.values.copy()
    rows, cols = np.indices(values.shape)
    colours = [(rows + cols) % 2 == parity for parity in (0, 1)]

    for _ in range(sweeps):
        for colour in colours:
            total, count = _neighbour_sums(values)
            blended = (precision * targets + weight * total) / (precision + weight * count)
            values[colour] = blended[colour]

    return ShadingField(values, weight)


def fit_appearance(x: ImageGrid, y_sample: LabelGrid, s: ShadingField, a: AppearanceParams,
                   mask: Optional[np.ndarray] = None) -> Tuple[AppearanceParams, Tuple[int, ...]]:
    """
    One EM step for the label-specific mixture on residuals x - s.

    Args:
        x: Image
        y_sample: Labeling selecting the weight vector per pixel
        s: Shading field
        a: Current appearance parameters
        mask: Optional subset of pixels to fit on

    Returns:
        (updated parameters, labels absent from the sample whose weights were kept)

    Raises:
        ValidationError: no pixels to fit on
    """
    residual = x.values - s.values
    labels = y_sample.labels.astype(np.int64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        residual, labels = residual[mask], labels[mask]
    residual, labels = residual.ravel(), labels.ravel()
    if residual.size == 0:
        raise ValidationError("cannot fit appearance on an empty set of pixels")

    log_normal = -_LOG_SQRT_2PI - np.log(a.sigma) - (residual[:, None] - a.means) ** 2 / (2.0 * a.sigma ** 2)
    with np.errstate(divide='ignore'):
        log_joint = np.log(a.weights[labels]) + log_normal
    log_resp = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
    resp = np.exp(log_resp)

    weights = a.weights.copy()
    absent = []
    for label in (0, 1):
        members = labels == label
        if not members.any():
            absent.append(label)
            continue
        weights[label] = resp[members].mean(axis=0)
        weights[label] /= weights[label].sum()
    if absent:
        logger.warning("labels %s absent from sample; their mixture weights are unchanged", absent)

    mass = resp.sum(axis=0)
    means = a.means.copy()
    used = mass > 0
    means[used] = (resp[:, used] * residual[:, None]).sum(axis=0) / mass[used]

    variance = (resp * (residual[:, None] - means) ** 2).sum() / residual.size
    sigma = max(float(np.sqrt(variance)), SIGMA_FLOOR)
    return AppearanceParams(weights, means, sigma), tuple(absent)


def init_appearance(x: ImageGrid, annotations: Sequence[Annotation], n_components: int = 2,
                    iterations: int = 20) -> AppearanceParams:
    """
    Bootstrap appearance parameters from majority-vote labels on covered pixels.

    Means start at evenly spaced quantiles of the covered gray values, weights
    uniform; then ``iterations`` EM steps are run.
    """
    if n_components < 1:
        raise ValidationError(f"n_components must be >= 1, got {n_components}")
    covered = coverage_mask(annotations)
    if not covered.any():
        raise ValidationError("no annotated pixels to initialise the appearance model from")

    votes = np.zeros(covered.shape)
    observers = np.zeros(covered.shape)
    for annotation in annotations:
        votes += np.where(annotation.observed, annotation.labels.labels, 0)
        observers += annotation.observed
    majority = LabelGrid((votes > 0.5 * np.maximum(observers, 1)).astype(np.uint8))

    gray = x.values[covered]
    quantiles = (np.arange(n_components) + 0.5) / n_components
    means = np.quantile(gray, quantiles)
    sigma = max(float(gray.std()) / n_components, SIGMA_FLOOR)
    a = AppearanceParams(np.full((2, n_components), 1.0 / n_components), means, sigma)

    shading = ShadingField.zeros(x.dims)
    for _ in range(iterations):
        a, _ = fit_appearance(x, majority, shading, a, mask=covered)
    logger.debug("initial appearance: means=%s sigma=%.4g weights=%s", a.means, a.sigma, a.weights)
    return a


def prior_statistics(y: LabelGrid, classes: EdgeClassSet) -> PriorStats:
    """Label frequencies and symmetrised pair-configuration frequencies per class."""
    flat = y.flat().astype(np.int64)
    unary = np.bincount(flat, minlength=2) / flat.size
    pairwise = np.zeros((len(classes), 2, 2))
    for c, pairs in enumerate(edge_pairs(y.dims, classes)):
        if not len(pairs):
            continue
        counts = np.zeros((2, 2))
        np.add.at(counts, (flat[pairs[:, 0]], flat[pairs[:, 1]]), 1.0)
        counts = 0.5 * (counts + counts.T)
        pairwise[c] = counts / len(pairs)
    return PriorStats(unary, pairwise)


def update_prior_pcd(data_stats: PriorStats, sample_stats: PriorStats, p: PriorParams,
                     step: float) -> PriorParams:
    """
    Moment-matching step on the prior potentials.

    psi <- psi - step * (data_freq - model_freq), then gauge fixing:
    psi_0(0) = 0 and every pairwise table has zero mean.
    """
    if not step > 0:
        raise ValidationError(f"step must be positive, got {step}")
    if data_stats.pairwise.shape != p.pairwise.shape or sample_stats.pairwise.shape != p.pairwise.shape:
        raise ValidationError("statistics tables do not match the prior shape")
    unary = p.unary - step * (data_stats.unary - sample_stats.unary)
    pairwise = p.pairwise - step * (data_stats.pairwise - sample_stats.pairwise)
    unary = unary - unary[0]
    pairwise = pairwise - pairwise.mean(axis=(1, 2), keepdims=True)
    return PriorParams(unary, pairwise)
