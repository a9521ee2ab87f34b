"""
Segmentation and user-rating evaluation measures.

Label 1 is cell interior, label 0 membrane. F1 treats membrane as the
positive class. Cells are 4-connected components of the interior label.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .exceptions import ValidationError
from .models import Annotation, LabelGrid

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class Partition:
    """Region id per pixel, ids contiguous from 0."""
    cell_id: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.cell_id, dtype=np.int64)
        if ids.ndim != 2 or ids.size == 0:
            raise ValidationError(f"partition must be a non-empty 2-D array, got shape {ids.shape}")
        present = np.unique(ids)
        if present[0] != 0 or present[-1] != len(present) - 1:
            raise ValidationError("partition ids must be contiguous from 0")
        ids = ids.copy()
        ids.setflags(write=False)
        object.__setattr__(self, 'cell_id', ids)

    @property
    def n_regions(self) -> int:
        return int(self.cell_id.max()) + 1


@dataclass(frozen=True)
class CellRegion:
    """One connected interior component."""
    region_id: int
    centroid: Tuple[float, float]
    area: int

    @property
    def equivalent_radius(self) -> float:
        return float(np.sqrt(self.area / np.pi))


@dataclass(frozen=True)
class CellMatching:
    pairs: List[Tuple[int, int]]
    over_count: int
    under_count: int


@dataclass(frozen=True)
class MetricsReport:
    """Segmentation quality against ground truth on the full image or covered pixels only."""
    mask_mode: str
    pixel_accuracy: float
    f1: float
    voi: float
    over_segmented: int
    under_segmented: int
    over_segmented_pct: float
    under_segmented_pct: float
    n_pred_cells: int
    n_gt_cells: int

    def to_dict(self) -> Dict:
        return asdict(self)


def _check_pair(pred: LabelGrid, gt: LabelGrid, mask: Optional[np.ndarray]) -> np.ndarray:
    if pred.dims != gt.dims:
        raise ValidationError(f"prediction dims {pred.dims} differ from ground truth dims {gt.dims}")
    if mask is None:
        return np.ones(gt.labels.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.labels.shape:
        raise ValidationError(f"mask shape {mask.shape} does not match grid shape {gt.labels.shape}")
    if not mask.any():
        raise ValidationError("evaluation mask is empty")
    return mask


def pixel_accuracy(pred: LabelGrid, gt: LabelGrid, mask: Optional[np.ndarray] = None) -> float:
    """Fraction of (masked) pixels where prediction and ground truth agree."""
    mask = _check_pair(pred, gt, mask)
    return float((pred.labels[mask] == gt.labels[mask]).mean())


def f1_score(pred: LabelGrid, gt: LabelGrid, mask: Optional[np.ndarray] = None) -> float:
    """
    F1 with membrane (label 0) as the positive class.

    Returns:
        2TP / (2TP + FP + FN); 1.0 when neither side has any membrane pixel
    """
    mask = _check_pair(pred, gt, mask)
    predicted = pred.labels[mask] == 0
    actual = gt.labels[mask] == 0
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def labeling_to_partition(y: LabelGrid) -> Partition:
    """
    Partition the image into cells.

    Interior components get ids 0..n-1 in scan order; every membrane pixel
    joins the component with the nearest member pixel (Euclidean), ties going
    to the lower id.

    Raises:
        ValidationError: the labeling has no interior pixel
    """
    components, n = ndimage.label(y.labels == 1, structure=FOUR_CONNECTED)
    if n == 0:
        raise ValidationError("cannot partition a labeling without interior pixels")

    best_dist = np.full(components.shape, np.inf)
    best_id = np.zeros(components.shape, dtype=np.int64)
    for k in range(1, n + 1):
        dist = ndimage.distance_transform_edt(components != k)
        closer = dist < best_dist
        best_dist[closer] = dist[closer]
        best_id[closer] = k - 1
    return Partition(best_id)


def variation_of_information(p: Partition, q: Partition, mask: Optional[np.ndarray] = None) -> float:
    """
    VoI = H(P|Q) + H(Q|P) in nats, from the region-overlap contingency table.
    """
    if p.cell_id.shape != q.cell_id.shape:
        raise ValidationError("partitions must share dims")
    a, b = p.cell_id, q.cell_id
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        a, b = a[mask], b[mask]
    a, b = a.ravel(), b.ravel()
    if a.size == 0:
        raise ValidationError("cannot compare partitions on an empty mask")

    joint_codes = a * (int(b.max()) + 1) + b
    codes, joint = np.unique(joint_codes, return_counts=True)
    rows = codes // (int(b.max()) + 1)
    cols = codes % (int(b.max()) + 1)
    row_totals = np.bincount(a)[rows]
    col_totals = np.bincount(b)[cols]
    n = float(a.size)
    r = joint / n
    voi = -(r * (np.log(joint / row_totals) + np.log(joint / col_totals))).sum()
    return float(max(voi, 0.0))


def extract_cells(y: LabelGrid) -> List[CellRegion]:
    """Interior components with centroids in (x, y) image coordinates."""
    components, n = ndimage.label(y.labels == 1, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    centres = ndimage.center_of_mass(np.ones_like(components), components, index)
    areas = ndimage.sum_labels(np.ones_like(components), components, index)
    return [
        CellRegion(k, (float(c[1]) + 0.5, float(c[0]) + 0.5), int(area))
        for k, (c, area) in enumerate(zip(centres, areas))
    ]


def match_cells(pred_cells: Sequence[CellRegion], gt_cells: Sequence[CellRegion],
                max_centroid_dist: Optional[float] = None,
                radius_factor: float = 1.5) -> CellMatching:
    """
    Minimum-cost assignment of predicted to ground-truth cells by centroid distance.

    Args:
        pred_cells: Cells of the segmentation result
        gt_cells: Ground-truth cells
        max_centroid_dist: Global distance limit; when None each GT cell allows
            ``radius_factor`` times its equivalent radius
        radius_factor: Multiplier for the per-cell limit

    Returns:
        CellMatching with (pred index, gt index) pairs and the unmatched counts
    """
    if max_centroid_dist is not None and not max_centroid_dist > 0:
        raise ValidationError(f"max_centroid_dist must be positive, got {max_centroid_dist}")
    if not pred_cells or not gt_cells:
        return CellMatching([], len(pred_cells), len(gt_cells))

    pred_xy = np.array([c.centroid for c in pred_cells])
    gt_xy = np.array([c.centroid for c in gt_cells])
    cost = np.linalg.norm(pred_xy[:, None, :] - gt_xy[None, :, :], axis=-1)
    if max_centroid_dist is None:
        limit = radius_factor * np.array([c.equivalent_radius for c in gt_cells])[None, :]
    else:
        limit = np.full((1, len(gt_cells)), float(max_centroid_dist))
    allowed = cost <= limit

    # A forbidden pair costs more than any complete set of allowed pairs.
    forbidden = (cost[allowed].sum() if allowed.any() else 0.0) + 1.0
    padded = np.where(allowed, cost, forbidden)
    rows, cols = linear_sum_assignment(padded)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]
    return CellMatching(pairs, len(pred_cells) - len(pairs), len(gt_cells) - len(pairs))


def _cells_in_mask(cells: Sequence[CellRegion], mask: np.ndarray) -> List[CellRegion]:
    height, width = mask.shape
    kept = []
    for cell in cells:
        col = min(int(cell.centroid[0]), width - 1)
        row = min(int(cell.centroid[1]), height - 1)
        if mask[row, col]:
            kept.append(cell)
    return kept


def evaluate(pred: LabelGrid, gt: LabelGrid, mask: Optional[np.ndarray] = None,
             radius_factor: float = 1.5, max_centroid_dist: Optional[float] = None) -> MetricsReport:
    """
    All segmentation measures on the full image (``mask=None``) or a sub-region.

    Cells are counted in a mask when their centroid lies inside it.
    """
    mode = 'full' if mask is None else 'covered'
    region = _check_pair(pred, gt, mask)

    pred_cells = extract_cells(pred)
    gt_cells = extract_cells(gt)
    if mask is not None:
        pred_cells = _cells_in_mask(pred_cells, region)
        gt_cells = _cells_in_mask(gt_cells, region)
    matching = match_cells(pred_cells, gt_cells, max_centroid_dist, radius_factor)

    if pred.labels.any() and gt.labels.any():
        voi = variation_of_information(
            labeling_to_partition(pred), labeling_to_partition(gt), None if mask is None else region
        )
    else:
        voi = float('nan')
        logger.warning("VoI undefined: a labeling has no interior pixels")

    n_gt = len(gt_cells)
    return MetricsReport(
        mask_mode=mode,
        pixel_accuracy=pixel_accuracy(pred, gt, mask),
        f1=f1_score(pred, gt, mask),
        voi=voi,
        over_segmented=matching.over_count,
        under_segmented=matching.under_count,
        over_segmented_pct=100.0 * matching.over_count / n_gt if n_gt else 0.0,
        under_segmented_pct=100.0 * matching.under_count / n_gt if n_gt else 0.0,
        n_pred_cells=len(pred_cells),
        n_gt_cells=n_gt,
    )


def ranking_quality(estimated_scores: Dict[str, float], true_scores: Dict[str, float]) -> float:
    """
    Mean absolute difference between estimated and true worker ranks.

    Ranks are descending by score with ties averaged.

    Raises:
        ValidationError: the two score sets name different workers
    """
    if set(estimated_scores) != set(true_scores):
        raise ValidationError("estimated and true scores must cover the same workers")
    if not estimated_scores:
        raise ValidationError("ranking quality needs at least one worker")
    workers = sorted(estimated_scores)
    estimated = rankdata([-estimated_scores[w] for w in workers], method='average')
    true = rankdata([-true_scores[w] for w in workers], method='average')
    return float(np.abs(estimated - true).mean())


def worker_pixel_accuracy(a: Annotation, reference: LabelGrid) -> float:
    """Agreement with a reference labeling over the annotation's observed pixels."""
    if a.dims != reference.dims:
        raise ValidationError(f"annotation dims {a.dims} differ from reference dims {reference.dims}")
    if a.n_observed == 0:
        raise ValidationError(f"annotation of worker {a.worker_id} observes no pixels")
    return float((a.labels.labels[a.observed] == reference.labels[a.observed]).mean())


def worker_scores(annotations: Sequence[Annotation], reference: LabelGrid) -> Dict[str, float]:
    """Pixel accuracy per worker, pooled over all of the worker's annotations."""
    agree: Dict[str, int] = {}
    seen: Dict[str, int] = {}
    for a in annotations:
        if a.n_observed == 0:
            continue
        agree[a.worker_id] = agree.get(a.worker_id, 0) + int(
            (a.labels.labels[a.observed] == reference.labels[a.observed]).sum()
        )
        seen[a.worker_id] = seen.get(a.worker_id, 0) + a.n_observed
    return {w: agree[w] / seen[w] for w in sorted(seen)}


def best_and_worst_workers(scores: Dict[str, float]) -> Tuple[str, str]:
    """Highest and lowest scoring workers (ties broken by id)."""
    if not scores:
        raise ValidationError("no worker scores given")
    ordered = sorted(scores, key=lambda w: (-scores[w], w))
    return ordered[0], ordered[-1]
