"""
Grid plumbing shared by every other module: polygon rasterization,
annotation construction and edge-class enumeration.

Pixel (col, row) has its center at (col + 0.5, row + 0.5); polygon vertices
are given in the same continuous (x, y) image coordinates.
"""

import logging
from typing import List, Sequence

import numpy as np
from scipy import ndimage

from .exceptions import ValidationError
from .models import Annotation, Dims, EdgeClassSet, LabelGrid, Polygon, check_dims

logger = logging.getLogger(__name__)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _on_segment(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Bounding-box test for a point already known to be collinear with a-b."""
    return (
        (np.minimum(a[..., 0], b[..., 0]) <= p[..., 0]) & (p[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
        & (np.minimum(a[..., 1], b[..., 1]) <= p[..., 1]) & (p[..., 1] <= np.maximum(a[..., 1], b[..., 1]))
    )


def validate_polygon(poly: Polygon) -> np.ndarray:
    """
    Check that a polygon is a simple closed outline.

    Args:
        poly: Polygon to check

    Returns:
        Its vertices as an (n, 2) array

    Raises:
        ValidationError: fewer than 3 vertices, repeated consecutive vertices,
            zero area, or self-intersecting edges
    """
    points = poly.as_array()
    n = len(points)
    if n < 3:
        raise ValidationError(f"polygon needs at least 3 vertices, got {n}")
    if not np.isfinite(points).all():
        raise ValidationError("polygon vertices must be finite")

    starts = points
    ends = np.roll(points, -1, axis=0)
    edges = ends - starts
    if (np.abs(edges).sum(axis=1) == 0).any():
        raise ValidationError("polygon has repeated consecutive vertices")

    area = 0.5 * _cross(starts, ends).sum()
    if abs(area) < 1e-12:
        raise ValidationError("polygon is degenerate (zero area)")

    # Adjacent edges may only meet at their shared vertex: a straight
    # reversal folds the outline back onto itself.
    following = np.roll(edges, -1, axis=0)
    folded = (_cross(edges, following) == 0) & ((edges * following).sum(axis=1) < 0)
    if folded.any():
        raise ValidationError("polygon is self-intersecting (edge folds back)")

    if n > 3:
        i, j = np.triu_indices(n, k=2)
        keep = ~((i == 0) & (j == n - 1))
        i, j = i[keep], j[keep]
        p1, p2, p3, p4 = starts[i], ends[i], starts[j], ends[j]
        d1 = _cross(p4 - p3, p1 - p3)
        d2 = _cross(p4 - p3, p2 - p3)
        d3 = _cross(p2 - p1, p3 - p1)
        d4 = _cross(p2 - p1, p4 - p1)
        proper = (d1 * d2 < 0) & (d3 * d4 < 0)
        touching = (
            ((d1 == 0) & _on_segment(p3, p4, p1))
            | ((d2 == 0) & _on_segment(p3, p4, p2))
            | ((d3 == 0) & _on_segment(p1, p2, p3))
            | ((d4 == 0) & _on_segment(p1, p2, p4))
        )
        if (proper | touching).any():
            raise ValidationError("polygon is self-intersecting")

    return points


def rasterize_polygon(poly: Polygon, dims: Dims) -> np.ndarray:
    """
    Rasterize a polygon with the even-odd rule evaluated at pixel centers.

    Args:
        poly: Simple polygon in image coordinates
        dims: Grid (width, height)

    Returns:
        Boolean mask of shape (height, width)
    """
    width, height = check_dims(dims)
    points = validate_polygon(poly)
    mask = np.zeros((height, width), dtype=bool)

    col_lo = max(int(np.floor(points[:, 0].min() - 0.5)), 0)
    col_hi = min(int(np.ceil(points[:, 0].max() - 0.5)), width - 1)
    row_lo = max(int(np.floor(points[:, 1].min() - 0.5)), 0)
    row_hi = min(int(np.ceil(points[:, 1].max() - 0.5)), height - 1)
    if col_lo > col_hi or row_lo > row_hi:
        return mask

    px = np.arange(col_lo, col_hi + 1) + 0.5
    py = (np.arange(row_lo, row_hi + 1) + 0.5)[:, None]
    inside = np.zeros((py.size, px.size), dtype=bool)

    for (x1, y1), (x2, y2) in zip(points, np.roll(points, -1, axis=0)):
        if y1 == y2:
            continue
        straddles = (y1 > py) != (y2 > py)
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (px < x_cross)

    mask[row_lo:row_hi + 1, col_lo:col_hi + 1] = inside
    return mask


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev (square structuring element) dilation by ``radius`` pixels."""
    if radius < 0:
        raise ValidationError(f"dilation radius must be >= 0, got {radius}")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask, structure=structure)


def build_annotation(worker_id: str, polygons: Sequence[Polygon], ring_width: int,
                     dims: Dims, tile_id: str = None) -> Annotation:
    """
    Turn one worker's polygons into a partial labeling.

    The worker asserts label 1 inside every polygon and label 0 on a membrane
    ring of ``ring_width`` pixels around them; nothing else is observed.

    Args:
        worker_id: Worker identifier
        polygons: Outlines drawn by the worker
        ring_width: Membrane ring width in pixels
        dims: Grid (width, height)
        tile_id: Optional tile the polygons were drawn on

    Returns:
        Annotation with labels and observation mask
    """
    width, height = check_dims(dims)
    if ring_width < 0:
        raise ValidationError(f"ring_width must be >= 0, got {ring_width}")

    interior = np.zeros((height, width), dtype=bool)
    overlap_total = 0
    for poly in polygons:
        poly_mask = rasterize_polygon(poly, (width, height))
        overlap_total += int((poly_mask & interior).sum())
        interior |= poly_mask

    if overlap_total:
        logger.warning(
            "worker %s drew overlapping polygons (%d shared pixels); interiors unioned",
            worker_id, overlap_total,
        )

    observed = dilate(interior, ring_width)
    return Annotation(
        worker_id=worker_id,
        labels=LabelGrid(interior.astype(np.uint8)),
        observed=observed,
        tile_id=tile_id,
    )


def edge_pairs(dims: Dims, classes: EdgeClassSet) -> List[np.ndarray]:
    """
    Enumerate the edges of every edge class.

    Args:
        dims: Grid (width, height)
        classes: Edge classes, one offset (dx, dy) each

    Returns:
        One (n_c, 2) int array of flat pixel-index pairs (i, i + v) per class
    """
    width, height = check_dims(dims)
    pairs = []
    for dx, dy in classes.offsets:
        rows = np.arange(max(0, -dy), height - max(0, dy))
        cols = np.arange(max(0, -dx), width - max(0, dx))
        if rows.size == 0 or cols.size == 0:
            pairs.append(np.zeros((0, 2), dtype=np.int64))
            continue
        source = (rows[:, None] * width + cols[None, :]).ravel()
        target = source + dy * width + dx
        pairs.append(np.stack([source, target], axis=1).astype(np.int64))
    return pairs


def coverage_mask(annotations: Sequence[Annotation]) -> np.ndarray:
    """Pixels observed by at least one annotation."""
    if not annotations:
        raise ValidationError("coverage requires at least one annotation")
    coverage = np.zeros_like(annotations[0].observed, dtype=bool)
    for annotation in annotations:
        coverage |= annotation.observed
    return coverage


def check_annotation_dims(annotations: Sequence[Annotation], dims: Dims) -> None:
    """Raise if any annotation does not live on a (width, height) grid."""
    for annotation in annotations:
        if annotation.dims != tuple(dims):
            raise ValidationError(
                f"annotation of worker {annotation.worker_id} has dims "
                f"{annotation.dims}, expected {tuple(dims)}"
            )
