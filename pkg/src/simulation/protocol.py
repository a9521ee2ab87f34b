"""
Simulated crowdsourcing of cell outlines.

Workers receive image tiles and outline up to ``cells_per_task`` fully
visible cells they have not drawn yet on that tile. Tiles keep being handed
out until their uncovered area drops below a threshold or a whole round
makes no progress; the procedure is repeated for ``passes`` independent
passes.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from src.crowd_fusion.exceptions import ValidationError
from src.crowd_fusion.grid import build_annotation, dilate, rasterize_polygon
from src.crowd_fusion.metrics import worker_scores
from src.crowd_fusion.models import Annotation, AnnotationRecord, Dims, LabelGrid, Polygon, check_dims

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkerProfile:
    """Geometric error model of one simulated worker."""
    worker_id: str
    jitter: float = 0.0
    miss_rate: float = 0.0
    vertex_range: Tuple[int, int] = (12, 24)
    bias: float = 0.0

    def __post_init__(self):
        if self.jitter < 0:
            raise ValidationError(f"jitter must be >= 0, got {self.jitter}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValidationError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")
        lo, hi = self.vertex_range
        if lo < 3 or hi < lo:
            raise ValidationError(f"vertex_range must satisfy 3 <= lo <= hi, got {self.vertex_range}")
        object.__setattr__(self, 'vertex_range', (int(lo), int(hi)))


@dataclass(frozen=True)
class Tile:
    """Rectangle [x0, x1) x [y0, y1) in pixel units."""
    tile_id: str
    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, poly: Polygon) -> bool:
        """A cell is fully visible when its whole outline lies inside the tile."""
        points = poly.as_array()
        return bool(
            (points[:, 0] >= self.x0).all() and (points[:, 0] <= self.x1).all()
            and (points[:, 1] >= self.y0).all() and (points[:, 1] <= self.y1).all()
        )

    def uncovered(self, covered: np.ndarray) -> int:
        return int((~covered[self.y0:self.y1, self.x0:self.x1]).sum())


@dataclass(frozen=True)
class ProtocolConfig:
    """Task assignment settings; ``threshold=None`` means 4 * membrane_width**2."""
    passes: int = 2
    cells_per_task: int = 20
    threshold: Optional[int] = None
    membrane_width: int = 2
    tile_size: int = 64
    overlap: float = 0.5

    def __post_init__(self):
        if self.passes < 1:
            raise ValidationError(f"passes must be >= 1, got {self.passes}")
        if self.cells_per_task < 1:
            raise ValidationError(f"cells_per_task must be >= 1, got {self.cells_per_task}")
        if self.membrane_width < 1:
            raise ValidationError(f"membrane_width must be >= 1, got {self.membrane_width}")
        if self.threshold is not None and self.threshold < 0:
            raise ValidationError(f"threshold must be >= 0, got {self.threshold}")
        if self.tile_size < 1:
            raise ValidationError(f"tile_size must be >= 1, got {self.tile_size}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValidationError(f"overlap must lie in [0, 1), got {self.overlap}")

    @property
    def effective_threshold(self) -> int:
        return self.threshold if self.threshold is not None else 4 * self.membrane_width ** 2


@dataclass(frozen=True)
class WorkerPoolConfig:
    """Pool of workers whose jitter grows linearly from best to worst."""
    n_workers: int = 15
    jitter_range: Tuple[float, float] = (0.25, 2.5)
    miss_rate: float = 0.05
    bias: float = 0.0
    vertex_range: Tuple[int, int] = (12, 24)

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValidationError(f"n_workers must be >= 1, got {self.n_workers}")
        lo, hi = self.jitter_range
        if lo < 0 or hi < lo:
            raise ValidationError(f"jitter_range must satisfy 0 <= lo <= hi, got {self.jitter_range}")
        object.__setattr__(self, 'jitter_range', (float(lo), float(hi)))
        object.__setattr__(self, 'vertex_range', tuple(int(v) for v in self.vertex_range))


@dataclass(frozen=True)
class TaskRecord:
    """One CrowdAnnotate task in the protocol log."""
    pass_index: int
    round_index: int
    tile_id: str
    worker_id: str
    n_polygons: int


@dataclass
class ProtocolResult:
    annotations: List[Annotation] = field(default_factory=list)
    tasks: List[TaskRecord] = field(default_factory=list)
    records: List[AnnotationRecord] = field(default_factory=list)

    def task_rows(self) -> List[Tuple]:
        return [(t.pass_index, t.round_index, t.tile_id, t.worker_id, t.n_polygons) for t in self.tasks]


def make_tiles(dims: Dims, tile_size: int = 64, overlap: float = 0.5) -> List[Tile]:
    """
    Regular tiling with the given fractional overlap; the last row and column
    are shifted so every tile lies inside the image.
    """
    width, height = check_dims(dims)

    def starts(extent: int) -> List[int]:
        size = min(tile_size, extent)
        stride = max(1, int(round(size * (1.0 - overlap))))
        points = list(range(0, extent - size + 1, stride))
        if points[-1] + size < extent:
            points.append(extent - size)
        return points

    tiles = []
    for j, y0 in enumerate(starts(height)):
        for i, x0 in enumerate(starts(width)):
            tiles.append(Tile(f"r{j:02d}c{i:02d}", x0, y0,
                              x0 + min(tile_size, width), y0 + min(tile_size, height)))
    return tiles


def make_worker_pool(cfg: WorkerPoolConfig) -> List[WorkerProfile]:
    """Workers ``w000 .. w{n-1}`` ordered from most to least precise."""
    jitters = np.linspace(cfg.jitter_range[0], cfg.jitter_range[1], cfg.n_workers)
    return [
        WorkerProfile(f"w{k:03d}", float(jitter), cfg.miss_rate, cfg.vertex_range, cfg.bias)
        for k, jitter in enumerate(jitters)
    ]


def _radius_profile(poly: Polygon) -> Tuple[Tuple[float, float], np.ndarray, np.ndarray]:
    points = poly.as_array()
    cx, cy = poly.centroid()
    angles = np.arctan2(points[:, 1] - cy, points[:, 0] - cx)
    radii = np.hypot(points[:, 0] - cx, points[:, 1] - cy)
    order = np.argsort(angles)
    return (cx, cy), angles[order], radii[order]


def draw_outline(cell: Polygon, profile: WorkerProfile, rng: np.random.Generator) -> Polygon:
    """
    A worker's rendition of one cell.

    The outline is resampled at evenly spaced angles around the cell centroid;
    each radius is shifted by the worker's bias and by Gaussian jitter. Equal
    angular steps keep the result a simple star-shaped polygon.
    """
    (cx, cy), angles, radii = _radius_profile(cell)
    n = int(rng.integers(profile.vertex_range[0], profile.vertex_range[1] + 1))
    theta = np.linspace(-np.pi, np.pi, n, endpoint=False)
    r = np.interp(theta, angles, radii, period=2.0 * np.pi)
    if profile.jitter > 0:
        r = r + rng.normal(0.0, profile.jitter, n)
    r = np.maximum(r + profile.bias, 0.5)
    return Polygon(tuple(zip((cx + r * np.cos(theta)).tolist(), (cy + r * np.sin(theta)).tolist())))


def simulate_worker(gt_cells: Sequence[Polygon], tile: Tile, already_annotated: Set[int],
                    profile: WorkerProfile, rng: np.random.Generator,
                    cells_per_task: int = 20) -> Dict[int, Polygon]:
    """
    One annotation task on one tile.

    Args:
        gt_cells: Ground-truth outlines
        tile: Tile shown to the worker
        already_annotated: Indices of cells already outlined on this tile
        profile: Worker error model
        rng: Random source
        cells_per_task: Cells requested per task

    Returns:
        Mapping cell index -> drawn outline; missed cells are absent
    """
    eligible = [k for k, cell in enumerate(gt_cells)
                if k not in already_annotated and tile.contains(cell)]
    if len(eligible) > cells_per_task:
        eligible = sorted(rng.choice(eligible, cells_per_task, replace=False).tolist())

    drawn = {}
    for k in eligible:
        if rng.random() < profile.miss_rate:
            continue
        drawn[k] = draw_outline(gt_cells[k], profile, rng)
    return drawn


def coverage_image(polygons: Sequence[Polygon], dims: Dims, membrane_width: int) -> np.ndarray:
    """Union of polygon interiors dilated by the membrane width."""
    width, height = check_dims(dims)
    covered = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        covered |= rasterize_polygon(poly, dims)
    return dilate(covered, membrane_width)


def get_not_covered_tiles(tiles: Sequence[Tile], polygons: Sequence[Polygon], membrane_width: int,
                          threshold: int, dims: Dims) -> List[Tile]:
    """Tiles with more than ``threshold`` pixels left uncovered."""
    covered = coverage_image(polygons, dims, membrane_width)
    return [tile for tile in tiles if tile.uncovered(covered) > threshold]


def run_protocol(tiles: Sequence[Tile], gt_cells: Sequence[Polygon], workers: Sequence[WorkerProfile],
                 cfg: ProtocolConfig, rng: np.random.Generator, dims: Dims) -> ProtocolResult:
    """
    Hand out tiles to random workers until every tile is covered.

    Each pass starts with empty per-tile polygon sets. A round gives every
    not-yet-covered tile one task; rounds stop once no tile is left or the set
    of uncovered tiles and their uncovered counts repeat. This guard is
    stricter than comparing the set alone: a round that shrinks a tile's
    uncovered area without clearing it keeps the pass going. A cap of
    ``len(tiles) * max(1, len(gt_cells))`` rounds bounds every pass.

    Args:
        tiles: Image tiles
        gt_cells: Ground-truth outlines
        workers: Worker pool, one drawn uniformly per task
        cfg: Protocol settings
        rng: Random source
        dims: Image (width, height)

    Returns:
        ProtocolResult with one Annotation per non-empty task and the task log
    """
    if not workers:
        raise ValidationError("the worker pool is empty")
    if not tiles:
        raise ValidationError("no tiles to annotate")
    threshold = cfg.effective_threshold
    max_rounds = len(tiles) * max(1, len(gt_cells))
    result = ProtocolResult()

    for k in range(1, cfg.passes + 1):
        per_tile: Dict[str, Dict[int, Polygon]] = {tile.tile_id: {} for tile in tiles}
        pending = list(tiles)
        previous = None
        for round_index in range(1, max_rounds + 1):
            for tile in pending:
                worker = workers[int(rng.integers(len(workers)))]
                drawn = simulate_worker(gt_cells, tile, set(per_tile[tile.tile_id]), worker,
                                        rng, cfg.cells_per_task)
                per_tile[tile.tile_id].update(drawn)
                result.tasks.append(TaskRecord(k, round_index, tile.tile_id, worker.worker_id, len(drawn)))
                if drawn:
                    outlines = list(drawn.values())
                    result.annotations.append(build_annotation(
                        worker.worker_id, outlines, cfg.membrane_width, dims, tile.tile_id
                    ))
                    result.records.append(AnnotationRecord(worker.worker_id, tile.tile_id, tuple(outlines)))

            everything = [p for drawn in per_tile.values() for p in drawn.values()]
            covered = coverage_image(everything, dims, cfg.membrane_width)
            counts = {tile.tile_id: tile.uncovered(covered) for tile in tiles}
            pending = [tile for tile in tiles if counts[tile.tile_id] > threshold]
            state = {tile.tile_id: counts[tile.tile_id] for tile in pending}
            if not pending or state == previous:
                break
            previous = state
        else:
            logger.warning("pass %d hit the round cap with %d tiles uncovered", k, len(pending))

        logger.info("pass %d: %d rounds, %d tiles left uncovered", k, round_index, len(pending))

    logger.info("protocol produced %d annotations from %d tasks",
                len(result.annotations), len(result.tasks))
    return result


def simulate_pixel_annotations(gt: LabelGrid, diagonals: Sequence, rng: np.random.Generator,
                               observed: Optional[np.ndarray] = None) -> List[Annotation]:
    """
    Workers with planted pixelwise confusion matrices.

    Args:
        gt: Ground-truth labeling
        diagonals: Per worker either p(0|0) = p(1|1) as one float or a
            (p(0|0), p(1|1)) pair
        rng: Random source
        observed: Shared observation mask, full coverage when None

    Returns:
        One Annotation per worker, ids ``p000, p001, ...``
    """
    labels = gt.labels
    mask = np.ones(labels.shape, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    annotations = []
    for k, diagonal in enumerate(diagonals):
        keep0, keep1 = (diagonal, diagonal) if np.isscalar(diagonal) else diagonal
        if not (0.0 <= keep0 <= 1.0 and 0.0 <= keep1 <= 1.0):
            raise ValidationError(f"planted diagonal {diagonal} outside [0, 1]")
        keep = np.where(labels == 1, keep1, keep0)
        reported = np.where(rng.random(labels.shape) < keep, labels, 1 - labels)
        annotations.append(Annotation(f"p{k:03d}", LabelGrid(reported.astype(np.uint8)), mask))
    return annotations


def true_worker_scores(annotations: Sequence[Annotation], gt: LabelGrid) -> Dict[str, float]:
    """Per-worker pixel accuracy against the ground truth."""
    return worker_scores(annotations, gt)
