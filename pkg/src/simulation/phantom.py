"""
Synthetic epithelium phantoms.

A seeded Voronoi tessellation stands in for a tissue image: pixels close to
a Voronoi boundary form a bright membrane mesh (label 0), the rest are cell
interiors (label 1). The image adds a smooth shading field and Gaussian
noise to the two label means.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

from src.crowd_fusion.exceptions import ValidationError
from src.crowd_fusion.models import Dims, ImageGrid, LabelGrid, Polygon, check_dims

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class PhantomConfig:
    """Phantom geometry and intensity model."""
    dims: Dims = (128, 128)
    n_cells: int = 60
    membrane_width: int = 2
    interior_mean: float = 0.3
    membrane_mean: float = 0.8
    noise_sigma: float = 0.08
    shading_amplitude: float = 0.1
    shading_scale: float = 20.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'dims', check_dims(self.dims))
        if self.n_cells < 1:
            raise ValidationError(f"n_cells must be >= 1, got {self.n_cells}")
        if self.membrane_width < 1:
            raise ValidationError(f"membrane_width must be >= 1, got {self.membrane_width}")
        if self.noise_sigma < 0 or self.shading_amplitude < 0:
            raise ValidationError("noise_sigma and shading_amplitude must be >= 0")
        if not self.shading_scale > 0:
            raise ValidationError(f"shading_scale must be positive, got {self.shading_scale}")

    @property
    def capacity(self) -> int:
        """Most cells that still leave every cell a pixel of interior."""
        width, height = self.dims
        return (width * height) // (2 * self.membrane_width + 1) ** 2


@dataclass(frozen=True, eq=False)
class Phantom:
    image: ImageGrid
    labels: LabelGrid
    cells: List[Polygon]
    seeds: np.ndarray

    @property
    def dims(self) -> Dims:
        return self.labels.dims


def place_seeds(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Poisson-disc style rejection sampling of Voronoi sites.

    The minimum spacing starts at half the mean cell diameter and shrinks
    whenever too many candidates are rejected in a row.

    Returns:
        (n_cells, 2) array of (x, y) sites
    """
    width, height = cfg.dims
    spacing = 0.5 * math.sqrt(width * height / cfg.n_cells)
    seeds: List[Tuple[float, float]] = []
    rejected = 0
    while len(seeds) < cfg.n_cells:
        candidate = (rng.uniform(0, width), rng.uniform(0, height))
        if all(math.hypot(candidate[0] - sx, candidate[1] - sy) >= spacing for sx, sy in seeds):
            seeds.append(candidate)
            rejected = 0
            continue
        rejected += 1
        if rejected > 200:
            spacing *= 0.9
            rejected = 0
    return np.array(seeds)


def membrane_mask(seeds: np.ndarray, dims: Dims, membrane_width: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pixels whose center lies within ``membrane_width / 2`` of a Voronoi boundary.

    Returns:
        (membrane mask, index of the nearest site) both of shape (height, width)
    """
    width, height = dims
    rows, cols = np.indices((height, width))
    centres = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    tree = cKDTree(seeds)
    if len(seeds) == 1:
        nearest = np.zeros(centres.shape[0], dtype=np.int64)
        return np.zeros((height, width), dtype=bool), nearest.reshape(height, width)

    k = min(3, len(seeds))
    dist, idx = tree.query(centres, k=k)
    # nearest bisector between the closest site and the next two; the third
    # one matters near triple junctions
    to_boundary = np.full(centres.shape[0], np.inf)
    for j in range(1, k):
        separation = np.linalg.norm(seeds[idx[:, 0]] - seeds[idx[:, j]], axis=1)
        to_boundary = np.minimum(to_boundary, (dist[:, j] ** 2 - dist[:, 0] ** 2) / (2.0 * separation))
    membrane = to_boundary < membrane_width / 2.0
    return membrane.reshape(height, width), idx[:, 0].reshape(height, width)


def cell_outline(mask: np.ndarray) -> Polygon:
    """
    Outline of a binary region as a polygon in image coordinates.

    Traces the 0.5 iso-contour of the padded mask, so rasterizing the outline
    at pixel centers gives the region back.
    """
    padded = np.pad(mask.astype(np.float64), 1)
    contours = measure.find_contours(padded, 0.5)
    contour = max(contours, key=len)[:-1]
    xs = contour[:, 1] - 0.5
    ys = contour[:, 0] - 0.5
    vertices = [(float(x), float(y)) for x, y in zip(xs, ys)]
    deduped = [v for k, v in enumerate(vertices) if v != vertices[k - 1]]
    return Polygon(tuple(deduped))


def shading_field(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """Low-frequency random field with standard deviation ``shading_amplitude``."""
    width, height = cfg.dims
    noise = ndimage.gaussian_filter(rng.standard_normal((height, width)), cfg.shading_scale, mode='wrap')
    spread = noise.std()
    if spread == 0 or cfg.shading_amplitude == 0:
        return np.zeros((height, width))
    return cfg.shading_amplitude * (noise - noise.mean()) / spread


def generate_phantom(cfg: PhantomConfig) -> Phantom:
    """
    Build a phantom image, its ground-truth labeling and the cell outlines.

    Args:
        cfg: Phantom settings

    Returns:
        Phantom whose ``cells`` hold one outline per non-empty Voronoi cell

    Raises:
        ValidationError: more cells than the grid can hold
    """
    if cfg.n_cells > cfg.capacity:
        raise ValidationError(
            f"{cfg.n_cells} cells do not fit a {cfg.dims[0]}x{cfg.dims[1]} grid "
            f"with membrane width {cfg.membrane_width} (capacity {cfg.capacity})"
        )
    rng = np.random.default_rng(cfg.seed)
    seeds = place_seeds(cfg, rng)
    membrane, nearest = membrane_mask(seeds, cfg.dims, cfg.membrane_width)
    labels = (~membrane).astype(np.uint8)

    cells = []
    for k in range(len(seeds)):
        region = (nearest == k) & ~membrane
        components, n = ndimage.label(region, structure=FOUR_CONNECTED)
        if n == 0:
            logger.debug("cell %d lost its interior to the membrane", k)
            continue
        sizes = np.bincount(components.ravel())[1:]
        cells.append(cell_outline(components == int(np.argmax(sizes)) + 1))

    means = np.where(labels == 1, cfg.interior_mean, cfg.membrane_mean)
    values = means + shading_field(cfg, rng) + cfg.noise_sigma * rng.standard_normal(means.shape)
    image = ImageGrid(np.clip(values, 0.0, 1.0))

    logger.info("phantom %dx%d: %d cells, %.1f%% membrane", cfg.dims[0], cfg.dims[1],
                len(cells), 100.0 * membrane.mean())
    return Phantom(image, LabelGrid(labels), cells, seeds)
