"""
Data models for the crowd label fusion system.

Grids are stored as 2-D numpy arrays of shape (height, width); the flat pixel
index of (col, row) is ``row * width + col``. Every model is immutable after
construction: arrays are copied and marked read-only.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ValidationError

Dims = Tuple[int, int]  # (width, height)

# Row-stochastic tolerance shared by confusion checks.
STOCHASTIC_TOL = 1e-12


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def check_dims(dims: Dims) -> Dims:
    """Validate a (width, height) pair and return it as ints."""
    width, height = int(dims[0]), int(dims[1])
    if width <= 0 or height <= 0:
        raise ValidationError(f"grid dimensions must be positive, got {dims}")
    return width, height


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Binary labeling y: 1 = cell interior, 0 = membrane/background."""
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ValidationError(f"labels must be a non-empty 2-D array, got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("labels must only contain 0 and 1")
        object.__setattr__(self, 'labels', _frozen(labels, np.uint8))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def dims(self) -> Dims:
        return (self.width, self.height)

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> 'LabelGrid':
        """Build a grid from a row-major sequence of width*height labels."""
        width, height = check_dims((width, height))
        flat = np.asarray(values)
        if flat.size != width * height:
            raise ValidationError(f"expected {width * height} labels, got {flat.size}")
        return cls(flat.reshape(height, width))

    @classmethod
    def zeros(cls, dims: Dims) -> 'LabelGrid':
        width, height = check_dims(dims)
        return cls(np.zeros((height, width), dtype=np.uint8))

    def flat(self) -> np.ndarray:
        return self.labels.ravel()

    def flipped(self) -> 'LabelGrid':
        return LabelGrid(1 - self.labels)

    def equals(self, other: 'LabelGrid') -> bool:
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Gray-value image x, values normalised to [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValidationError(f"image must be a non-empty 2-D array, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValidationError("image values must be finite")
        object.__setattr__(self, 'values', _frozen(values, np.float64))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> Dims:
        return (self.width, self.height)


@dataclass(frozen=True, eq=False)
class Annotation:
    """One worker's partial observation of the labeling."""
    worker_id: str
    labels: LabelGrid
    observed: np.ndarray
    tile_id: Optional[str] = None

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=bool)
        if observed.shape != self.labels.labels.shape:
            raise ValidationError(
                f"observed mask shape {observed.shape} does not match labels "
                f"shape {self.labels.labels.shape} for worker {self.worker_id}"
            )
        object.__setattr__(self, 'worker_id', str(self.worker_id))
        object.__setattr__(self, 'observed', _frozen(observed, bool))

    @property
    def dims(self) -> Dims:
        return self.labels.dims

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    def flipped(self) -> 'Annotation':
        """Same observation domain with every asserted label inverted."""
        return replace(self, labels=self.labels.flipped())


@dataclass(frozen=True)
class EdgeClassSet:
    """Edge classes E_c, one translation vector (dx, dy) per class."""
    offsets: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        offsets = tuple((int(dx), int(dy)) for dx, dy in self.offsets)
        seen = set()
        for offset in offsets:
            if offset == (0, 0):
                raise ValidationError("edge class offsets must not be the zero vector")
            if offset in seen:
                raise ValidationError(f"duplicate edge class offset {offset}")
            if (-offset[0], -offset[1]) in seen:
                raise ValidationError(f"offset {offset} and its negation are both present")
            seen.add(offset)
        object.__setattr__(self, 'offsets', offsets)

    def __len__(self) -> int:
        return len(self.offsets)

    @classmethod
    def default(cls) -> 'EdgeClassSet':
        """Densely connected neighbourhood used unless configured otherwise."""
        return cls(((1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2)))

    @classmethod
    def four_neighbour(cls) -> 'EdgeClassSet':
        return cls(((1, 0), (0, 1)))


@dataclass(frozen=True)
class Polygon:
    """Closed polygon; the last vertex connects back to the first."""
    vertices: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, 'vertices', tuple((float(x), float(y)) for x, y in self.vertices)
        )

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=np.float64).reshape(-1, 2)

    def centroid(self) -> Tuple[float, float]:
        """Vertex mean, good enough for star-shaped outlines."""
        points = self.as_array()
        return float(points[:, 0].mean()), float(points[:, 1].mean())


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Worker reliability p[l][l'] = p_u(l' | l), rows indexed by the true label."""
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (2, 2):
            raise ValidationError(f"confusion matrix must be 2x2, got {p.shape}")
        if (p < 0).any() or not np.isfinite(p).all():
            raise ValidationError("confusion entries must be finite and nonnegative")
        if np.abs(p.sum(axis=1) - 1.0).max() > STOCHASTIC_TOL:
            raise ValidationError(f"confusion rows must sum to 1, got {p.sum(axis=1)}")
        object.__setattr__(self, 'p', _frozen(p, np.float64))

    @classmethod
    def initial(cls, diagonal: float = 0.8) -> 'ConfusionMatrix':
        if not 0.0 <= diagonal <= 1.0:
            raise ValidationError(f"initial diagonal must lie in [0, 1], got {diagonal}")
        return cls([[diagonal, 1.0 - diagonal], [1.0 - diagonal, diagonal]])

    @classmethod
    def identity(cls) -> 'ConfusionMatrix':
        return cls(np.eye(2))

    def prob(self, reported: int, true: int) -> float:
        """p_u(reported | true)."""
        return float(self.p[true, reported])

    def label_swapped(self) -> 'ConfusionMatrix':
        """The matrix seen after renaming label 0 <-> 1 on both axes."""
        return ConfusionMatrix(self.p[::-1, ::-1])

    def as_row(self) -> Tuple[float, float, float, float]:
        """(p(0|0), p(1|0), p(0|1), p(1|1))."""
        return (self.prob(0, 0), self.prob(1, 0), self.prob(0, 1), self.prob(1, 1))

    def allclose(self, other: 'ConfusionMatrix', atol: float = 1e-12) -> bool:
        return np.allclose(self.p, other.p, rtol=0.0, atol=atol)


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    """Co-occurrence counts n[l'][l] = n_u(l', l) (reported l', true l)."""
    n: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.float64)
        if n.shape != (2, 2):
            raise ValidationError(f"frequency table must be 2x2, got {n.shape}")
        if (n < 0).any():
            raise ValidationError("frequency entries must be nonnegative")
        object.__setattr__(self, 'n', _frozen(n, np.float64))

    @classmethod
    def zeros(cls) -> 'FrequencyTable':
        return cls(np.zeros((2, 2)))

    def __add__(self, other: 'FrequencyTable') -> 'FrequencyTable':
        return FrequencyTable(self.n + other.n)


@dataclass(frozen=True, eq=False)
class PriorParams:
    """Prior potentials: unary psi_0(l) and one 2x2 table psi_c(l, l') per edge class."""
    unary: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        unary = np.asarray(self.unary, dtype=np.float64)
        pairwise = np.asarray(self.pairwise, dtype=np.float64)
        if unary.shape != (2,):
            raise ValidationError(f"unary potentials must have shape (2,), got {unary.shape}")
        if pairwise.ndim != 3 or pairwise.shape[1:] != (2, 2):
            raise ValidationError(f"pairwise potentials must have shape (C, 2, 2), got {pairwise.shape}")
        if not (np.isfinite(unary).all() and np.isfinite(pairwise).all()):
            raise ValidationError("prior potentials must be finite")
        object.__setattr__(self, 'unary', _frozen(unary, np.float64))
        object.__setattr__(self, 'pairwise', _frozen(pairwise, np.float64))

    @property
    def n_classes(self) -> int:
        return self.pairwise.shape[0]

    def label_swapped(self) -> 'PriorParams':
        return PriorParams(self.unary[::-1], self.pairwise[:, ::-1, ::-1])


@dataclass(frozen=True, eq=False)
class AppearanceParams:
    """Gaussian mixture with label-specific weights and shared means / sigma."""
    weights: np.ndarray
    means: np.ndarray
    sigma: float

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64).ravel()
        if weights.ndim != 2 or weights.shape != (2, means.size) or means.size == 0:
            raise ValidationError(
                f"weights must have shape (2, J) with J = {means.size}, got {weights.shape}"
            )
        if (weights < 0).any() or np.abs(weights.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValidationError("mixture weights must be nonnegative and sum to 1 per label")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, 'weights', _frozen(weights, np.float64))
        object.__setattr__(self, 'means', _frozen(means, np.float64))
        object.__setattr__(self, 'sigma', float(self.sigma))

    @property
    def n_components(self) -> int:
        return self.means.size

    @classmethod
    def flat(cls, n_components: int = 1, mean: float = 0.0, sigma: float = 1.0) -> 'AppearanceParams':
        """Appearance model identical for both labels."""
        weights = np.full((2, n_components), 1.0 / n_components)
        return cls(weights, np.full(n_components, mean), sigma)


@dataclass(frozen=True, eq=False)
class ShadingField:
    """Smooth additive intensity offset s with its Gaussian-MRF precision."""
    values: np.ndarray
    smoothness_weight: float = 10.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"shading must be a 2-D array, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValidationError("shading values must be finite")
        if not self.smoothness_weight > 0:
            raise ValidationError(f"smoothness weight must be positive, got {self.smoothness_weight}")
        object.__setattr__(self, 'values', _frozen(values, np.float64))
        object.__setattr__(self, 'smoothness_weight', float(self.smoothness_weight))

    @classmethod
    def zeros(cls, dims: Dims, smoothness_weight: float = 10.0) -> 'ShadingField':
        width, height = check_dims(dims)
        return cls(np.zeros((height, width)), smoothness_weight)


@dataclass(frozen=True)
class MrfModel:
    """All constituents of the joint model: prior, appearance, shading and user models."""
    prior: PriorParams
    appearance: AppearanceParams
    shading: ShadingField
    classes: EdgeClassSet
    confusions: Dict[str, ConfusionMatrix] = field(default_factory=dict)

    def __post_init__(self):
        if self.prior.n_classes != len(self.classes):
            raise ValidationError(
                f"prior has {self.prior.n_classes} pairwise tables but "
                f"{len(self.classes)} edge classes are defined"
            )
        object.__setattr__(self, 'confusions', dict(self.confusions))

    @property
    def dims(self) -> Dims:
        return (self.shading.values.shape[1], self.shading.values.shape[0])

    def with_confusions(self, confusions: Dict[str, ConfusionMatrix]) -> 'MrfModel':
        return replace(self, confusions=confusions)


@dataclass(frozen=True)
class ChainState:
    """Current Gibbs sample with the generator state that produced it."""
    labeling: LabelGrid
    rng_state: dict
    sweep_count: int = 0

    def generator(self) -> np.random.Generator:
        """Rebuild a generator positioned exactly at the stored state."""
        bit_generator = np.random.PCG64()
        bit_generator.state = self.rng_state
        return np.random.Generator(bit_generator)


@dataclass(frozen=True, eq=False)
class MarginalField:
    """Per-pixel posterior probability of label 1."""
    p1: np.ndarray
    n_samples: int = 0

    def __post_init__(self):
        p1 = np.asarray(self.p1, dtype=np.float64)
        if p1.ndim != 2 or p1.size == 0:
            raise ValidationError(f"marginals must be a non-empty 2-D array, got shape {p1.shape}")
        if not ((p1 >= 0.0) & (p1 <= 1.0)).all():
            raise ValidationError("marginal probabilities must lie in [0, 1]")
        object.__setattr__(self, 'p1', _frozen(p1, np.float64))

    @property
    def dims(self) -> Dims:
        return (self.p1.shape[1], self.p1.shape[0])


@dataclass(frozen=True)
class LearnConfig:
    """Settings of the persistent-chain EM learner."""
    em_iterations: int = 500
    step_size: float = 0.05
    initial_diagonal: float = 0.8
    refresh_appearance: bool = False
    refresh_shading: bool = False
    learn_prior: bool = False
    refresh_every: int = 10
    shading_sweeps: int = 1
    pcd_step: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValidationError(f"em_iterations must be >= 1, got {self.em_iterations}")
        if not 0.0 < self.step_size <= 1.0:
            raise ValidationError(f"step_size must lie in (0, 1], got {self.step_size}")
        if self.refresh_every < 1:
            raise ValidationError(f"refresh_every must be >= 1, got {self.refresh_every}")


@dataclass(frozen=True)
class IterationRecord:
    """Diagnostics of one EM iteration (iteration 0 is the initialisation)."""
    iteration: int
    confusions: Dict[str, ConfusionMatrix]
    pseudo_loglik: Dict[str, float]


@dataclass(frozen=True)
class TrainedModel:
    model: MrfModel
    chain: ChainState
    history: List[IterationRecord]


@dataclass(frozen=True)
class StapleConfig:
    """STAPLE baseline settings; ``prior_p1=None`` means the empirical foreground fraction."""
    prior_p1: Optional[float] = None
    max_iterations: int = 200
    convergence_tol: float = 1e-6
    initial_diagonal: float = 0.8

    def __post_init__(self):
        if self.prior_p1 is not None and not 0.0 < self.prior_p1 < 1.0:
            raise ValidationError(f"prior_p1 must lie in (0, 1), got {self.prior_p1}")
        if not self.convergence_tol > 0:
            raise ValidationError(f"convergence_tol must be positive, got {self.convergence_tol}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True, eq=False)
class FusionResult:
    """Fused segmentation with the estimates that produced it."""
    labeling: LabelGrid
    marginals: MarginalField
    confusions: Dict[str, ConfusionMatrix]
    method: str
    coverage: np.ndarray
    history: List[IterationRecord] = field(default_factory=list)
    model: Optional[MrfModel] = None


@dataclass(frozen=True)
class ModelConfig:
    """How the initial image model is built before learning."""
    potts_strength: float = 0.25
    unary_bias: float = 0.0
    offsets: Tuple[Tuple[int, int], ...] = ((1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2))
    n_components: int = 2
    appearance_iterations: int = 20
    smoothness_weight: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, 'offsets', tuple(tuple(int(v) for v in o) for o in self.offsets))
        EdgeClassSet(self.offsets)
        if self.n_components < 1:
            raise ValidationError(f"n_components must be >= 1, got {self.n_components}")
        if not self.smoothness_weight > 0:
            raise ValidationError(f"smoothness_weight must be positive, got {self.smoothness_weight}")

    @property
    def classes(self) -> EdgeClassSet:
        return EdgeClassSet(self.offsets)


@dataclass(frozen=True)
class InferenceConfig:
    """Final marginal estimation budget."""
    burn_in: int = 50
    n_samples: int = 200
    checkerboard: bool = False

    def __post_init__(self):
        if self.burn_in < 0:
            raise ValidationError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass(frozen=True)
class AnnotationRecord:
    """Polygons one worker drew in one task, as stored in annotation files."""
    worker_id: str
    tile_id: Optional[str]
    polygons: Tuple[Polygon, ...]
