"""
Single-site Gibbs sampling of labelings from the posterior p(y | x, z^1..z^m).

Label-independent terms (unary potentials, appearance, worker observations)
are folded into one log-odds field per model; a sweep then only adds the
pairwise contributions of the current neighbours.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NumericError, ValidationError
from .grid import check_annotation_dims
from .models import (
    Annotation,
    ChainState,
    Dims,
    ImageGrid,
    LabelGrid,
    MarginalField,
    MrfModel,
    check_dims,
)
from .mrf import unary_log_factors

logger = logging.getLogger(__name__)


def initial_chain(dims: Dims, seed: int) -> ChainState:
    """Chain started from an i.i.d. fair-coin labeling."""
    width, height = check_dims(dims)
    rng = np.random.Generator(np.random.PCG64(seed))
    labels = (rng.random((height, width)) < 0.5).astype(np.uint8)
    return ChainState(LabelGrid(labels), rng.bit_generator.state, 0)


def _probability_of_one(log_odds: float) -> float:
    if log_odds >= 0:
        return 1.0 / (1.0 + math.exp(-log_odds))
    e = math.exp(log_odds)
    return e / (1.0 + e)


class GibbsSampler:
    """
    Sampler bound to one set of model parameters and observations.

    Args:
        model: Model parameters, read-only while the sampler is used
        x: Image, or None to drop the appearance term
        annotations: Worker observations
        include_data: When False, sample from the prior alone
        checkerboard: Update the two pixel colours in parallel; only valid when
            every edge joins pixels of different colours
    """

    def __init__(self, model: MrfModel, x: Optional[ImageGrid] = None,
                 annotations: Sequence[Annotation] = (), include_data: bool = True,
                 checkerboard: bool = False):
        if checkerboard and any((dx + dy) % 2 == 0 for dx, dy in model.classes.offsets):
            raise ValidationError(
                "checkerboard sweeps need every edge class to join opposite colours"
            )
        self.checkerboard = checkerboard
        self.model = None
        self.bind(model, x, annotations, include_data)

    def bind(self, model: MrfModel, x: Optional[ImageGrid] = None,
             annotations: Sequence[Annotation] = (), include_data: bool = True) -> None:
        """
        Point the sampler at new parameters.

        Neighbour tables are rebuilt only when the prior or the edge classes change.
        """
        previous = self.model
        self.model = model
        self.dims = model.dims
        if x is not None and x.dims != self.dims:
            raise ValidationError(f"image dims {x.dims} differ from model dims {self.dims}")
        check_annotation_dims(annotations, self.dims)

        factors = unary_log_factors(x, model, annotations, include_data)
        with np.errstate(invalid='ignore'):
            log_odds = factors[..., 1] - factors[..., 0]
        if np.isnan(log_odds).any():
            bad = int(np.flatnonzero(np.isnan(log_odds).ravel())[0])
            raise NumericError(f"both conditional masses vanish at site {bad}")
        self._base = log_odds.ravel()

        if (previous is None or previous.prior is not model.prior
                or previous.classes != model.classes or previous.dims != model.dims):
            self._directions = self._build_directions()
            if not self.checkerboard:
                self._site_terms = self._build_site_terms()

    def _build_directions(self) -> List[Tuple[np.ndarray, float, float]]:
        """Neighbour index (-1 if outside) and log-odds delta for each neighbour label."""
        width, height = self.dims
        rows, cols = np.indices((height, width))
        rows, cols = rows.ravel(), cols.ravel()
        directions = []
        for table, (dx, dy) in zip(self.model.prior.pairwise, self.model.classes.offsets):
            for sign in (1, -1):
                r, c = rows + sign * dy, cols + sign * dx
                valid = (r >= 0) & (r < height) & (c >= 0) & (c < width)
                neighbour = np.where(valid, r * width + c, -1)
                if sign == 1:
                    # edge (i, j): psi_c(l, y_j)
                    delta0 = table[0, 0] - table[1, 0]
                    delta1 = table[0, 1] - table[1, 1]
                else:
                    # edge (j, i): psi_c(y_j, l)
                    delta0 = table[0, 0] - table[0, 1]
                    delta1 = table[1, 0] - table[1, 1]
                directions.append((neighbour, float(delta0), float(delta1)))
        return directions

    def _build_site_terms(self) -> List[Tuple[Tuple[int, float, float], ...]]:
        n = self._base.size
        terms = [[] for _ in range(n)]
        for neighbour, delta0, delta1 in self._directions:
            for i in np.flatnonzero(neighbour >= 0).tolist():
                terms[i].append((int(neighbour[i]), delta0, delta1))
        return [tuple(t) for t in terms]

    def _raster_sweep(self, labels: List[int], uniforms: List[float]) -> None:
        base = self._base.tolist()
        site_terms = self._site_terms
        for i in range(len(labels)):
            log_odds = base[i]
            for j, delta0, delta1 in site_terms[i]:
                log_odds += delta1 if labels[j] else delta0
            labels[i] = 1 if uniforms[i] < _probability_of_one(log_odds) else 0

    def _checkerboard_sweep(self, labels: np.ndarray, uniforms: np.ndarray) -> None:
        width, height = self.dims
        rows, cols = np.indices((height, width))
        parity = ((rows + cols) % 2).ravel()
        for colour in (0, 1):
            sites = parity == colour
            log_odds = self._base.copy()
            for neighbour, delta0, delta1 in self._directions:
                valid = neighbour >= 0
                contribution = np.where(labels[np.where(valid, neighbour, 0)] == 1, delta1, delta0)
                log_odds += np.where(valid, contribution, 0.0)
            with np.errstate(over='ignore'):
                p1 = 1.0 / (1.0 + np.exp(-log_odds))
            labels[sites] = (uniforms[sites] < p1[sites]).astype(np.uint8)

    def sweep(self, state: ChainState, sweeps: int = 1) -> ChainState:
        """
        Run ``sweeps`` full sweeps in raster order (or colour order).

        Args:
            state: Chain to continue
            sweeps: Number of sweeps; 0 returns ``state`` unchanged

        Returns:
            New ChainState
        """
        if sweeps < 0:
            raise ValidationError(f"sweeps must be >= 0, got {sweeps}")
        if sweeps == 0:
            return state
        if state.labeling.dims != self.dims:
            raise ValidationError(f"chain dims {state.labeling.dims} differ from model dims {self.dims}")

        rng = state.generator()
        width, height = self.dims
        n = width * height
        if self.checkerboard:
            labels = state.labeling.flat().astype(np.uint8).copy()
            for _ in range(sweeps):
                self._checkerboard_sweep(labels, rng.random(n))
            flat = labels
        else:
            labels = state.labeling.flat().astype(int).tolist()
            for _ in range(sweeps):
                self._raster_sweep(labels, rng.random(n).tolist())
            flat = np.asarray(labels, dtype=np.uint8)

        return ChainState(
            LabelGrid(flat.reshape(height, width)),
            rng.bit_generator.state,
            state.sweep_count + sweeps,
        )

    def draw(self, state: ChainState, burn_in: int, n_samples: int) -> Tuple[List[LabelGrid], ChainState]:
        """Discard ``burn_in`` sweeps, then keep the labeling after each of ``n_samples`` sweeps."""
        if burn_in < 0:
            raise ValidationError(f"burn_in must be >= 0, got {burn_in}")
        if n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
        state = self.sweep(state, burn_in)
        samples = []
        for _ in range(n_samples):
            state = self.sweep(state, 1)
            samples.append(state.labeling)
        return samples, state

    def estimate_marginals(self, state: ChainState, burn_in: int,
                           n_samples: int) -> Tuple[MarginalField, ChainState]:
        """Running-count version of ``draw`` followed by ``accumulate_marginals``."""
        if burn_in < 0:
            raise ValidationError(f"burn_in must be >= 0, got {burn_in}")
        if n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
        state = self.sweep(state, burn_in)
        counts = np.zeros(state.labeling.labels.shape, dtype=np.int64)
        for _ in range(n_samples):
            state = self.sweep(state, 1)
            counts += state.labeling.labels
        return MarginalField(counts / n_samples, n_samples), state


def gibbs_sweep(state: ChainState, model: MrfModel, x: Optional[ImageGrid],
                annotations: Sequence[Annotation], sweeps: int = 1) -> ChainState:
    """
    Resample every site once (per sweep) from its full conditional, raster order.

    Args:
        state: Current chain
        model: Model parameters
        x: Image, or None for an image-unaware posterior
        annotations: Worker observations
        sweeps: Number of sweeps

    Returns:
        Chain after the sweeps
    """
    if sweeps == 0:
        return state
    return GibbsSampler(model, x, annotations).sweep(state, sweeps)


def sample_posterior(model: MrfModel, x: Optional[ImageGrid], annotations: Sequence[Annotation],
                     init: LabelGrid, burn_in: int, n_samples: int, seed: int) -> List[LabelGrid]:
    """
    Draw labelings from the posterior.

    Args:
        model: Model parameters
        x: Image, or None
        annotations: Worker observations
        init: Starting labeling
        burn_in: Discarded sweeps
        n_samples: Retained sweeps
        seed: Generator seed

    Returns:
        The labeling after each retained sweep
    """
    rng_state = np.random.Generator(np.random.PCG64(seed)).bit_generator.state
    sampler = GibbsSampler(model, x, annotations)
    samples, _ = sampler.draw(ChainState(init, rng_state, 0), burn_in, n_samples)
    return samples


def accumulate_marginals(samples: Sequence[LabelGrid]) -> MarginalField:
    """
    Fraction of samples carrying label 1 at each pixel.

    Raises:
        ValidationError: empty list or samples of different dims
    """
    if not samples:
        raise ValidationError("cannot accumulate marginals from zero samples")
    shape = samples[0].labels.shape
    counts = np.zeros(shape, dtype=np.int64)
    for sample in samples:
        if sample.labels.shape != shape:
            raise ValidationError("all samples must share the same dims")
        counts += sample.labels
    return MarginalField(counts / len(samples), len(samples))
