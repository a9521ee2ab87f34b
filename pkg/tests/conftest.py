import numpy as np
import pytest

from src.crowd_fusion.models import (
    Annotation,
    AppearanceParams,
    EdgeClassSet,
    ImageGrid,
    LabelGrid,
    MrfModel,
    ShadingField,
)
from src.crowd_fusion.mrf import potts_prior
from src.simulation.phantom import PhantomConfig, generate_phantom
from src.simulation.protocol import (
    ProtocolConfig,
    WorkerPoolConfig,
    make_tiles,
    make_worker_pool,
    run_protocol,
)


@pytest.fixture
def make_annotation():
    """Factory for annotations from plain nested lists."""
    def _make(worker_id, labels, observed=None, tile_id=None):
        labels = np.asarray(labels, dtype=np.uint8)
        if observed is None:
            observed = np.ones(labels.shape, dtype=bool)
        return Annotation(worker_id, LabelGrid(labels), np.asarray(observed, dtype=bool), tile_id)
    return _make


@pytest.fixture
def flat_model():
    """Factory for a model whose prior and appearance factors are symmetric in the label."""
    def _make(dims, strength=0.0, confusions=None, classes=None):
        classes = classes or EdgeClassSet.four_neighbour()
        return MrfModel(
            prior=potts_prior(strength, classes),
            appearance=AppearanceParams.flat(),
            shading=ShadingField.zeros(dims),
            classes=classes,
            confusions=confusions or {},
        )
    return _make


@pytest.fixture
def blocks_truth():
    """16x16 ground truth: four 6x6 interiors separated by a 2-pixel membrane grid."""
    labels = np.zeros((16, 16), dtype=np.uint8)
    for r0 in (1, 9):
        for c0 in (1, 9):
            labels[r0:r0 + 6, c0:c0 + 6] = 1
    return LabelGrid(labels)


@pytest.fixture
def blocks_image(blocks_truth):
    """High-contrast image of ``blocks_truth`` with mild noise."""
    rng = np.random.default_rng(7)
    values = np.where(blocks_truth.labels == 1, 0.3, 0.8) + rng.normal(0.0, 0.03, (16, 16))
    return ImageGrid(np.clip(values, 0.0, 1.0))


@pytest.fixture
def simulate_crowd():
    """Factory for a seeded phantom annotated through the tile protocol."""
    def _simulate(seed, n_workers=15, dims=(128, 128), n_cells=60):
        phantom = generate_phantom(PhantomConfig(dims=dims, n_cells=n_cells, seed=seed))
        cfg = ProtocolConfig(passes=2)
        tiles = make_tiles(phantom.dims, cfg.tile_size, cfg.overlap)
        workers = make_worker_pool(WorkerPoolConfig(n_workers=n_workers))
        protocol = run_protocol(tiles, phantom.cells, workers, cfg, np.random.default_rng(seed), phantom.dims)
        return phantom, protocol.annotations
    return _simulate
