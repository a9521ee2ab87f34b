import itertools

import numpy as np
import pytest

from src.crowd_fusion.exceptions import ValidationError
from src.crowd_fusion.gibbs import (
    GibbsSampler,
    accumulate_marginals,
    gibbs_sweep,
    initial_chain,
    sample_posterior,
)
from src.crowd_fusion.models import (
    AppearanceParams,
    ChainState,
    ConfusionMatrix,
    EdgeClassSet,
    ImageGrid,
    LabelGrid,
    MrfModel,
    PriorParams,
    ShadingField,
)
from src.crowd_fusion.mrf import annotation_log_factors, appearance_loglik, prior_energy


def exact_posterior(model, annotations, x=None):
    """Enumerate every labeling of a tiny grid; returns {flat labels: probability}."""
    width, height = model.dims
    data = annotation_log_factors(annotations, model.confusions, (height, width)).reshape(-1, 2)
    log_weights = {}
    for state in itertools.product((0, 1), repeat=width * height):
        y = LabelGrid.from_flat(width, height, state)
        log_weights[state] = -prior_energy(y, model.prior, model.classes) + sum(
            data[i, label] for i, label in enumerate(state)
        )
        if x is not None:
            log_weights[state] += appearance_loglik(x, y, model.appearance, model.shading)
    top = max(log_weights.values())
    weights = {k: np.exp(v - top) for k, v in log_weights.items()}
    total = sum(weights.values())
    return {k: w / total for k, w in weights.items()}


def test_initial_chain_is_seeded():
    a = initial_chain((5, 4), 11)
    b = initial_chain((5, 4), 11)
    assert a.labeling.dims == (5, 4)
    assert a.labeling.equals(b.labeling)
    assert a.sweep_count == 0


def test_zero_sweeps_is_identity(flat_model):
    state = initial_chain((3, 3), 0)
    assert gibbs_sweep(state, flat_model((3, 3)), None, [], sweeps=0) is state


def test_sweep_counts(flat_model):
    state = gibbs_sweep(initial_chain((3, 3), 0), flat_model((3, 3)), None, [], sweeps=4)
    assert state.sweep_count == 4


def test_fixed_seed_is_reproducible(flat_model, make_annotation):
    model = flat_model((4, 4), strength=0.5, confusions={"u": ConfusionMatrix.initial(0.7)})
    annotation = make_annotation("u", np.eye(4, dtype=np.uint8))
    init = LabelGrid.zeros((4, 4))
    first = sample_posterior(model, None, [annotation], init, 5, 10, seed=3)
    second = sample_posterior(model, None, [annotation], init, 5, 10, seed=3)
    assert all(a.equals(b) for a, b in zip(first, second))


def test_single_sample_is_one_sweep(flat_model):
    model = flat_model((3, 2), strength=0.3)
    init = LabelGrid.zeros((3, 2))
    (sample,) = sample_posterior(model, None, [], init, burn_in=0, n_samples=1, seed=9)
    state = ChainState(init, np.random.Generator(np.random.PCG64(9)).bit_generator.state, 0)
    assert sample.equals(gibbs_sweep(state, model, None, [], 1).labeling)


def test_near_deterministic_worker_is_followed(flat_model, make_annotation):
    rng = np.random.default_rng(12)
    truth = rng.integers(0, 2, (8, 8))
    model = flat_model((8, 8), confusions={"u": ConfusionMatrix.initial(0.999)})
    samples = sample_posterior(model, None, [make_annotation("u", truth)], LabelGrid.zeros((8, 8)),
                               burn_in=1, n_samples=200, seed=1)
    flips = np.mean([(s.labels != truth).mean() for s in samples])
    assert flips <= 0.002


@pytest.mark.slow
def test_flat_model_is_a_fair_coin(flat_model):
    sampler = GibbsSampler(flat_model((1, 1)))
    marginals, _ = sampler.estimate_marginals(initial_chain((1, 1), 5), 0, 100_000)
    assert marginals.p1[0, 0] == pytest.approx(0.5, abs=0.01)


@pytest.mark.slow
def test_two_site_marginals_match_enumeration():
    classes = EdgeClassSet(((1, 0),))
    prior = PriorParams([0.0, 0.4], [[[0.0, 0.9], [0.5, -0.2]]])
    model = MrfModel(prior, AppearanceParams.flat(), ShadingField.zeros((2, 1)), classes)
    exact = exact_posterior(model, [])
    samples = sample_posterior(model, None, [], LabelGrid.zeros((2, 1)), 100, 100_000, seed=4)
    empirical = accumulate_marginals(samples).p1.ravel()
    for site in (0, 1):
        expected = sum(p for state, p in exact.items() if state[site] == 1)
        assert empirical[site] == pytest.approx(expected, abs=0.02)


@pytest.mark.slow
def test_state_frequencies_match_exact_posterior(make_annotation):
    classes = EdgeClassSet(((1, 0), (0, 1), (1, 1), (1, -1)))
    prior = PriorParams([0.0, -0.2], np.repeat([[[0.0, 0.6], [0.6, 0.0]]], 4, axis=0))
    appearance = AppearanceParams([[0.8, 0.2], [0.3, 0.7]], [0.3, 0.8], 0.25)
    shading = ShadingField([[0.05, 0.0], [-0.05, 0.02]])
    confusions = {"u": ConfusionMatrix([[0.7, 0.3], [0.25, 0.75]]),
                  "v": ConfusionMatrix([[0.9, 0.1], [0.4, 0.6]])}
    model = MrfModel(prior, appearance, shading, classes, confusions)
    x = ImageGrid([[0.35, 0.75], [0.6, 0.3]])
    annotations = [
        make_annotation("u", [[1, 0], [1, 1]], [[True, True], [False, True]]),
        make_annotation("v", [[0, 0], [1, 0]], [[False, True], [True, True]]),
    ]
    exact = exact_posterior(model, annotations, x)

    samples = sample_posterior(model, x, annotations, LabelGrid.zeros((2, 2)), 100, 100_000, seed=8)
    counts = {}
    for sample in samples:
        key = tuple(int(v) for v in sample.flat())
        counts[key] = counts.get(key, 0) + 1
    tv = 0.5 * sum(abs(counts.get(state, 0) / len(samples) - p) for state, p in exact.items())
    assert tv <= 0.02


def test_checkerboard_requires_bipartite_classes(flat_model):
    with pytest.raises(ValidationError, match="checkerboard"):
        GibbsSampler(flat_model((4, 4), classes=EdgeClassSet.default()), checkerboard=True)


def test_checkerboard_agrees_with_raster_order(flat_model, make_annotation):
    truth = np.zeros((6, 6), dtype=np.uint8)
    truth[1:5, 1:5] = 1
    model = flat_model((6, 6), strength=0.8, confusions={"u": ConfusionMatrix.initial(0.85)})
    annotation = make_annotation("u", truth)
    raster, _ = GibbsSampler(model, None, [annotation]).estimate_marginals(initial_chain((6, 6), 1), 20, 3000)
    colours, _ = GibbsSampler(model, None, [annotation], checkerboard=True).estimate_marginals(
        initial_chain((6, 6), 1), 20, 3000
    )
    assert np.abs(raster.p1 - colours.p1).max() < 0.1


def test_sweep_rejects_other_dims(flat_model):
    with pytest.raises(ValidationError):
        GibbsSampler(flat_model((3, 3))).sweep(initial_chain((4, 4), 0))


class TestAccumulateMarginals:
    def test_identical_samples(self):
        y = LabelGrid([[1, 0], [0, 1]])
        marginals = accumulate_marginals([y, y, y])
        assert np.array_equal(marginals.p1, y.labels.astype(float))
        assert marginals.n_samples == 3

    def test_two_sample_average(self):
        marginals = accumulate_marginals([LabelGrid([[1, 0]]), LabelGrid([[0, 1]])])
        assert marginals.p1.tolist() == [[0.5, 0.5]]

    def test_counting(self):
        samples = [LabelGrid([[v, 0]]) for v in (1, 1, 1, 0)]
        assert accumulate_marginals(samples).p1[0, 0] == 0.75

    def test_empty_list(self):
        with pytest.raises(ValidationError):
            accumulate_marginals([])

    def test_mixed_dims(self):
        with pytest.raises(ValidationError):
            accumulate_marginals([LabelGrid.zeros((2, 2)), LabelGrid.zeros((3, 2))])
