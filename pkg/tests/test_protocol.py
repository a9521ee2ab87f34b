import numpy as np
import pytest

from src.crowd_fusion.exceptions import ValidationError
from src.crowd_fusion.grid import build_annotation, dilate, rasterize_polygon
from src.crowd_fusion.models import LabelGrid, Polygon
from src.simulation.phantom import PhantomConfig, generate_phantom
from src.simulation.protocol import (
    ProtocolConfig,
    Tile,
    WorkerPoolConfig,
    WorkerProfile,
    draw_outline,
    get_not_covered_tiles,
    make_tiles,
    make_worker_pool,
    run_protocol,
    simulate_pixel_annotations,
    simulate_worker,
    true_worker_scores,
)

PERFECT = WorkerProfile("perfect", jitter=0.0, miss_rate=0.0, vertex_range=(96, 96))


def circle(cx, cy, radius, n=64):
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return Polygon(tuple(zip(cx + radius * np.cos(theta), cy + radius * np.sin(theta))))


def circle_grid(count, spacing=10.0, radius=3.0):
    """``count`` x ``count`` circles on a regular lattice."""
    return [circle(spacing * (i + 0.5), spacing * (j + 0.5), radius)
            for j in range(count) for i in range(count)]


class TestTiles:
    def test_regular_tiling(self):
        tiles = make_tiles((128, 128), 64, 0.5)
        assert len(tiles) == 9
        assert tiles[0].tile_id == "r00c00"
        assert tiles[-1].tile_id == "r02c02"
        assert (tiles[-1].x0, tiles[-1].x1) == (64, 128)

    def test_last_tile_shifted_inside(self):
        tiles = make_tiles((100, 50), 64, 0.5)
        assert [t.x0 for t in tiles] == [0, 32, 36]
        assert all(t.y0 == 0 and t.y1 == 50 for t in tiles)
        assert max(t.x1 for t in tiles) == 100

    def test_containment_is_inclusive(self):
        tile = Tile("t", 0, 0, 10, 10)
        assert tile.contains(Polygon(((0, 0), (10, 0), (10, 10))))
        assert not tile.contains(Polygon(((0, 0), (10.5, 0), (10, 10))))


def test_worker_pool_is_ordered():
    pool = make_worker_pool(WorkerPoolConfig(n_workers=4, jitter_range=(0.5, 2.0)))
    assert [w.worker_id for w in pool] == ["w000", "w001", "w002", "w003"]
    assert [w.jitter for w in pool] == pytest.approx([0.5, 1.0, 1.5, 2.0])


@pytest.mark.parametrize("kwargs", [dict(jitter=-1.0), dict(miss_rate=1.5), dict(vertex_range=(2, 5))])
def test_invalid_worker_profile(kwargs):
    with pytest.raises(ValidationError):
        WorkerProfile("w", **kwargs)


class TestSimulateWorker:
    def test_caps_cells_per_task(self):
        cells = circle_grid(6)
        tile = Tile("t", 0, 0, 60, 60)
        drawn = simulate_worker(cells, tile, set(), PERFECT, np.random.default_rng(0))
        assert len(drawn) == 20
        assert set(drawn) <= set(range(36))

    def test_missing_every_cell(self):
        worker = WorkerProfile("w", miss_rate=1.0)
        assert simulate_worker(circle_grid(2), Tile("t", 0, 0, 20, 20), set(), worker,
                               np.random.default_rng(0)) == {}

    def test_only_new_visible_cells(self):
        cells = circle_grid(3)
        drawn = simulate_worker(cells, Tile("t", 0, 0, 20, 20), {0}, PERFECT, np.random.default_rng(0))
        assert sorted(drawn) == [1, 3, 4]

    def test_perfect_outline_matches_cell(self):
        cell = circle(12.0, 12.0, 6.0, n=256)
        drawn = draw_outline(cell, PERFECT, np.random.default_rng(1))
        truth = rasterize_polygon(cell, (24, 24))
        band = dilate(truth, 1) & dilate(~truth, 1)
        assert not ((rasterize_polygon(drawn, (24, 24)) ^ truth) & ~band).any()

    def test_error_grows_with_jitter(self):
        phantom = generate_phantom(PhantomConfig(dims=(64, 64), n_cells=12, seed=5))
        rng = np.random.default_rng(2)
        errors = []
        for jitter in (0.25, 1.0, 2.5):
            profile = WorkerProfile(f"j{jitter}", jitter=jitter)
            annotations = [
                build_annotation(profile.worker_id, [draw_outline(c, profile, rng) for c in phantom.cells],
                                 2, phantom.dims)
                for _ in range(4)
            ]
            errors.append(1.0 - true_worker_scores(annotations, phantom.labels)[profile.worker_id])
        assert errors[0] < errors[1] < errors[2]


class TestNotCoveredTiles:
    tiles = [Tile("t", 0, 0, 10, 10)]

    def test_nothing_drawn(self):
        assert get_not_covered_tiles(self.tiles, [], 1, 0, (10, 10)) == self.tiles

    def test_fully_covered(self):
        whole = Polygon(((0, 0), (10, 0), (10, 10), (0, 10)))
        assert get_not_covered_tiles(self.tiles, [whole], 1, 0, (10, 10)) == []

    def test_threshold_is_strict(self):
        # rows 0-4 drawn, row 5 reached by the dilation: 40 pixels remain
        top = Polygon(((0, 0), (10, 0), (10, 5), (0, 5)))
        assert get_not_covered_tiles(self.tiles, [top], 1, 40, (10, 10)) == []
        assert get_not_covered_tiles(self.tiles, [top], 1, 39, (10, 10)) == self.tiles


class TestRunProtocol:
    def test_empty_pool(self):
        with pytest.raises(ValidationError):
            run_protocol(make_tiles((20, 20), 20), circle_grid(2), [], ProtocolConfig(), np.random.default_rng(0),
                         (20, 20))

    def test_no_tiles(self):
        with pytest.raises(ValidationError):
            run_protocol([], circle_grid(2), [PERFECT], ProtocolConfig(), np.random.default_rng(0), (20, 20))

    def test_stalls_when_nothing_is_drawn(self):
        tiles = make_tiles((40, 40), 40)
        lazy = WorkerProfile("lazy", miss_rate=1.0)
        result = run_protocol(tiles, circle_grid(4), [lazy], ProtocolConfig(passes=1),
                              np.random.default_rng(0), (40, 40))
        assert result.annotations == []
        # the second round repeats the first one's uncovered state
        assert [row[1] for row in result.task_rows()] == [1, 2]
        assert all(row[4] == 0 for row in result.task_rows())

    def test_progress_on_a_pending_tile_continues_the_pass(self):
        # gaps between the circles keep the single tile uncovered, so only
        # the shrinking uncovered count tells the rounds apart
        tiles = make_tiles((40, 40), 40)
        cells = circle_grid(4)
        result = run_protocol(tiles, cells, [PERFECT], ProtocolConfig(passes=1, cells_per_task=4),
                              np.random.default_rng(0), (40, 40))
        rounds = [row[1] for row in result.task_rows()]
        assert max(rounds) >= 4
        assert sum(len(r.polygons) for r in result.records) == len(cells)

    def test_each_pass_starts_afresh(self):
        tiles = make_tiles((40, 40), 40)
        cells = circle_grid(4)
        one = run_protocol(tiles, cells, [PERFECT], ProtocolConfig(passes=1), np.random.default_rng(0), (40, 40))
        two = run_protocol(tiles, cells, [PERFECT], ProtocolConfig(passes=2), np.random.default_rng(0), (40, 40))
        assert len(two.annotations) == 2 * len(one.annotations)
        assert {row[0] for row in two.task_rows()} == {1, 2}
        drawn = sum(len(r.polygons) for r in two.records)
        assert drawn == 2 * len(cells)

    def test_perfect_worker_covers_every_tile(self):
        phantom = generate_phantom(PhantomConfig(dims=(48, 48), n_cells=5, membrane_width=1, seed=11))
        tiles = make_tiles(phantom.dims, 48)
        cfg = ProtocolConfig(passes=1, membrane_width=2)
        result = run_protocol(tiles, phantom.cells, [PERFECT], cfg, np.random.default_rng(3), phantom.dims)
        outlines = [p for record in result.records for p in record.polygons]
        assert get_not_covered_tiles(tiles, outlines, 2, cfg.effective_threshold, phantom.dims) == []
        assert all(a.tile_id == tiles[0].tile_id for a in result.annotations)

    def test_round_cap_bounds_every_pass(self):
        tiles = make_tiles((40, 40), 20, 0.0)
        cells = circle_grid(4)
        pool = make_worker_pool(WorkerPoolConfig(n_workers=3, miss_rate=0.5))
        result = run_protocol(tiles, cells, pool, ProtocolConfig(passes=2, cells_per_task=1),
                              np.random.default_rng(4), (40, 40))
        assert max(row[1] for row in result.task_rows()) <= len(tiles) * len(cells)
        assert {a.worker_id for a in result.annotations} <= {w.worker_id for w in pool}


class TestPixelAnnotations:
    truth = LabelGrid([[0, 1, 1], [1, 0, 0]])

    def test_ids_and_copies(self):
        annotations = simulate_pixel_annotations(self.truth, [1.0, 0.0], np.random.default_rng(0))
        assert [a.worker_id for a in annotations] == ["p000", "p001"]
        assert annotations[0].labels.equals(self.truth)
        assert annotations[1].labels.equals(self.truth.flipped())

    def test_shared_observation_mask(self):
        observed = np.array([[True, False, True], [False, False, True]])
        (annotation,) = simulate_pixel_annotations(self.truth, [(0.9, 0.8)], np.random.default_rng(0), observed)
        assert np.array_equal(annotation.observed, observed)

    def test_planted_rate(self):
        truth = LabelGrid(np.random.default_rng(1).integers(0, 2, (100, 100)))
        annotations = simulate_pixel_annotations(truth, [0.8], np.random.default_rng(2))
        assert true_worker_scores(annotations, truth)["p000"] == pytest.approx(0.8, abs=0.02)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            simulate_pixel_annotations(self.truth, [1.2], np.random.default_rng(0))
