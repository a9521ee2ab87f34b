"""
Generate a phantom and simulate the crowdsourcing protocol on it.
"""

from pathlib import Path

import numpy as np

from src.crowd_fusion.config import ExperimentConfig
from src.crowd_fusion.grid import coverage_mask
from src.crowd_fusion.models import AnnotationRecord
from src.crowd_fusion.persister import ResultPersister
from src.simulation.phantom import Phantom, generate_phantom
from src.simulation.protocol import (
    ProtocolResult,
    make_tiles,
    make_worker_pool,
    run_protocol,
    true_worker_scores,
)

from .common import banner, load_config
from .seeds import derive_seed

TASK_COLUMNS = ['pass', 'round', 'tile_id', 'worker_id', 'n_polygons']


def simulate(cfg: ExperimentConfig):
    """
    Phantom plus protocol run for one configuration.

    Returns:
        (Phantom, ProtocolResult)
    """
    phantom = generate_phantom(cfg.phantom)
    tiles = make_tiles(phantom.dims, cfg.protocol.tile_size, cfg.protocol.overlap)
    workers = make_worker_pool(cfg.workers)
    rng = np.random.default_rng(derive_seed(cfg.seed, 'protocol'))
    result = run_protocol(tiles, phantom.cells, workers, cfg.protocol, rng, phantom.dims)
    return phantom, result


def write_simulation(phantom: Phantom, result: ProtocolResult, out_dir: Path) -> ResultPersister:
    persister = ResultPersister(out_dir)
    persister.save_image(phantom.image, 'image.pgm')
    persister.save_labels(phantom.labels, 'ground_truth.pgm')
    persister.save_annotations([AnnotationRecord('ground_truth', None, tuple(phantom.cells))], 'cells.json')
    persister.save_annotations(result.records, 'annotations.json')
    persister.save_table(result.task_rows(), TASK_COLUMNS, 'tasks.csv')
    persister.save_scores(true_worker_scores(result.annotations, phantom.labels), 'true_scores.csv')
    if result.annotations:
        persister.save_mask(coverage_mask(result.annotations), 'coverage.pgm')
    return persister


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser('simulate', help='generate a phantom and simulated crowd annotations')
    parser.add_argument('--config', help='experiment configuration (YAML)')
    parser.add_argument('--out', required=True, help='output directory')
    parser.set_defaults(handler=run)


def run(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out)

    banner("SIMULATING CROWD ANNOTATIONS")
    print(f"\n[1/2] Generating phantom {cfg.phantom.dims[0]}x{cfg.phantom.dims[1]} "
          f"and running {cfg.protocol.passes} protocol passes...")
    phantom, result = simulate(cfg)
    print(f"     {len(phantom.cells)} cells, {len(result.tasks)} tasks, "
          f"{len(result.annotations)} annotations")

    print(f"\n[2/2] Writing results to {out_dir}...")
    write_simulation(phantom, result, out_dir)

    workers = {a.worker_id for a in result.annotations}
    print(f"     {len(workers)} workers contributed")
    print("\n" + "=" * 80)
    return 0
