"""
Fuse crowd annotations of one image into a segmentation.
"""

from pathlib import Path
from typing import Dict, Optional

from src.crowd_fusion.extractor import CrowdDataExtractor
from src.crowd_fusion.inference import METHODS, fuse
from src.crowd_fusion.metrics import best_and_worst_workers, worker_scores
from src.crowd_fusion.models import FusionResult
from src.crowd_fusion.persister import ResultPersister

from .common import banner, load_config


def write_fusion(result: FusionResult, persister: ResultPersister, seed, config_hash: str,
                 scores: Optional[Dict[str, float]] = None) -> None:
    """Labeling, marginals, confusions, worker scores, history, model and metadata of one run."""
    persister.save_labels(result.labeling, 'labeling.pgm')
    persister.save_marginals(result.marginals, 'marginals.bin')
    persister.save_confusions(result.confusions, 'confusions.csv')
    persister.save_mask(result.coverage, 'coverage.pgm')
    if scores:
        persister.save_scores(scores, 'scores.csv')
    if result.history:
        persister.save_history(result.history, 'history.csv')
    if result.model is not None:
        persister.save_model(result.model, 'model.json')
    persister.save_metadata('metadata.json', method=result.method, seed=seed, config_hash=config_hash)


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser('fuse', help='fuse annotations into one segmentation')
    parser.add_argument('--image', required=True, help='gray-value image (PGM)')
    parser.add_argument('--annotations', required=True, help='annotation records (JSON)')
    parser.add_argument('--method', choices=METHODS, default='istaple')
    parser.add_argument('--seed', type=int, default=None, help='overrides the learner seed')
    parser.add_argument('--config', help='experiment configuration (YAML) for model settings')
    parser.add_argument('--out', required=True, help='output directory')
    parser.set_defaults(handler=run)


def run(args) -> int:
    cfg = load_config(args.config)
    extractor = CrowdDataExtractor()

    banner(f"FUSING ANNOTATIONS WITH {args.method.upper()}")
    print(f"\n[1/3] Loading {args.image} and {args.annotations}...")
    image = extractor.load_image(args.image)
    annotations = extractor.extract_annotations(args.annotations, image.dims, cfg.protocol.membrane_width)
    print(f"     {len(annotations)} annotations on a {image.width}x{image.height} image")

    print(f"\n[2/3] Running {args.method}...")
    seed = args.seed if args.seed is not None else cfg.learner.seed
    result = fuse(image, annotations, args.method, cfg.fusion_config(), seed=seed)
    print(f"     {100.0 * result.coverage.mean():.1f}% of pixels covered")

    print(f"\n[3/3] Writing results to {args.out}...")
    scores = worker_scores(annotations, result.labeling)
    write_fusion(result, ResultPersister(Path(args.out)), seed, cfg.config_hash(), scores)

    if scores:
        best, worst = best_and_worst_workers(scores)
        print(f"     best worker {best} ({scores[best]:.3f}), worst worker {worst} ({scores[worst]:.3f})")
    print("\n" + "=" * 80)
    return 0
