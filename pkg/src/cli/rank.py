"""
Compare an estimated worker ranking with the true one.
"""

from src.crowd_fusion.extractor import CrowdDataExtractor
from src.crowd_fusion.metrics import best_and_worst_workers, ranking_quality

from .common import banner


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser('rank', help='ranking quality of estimated worker scores')
    parser.add_argument('--estimated', required=True, help='estimated scores (CSV: worker_id, score)')
    parser.add_argument('--truth', required=True, help='true scores (CSV: worker_id, score)')
    parser.set_defaults(handler=run)


def run(args) -> int:
    extractor = CrowdDataExtractor()
    estimated = extractor.load_scores(args.estimated)
    truth = extractor.load_scores(args.truth)
    quality = ranking_quality(estimated, truth)

    banner("WORKER RANKING")
    print(f"\nWorkers ranked: {len(truth)}")
    print(f"Ranking quality (mean rank difference): {quality:.4f}")
    est_best, est_worst = best_and_worst_workers(estimated)
    true_best, true_worst = best_and_worst_workers(truth)
    print(f"  best worker:  estimated {est_best}, true {true_best}")
    print(f"  worst worker: estimated {est_worst}, true {true_worst}")
    print("\n" + "=" * 80)
    return 0
