"""
Evaluate a segmentation against ground truth.
"""

from pathlib import Path

from src.crowd_fusion.extractor import CrowdDataExtractor
from src.crowd_fusion.metrics import evaluate
from src.crowd_fusion.persister import ResultPersister

from .common import banner, load_config


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser('eval', help='score a segmentation against ground truth')
    parser.add_argument('--pred', required=True, help='predicted labeling (PGM)')
    parser.add_argument('--gt', required=True, help='ground-truth labeling (PGM)')
    parser.add_argument('--coverage', help='covered-pixel mask (PGM) for the covered-only block')
    parser.add_argument('--report', required=True, help='metrics report (JSON)')
    parser.add_argument('--config', help='experiment configuration (YAML) for matching settings')
    parser.set_defaults(handler=run)


def run(args) -> int:
    cfg = load_config(args.config)
    extractor = CrowdDataExtractor()
    pred = extractor.load_labels(args.pred)
    gt = extractor.load_labels(args.gt)

    reports = {'full': evaluate(pred, gt, None, cfg.metrics.radius_factor, cfg.metrics.max_centroid_dist)}
    reports['covered'] = None
    if args.coverage:
        mask = extractor.load_mask(args.coverage)
        reports['covered'] = evaluate(pred, gt, mask, cfg.metrics.radius_factor,
                                      cfg.metrics.max_centroid_dist)

    report_path = Path(args.report)
    ResultPersister(report_path.parent).save_metrics(reports, report_path.name)

    banner("SEGMENTATION METRICS")
    for mode, report in reports.items():
        if report is None:
            continue
        print(f"\n{mode}:")
        print(f"  pixel accuracy  {report.pixel_accuracy:.4f}")
        print(f"  F1 (membrane)   {report.f1:.4f}")
        print(f"  VoI             {report.voi:.4f}")
        print(f"  over-segmented  {report.over_segmented} ({report.over_segmented_pct:.1f}%)")
        print(f"  under-segmented {report.under_segmented} ({report.under_segmented_pct:.1f}%)")
    print("\n" + "=" * 80)
    return 0
