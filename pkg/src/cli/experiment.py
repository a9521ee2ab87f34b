"""
Annotation-fraction sweep comparing fusion methods on a simulated crowd.

For every (fraction, repetition) a seeded random subset of the simulated
annotations is fused by each configured method, then scored on the full
image and on the covered pixels only.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.crowd_fusion.config import ExperimentConfig, MetricsConfig
from src.crowd_fusion.exceptions import CrowdFusionError, ValidationError
from src.crowd_fusion.grid import coverage_mask
from src.crowd_fusion.inference import FusionConfig, fuse
from src.crowd_fusion.metrics import evaluate, ranking_quality, worker_scores
from src.crowd_fusion.models import Annotation, ImageGrid, LabelGrid
from src.crowd_fusion.persister import ResultPersister
from src.simulation.protocol import true_worker_scores

from .common import banner, load_config
from .fuse import write_fusion
from .seeds import derive_seed
from .simulate import simulate, write_simulation

logger = logging.getLogger(__name__)

RUN_COLUMNS = ['fraction', 'repetition', 'seed', 'method', 'metric', 'value']
REPORT_FIELDS = ['pixel_accuracy', 'f1', 'voi', 'over_segmented_pct', 'under_segmented_pct']


@dataclass(frozen=True)
class RunSpec:
    """One fusion run of the sweep."""
    fraction: float
    repetition: int
    method: str
    seed: int
    indices: Tuple[int, ...]

    @property
    def name(self) -> str:
        return f"f{self.fraction:.3f}_r{self.repetition:02d}_{self.method}"


@dataclass
class RunOutcome:
    spec: RunSpec
    rows: List[Tuple] = field(default_factory=list)
    ranking: Optional[float] = None
    error: Optional[str] = None


def subset_indices(n_annotations: int, fraction: float, seed: int) -> Tuple[int, ...]:
    """Uniform random subset of ``max(1, round(fraction * n))`` annotation indices."""
    size = max(1, int(round(fraction * n_annotations)))
    rng = np.random.default_rng(seed)
    return tuple(sorted(rng.choice(n_annotations, size=size, replace=False).tolist()))


def plan_runs(cfg: ExperimentConfig, n_annotations: int) -> List[RunSpec]:
    runs = []
    for fraction in cfg.fractions:
        for repetition in range(cfg.repetitions):
            indices = subset_indices(n_annotations, fraction,
                                     derive_seed(cfg.seed, 'subset', fraction, repetition))
            for method in cfg.methods:
                runs.append(RunSpec(fraction, repetition, method,
                                    derive_seed(cfg.seed, fraction, repetition, method), indices))
    return runs


def execute_run(spec: RunSpec, image: ImageGrid, gt: LabelGrid, annotations: Sequence[Annotation],
                true_scores: Dict[str, float], fusion_cfg: FusionConfig, metrics_cfg: MetricsConfig,
                out_dir: Path, config_hash: str) -> RunOutcome:
    """Fuse, evaluate and persist one run; errors are captured in the outcome."""
    outcome = RunOutcome(spec)
    try:
        subset = [annotations[i] for i in spec.indices]
        result = fuse(image, subset, spec.method, fusion_cfg, seed=spec.seed)
        estimated = worker_scores(subset, result.labeling)
        persister = ResultPersister(out_dir / 'runs' / spec.name)
        write_fusion(result, persister, spec.seed, config_hash, estimated)

        coverage = coverage_mask(subset)
        reports = {
            'full': evaluate(result.labeling, gt, None, metrics_cfg.radius_factor,
                             metrics_cfg.max_centroid_dist),
            'covered': evaluate(result.labeling, gt, coverage, metrics_cfg.radius_factor,
                                metrics_cfg.max_centroid_dist),
        }
        persister.save_metrics(reports, 'metrics.json')

        for mode, report in reports.items():
            suffix = '' if mode == 'full' else '_c'
            for name in REPORT_FIELDS:
                outcome.rows.append((spec.fraction, spec.repetition, spec.seed, spec.method,
                                     name + suffix, float(getattr(report, name))))

        outcome.ranking = ranking_quality(estimated, {w: true_scores[w] for w in estimated})
        outcome.rows.append((spec.fraction, spec.repetition, spec.seed, spec.method,
                             'ranking_quality', outcome.ranking))
    except Exception as e:
        outcome.error = f"{type(e).__name__}: {e}"
        logger.warning("run %s failed: %s", spec.name, outcome.error)
    return outcome


def aggregate(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean, standard deviation and count per (fraction, method, metric)."""
    if runs.empty:
        return pd.DataFrame(columns=['fraction', 'method', 'metric', 'mean', 'std', 'count'])
    grouped = runs.groupby(['fraction', 'method', 'metric'], sort=True)['value']
    return grouped.agg(['mean', 'std', 'count']).reset_index()


def run_experiment(cfg: ExperimentConfig, out_dir: Path, jobs: Optional[int] = None) -> Path:
    """
    Full sweep: simulate, subsample, fuse, evaluate and aggregate.

    Args:
        cfg: Experiment configuration
        out_dir: Output directory
        jobs: Parallel runs; defaults to ``cfg.jobs``

    Returns:
        The output directory
    """
    out_dir = Path(out_dir)
    jobs = cfg.jobs if jobs is None else jobs
    if jobs < 1:
        raise ValidationError(f"jobs must be >= 1, got {jobs}")
    config_hash = cfg.config_hash()

    phantom, protocol = simulate(cfg)
    write_simulation(phantom, protocol, out_dir / 'simulation')
    annotations = protocol.annotations
    if not annotations:
        raise CrowdFusionError("the simulated crowd produced no annotations")
    true_scores = true_worker_scores(annotations, phantom.labels)

    persister = ResultPersister(out_dir)
    persister.save_json(cfg.to_dict(), 'config.json')
    runs = plan_runs(cfg, len(annotations))
    logger.info("%d runs over %d annotations with %d jobs", len(runs), len(annotations), jobs)

    args = (phantom.image, phantom.labels, annotations, true_scores, cfg.fusion_config(),
            cfg.metrics, out_dir, config_hash)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(execute_run, spec, *args) for spec in runs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [execute_run(spec, *args) for spec in runs]

    rows = [row for outcome in outcomes for row in outcome.rows]
    frame = pd.DataFrame(rows, columns=RUN_COLUMNS)
    persister.save_frame(frame, 'runs.csv')
    persister.save_frame(aggregate(frame), 'aggregate.csv')

    subsets = {}
    for spec in runs:
        subsets[(spec.fraction, spec.repetition)] = ' '.join(str(i) for i in spec.indices)
    persister.save_table([(f, r, idx) for (f, r), idx in subsets.items()],
                         ['fraction', 'repetition', 'indices'], 'subsets.csv')
    persister.save_table([(o.spec.fraction, o.spec.repetition, o.spec.method, o.ranking)
                          for o in outcomes if o.error is None],
                         ['fraction', 'repetition', 'method', 'ranking_quality'], 'ranking.csv')
    persister.save_table([(o.spec.fraction, o.spec.repetition, o.spec.method, o.error)
                          for o in outcomes if o.error is not None],
                         ['fraction', 'repetition', 'method', 'error'], 'errors.csv')
    persister.save_metadata('metadata.json', method=','.join(cfg.methods), seed=cfg.seed,
                            config_hash=config_hash, n_annotations=len(annotations),
                            n_runs=len(runs), n_failed=sum(o.error is not None for o in outcomes))
    return out_dir


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser('experiment', help='annotation-fraction sweep on a simulated crowd')
    parser.add_argument('--config', help='experiment configuration (YAML)')
    parser.add_argument('--out', required=True, help='output directory')
    parser.add_argument('--jobs', type=int, default=None, help='parallel runs (overrides the config)')
    parser.set_defaults(handler=run)


def run(args) -> int:
    cfg = load_config(args.config)
    banner("ANNOTATION FRACTION SWEEP")
    print(f"\nFractions: {', '.join(f'{f:g}' for f in cfg.fractions)}")
    print(f"Methods: {', '.join(cfg.methods)}; repetitions: {cfg.repetitions}")

    out_dir = run_experiment(cfg, Path(args.out), args.jobs)

    summary = pd.read_csv(out_dir / 'aggregate.csv')
    accuracy = summary[summary['metric'] == 'pixel_accuracy']
    print("\nMean pixel accuracy:")
    for row in accuracy.itertuples(index=False):
        print(f"  fraction {row.fraction:g}  {row.method:<9} {row.mean:.4f}")
    print(f"\nResults written to {out_dir}")
    print("\n" + "=" * 80)
    return 0
