"""
Write fusion results, models and experiment tables to disk.
"""

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image

from .learner import history_rows
from .models import (
    AnnotationRecord,
    ConfusionMatrix,
    ImageGrid,
    IterationRecord,
    LabelGrid,
    MarginalField,
    MrfModel,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'crowd-fusion-model'
MODEL_VERSION = 1

HISTORY_COLUMNS = ['iteration', 'worker_id', 'p00', 'p10', 'p01', 'p11', 'pseudo_loglik']
CONFUSION_COLUMNS = ['worker_id', 'p00', 'p10', 'p01', 'p11']


def _array_block(values) -> Dict:
    array = np.asarray(values, dtype=np.float64)
    # float repr is the shortest string that parses back to the same double
    return {'shape': list(array.shape), 'data': [float(v) for v in array.ravel()]}


def _json_safe(value):
    """Replace NaN and infinities by None, recursively."""
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def model_to_dict(model: MrfModel) -> Dict:
    """JSON-ready representation of every model parameter with shape metadata."""
    width, height = model.dims
    return {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'dims': [width, height],
        'classes': [list(offset) for offset in model.classes.offsets],
        'prior': {
            'unary': _array_block(model.prior.unary),
            'pairwise': _array_block(model.prior.pairwise),
        },
        'appearance': {
            'weights': _array_block(model.appearance.weights),
            'means': _array_block(model.appearance.means),
            'sigma': float(model.appearance.sigma),
        },
        'shading': {
            'values': _array_block(model.shading.values),
            'smoothness_weight': float(model.shading.smoothness_weight),
        },
        'confusions': {
            worker: _array_block(model.confusions[worker].p) for worker in sorted(model.confusions)
        },
    }


def annotation_records_to_list(records: Iterable[AnnotationRecord]) -> List[Dict]:
    return [
        {
            'worker_id': record.worker_id,
            'tile_id': record.tile_id,
            'polygons': [[list(v) for v in poly.vertices] for poly in record.polygons],
        }
        for record in records
    ]


class ResultPersister:
    """
    Writes every artifact of a run below one output directory.

    Each file is written to a temporary sibling first and moved into place,
    so concurrent runs never leave half-written files.
    """

    def __init__(self, out_dir: Path):
        """
        Initialize the persister.

        Args:
            out_dir: Directory receiving the files; created on demand
        """
        self.out_dir = Path(out_dir)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _atomic_write(self, name: str, payload: bytes) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(payload)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.debug("wrote %s (%d bytes)", target, len(payload))
        return target

    def _write_pgm(self, name: str, pixels: np.ndarray) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
        os.close(fd)
        try:
            Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(tmp, format='PPM')
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return target

    def save_labels(self, labels: LabelGrid, name: str) -> Path:
        """Label grid as binary PGM: 0 -> 0, 1 -> 255."""
        return self._write_pgm(name, labels.labels * 255)

    def save_mask(self, mask: np.ndarray, name: str) -> Path:
        return self._write_pgm(name, np.asarray(mask, dtype=bool).astype(np.uint8) * 255)

    def save_image(self, image: ImageGrid, name: str) -> Path:
        """Gray values in [0, 1] scaled to 0..255."""
        return self._write_pgm(name, np.rint(np.clip(image.values, 0.0, 1.0) * 255.0))

    def save_marginals(self, marginals: MarginalField, name: str) -> Path:
        """Little-endian uint32 width and height, then float32 p1 in row-major order."""
        width, height = marginals.dims
        header = np.array([width, height], dtype='<u4').tobytes()
        body = marginals.p1.astype('<f4').tobytes()
        return self._atomic_write(name, header + body)

    def save_table(self, rows: Sequence, columns: Sequence[str], name: str) -> Path:
        frame = pd.DataFrame(list(rows), columns=list(columns))
        return self.save_frame(frame, name)

    def save_frame(self, frame: pd.DataFrame, name: str) -> Path:
        return self._atomic_write(name, frame.to_csv(index=False, lineterminator='\n').encode('utf-8'))

    def save_history(self, history: Sequence[IterationRecord], name: str) -> Path:
        return self.save_table(history_rows(history), HISTORY_COLUMNS, name)

    def save_confusions(self, confusions: Mapping[str, ConfusionMatrix], name: str) -> Path:
        rows = [(worker,) + confusions[worker].as_row() for worker in sorted(confusions)]
        return self.save_table(rows, CONFUSION_COLUMNS, name)

    def save_scores(self, scores: Mapping[str, float], name: str) -> Path:
        rows = [(worker, scores[worker]) for worker in sorted(scores)]
        return self.save_table(rows, ['worker_id', 'score'], name)

    def save_json(self, payload, name: str) -> Path:
        """Strict JSON; non-finite floats are written as null."""
        text = json.dumps(_json_safe(payload), indent=2, sort_keys=True, allow_nan=False)
        return self._atomic_write(name, (text + '\n').encode('utf-8'))

    def save_model(self, model: MrfModel, name: str) -> Path:
        return self.save_json(model_to_dict(model), name)

    def save_annotations(self, records: Iterable[AnnotationRecord], name: str) -> Path:
        return self.save_json(annotation_records_to_list(records), name)

    def save_metrics(self, reports: Mapping[str, object], name: str) -> Path:
        """
        Metrics JSON with one block per mask mode.

        Args:
            reports: Mapping mode -> MetricsReport (``None`` blocks are written as null)
            name: File name
        """
        payload = {mode: (None if report is None else report.to_dict())
                   for mode, report in reports.items()}
        return self.save_json(payload, name)

    def save_metadata(self, name: str, method: Optional[str] = None, seed: Optional[int] = None,
                      config_hash: Optional[str] = None, **extra) -> Path:
        payload = {'method': method, 'seed': seed, 'config_hash': config_hash}
        payload.update(extra)
        return self.save_json(payload, name)
