"""
Read annotations, images, marginals, models and score tables from disk.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from PIL import Image

from .exceptions import ValidationError
from .grid import build_annotation
from .models import (
    Annotation,
    AnnotationRecord,
    AppearanceParams,
    ConfusionMatrix,
    Dims,
    EdgeClassSet,
    ImageGrid,
    LabelGrid,
    MarginalField,
    MrfModel,
    Polygon,
    PriorParams,
    ShadingField,
)
from .persister import MODEL_FORMAT

logger = logging.getLogger(__name__)


def _array(block: Dict, what: str) -> np.ndarray:
    try:
        return np.array(block['data'], dtype=np.float64).reshape(block['shape'])
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"malformed array block for {what}: {e}") from e


def model_from_dict(payload: Dict) -> MrfModel:
    """Inverse of ``model_to_dict``."""
    if payload.get('format') != MODEL_FORMAT:
        raise ValidationError(f"not a model file (format {payload.get('format')!r})")
    try:
        appearance = payload['appearance']
        shading = payload['shading']
        model = MrfModel(
            prior=PriorParams(_array(payload['prior']['unary'], 'prior.unary'),
                              _array(payload['prior']['pairwise'], 'prior.pairwise')),
            appearance=AppearanceParams(_array(appearance['weights'], 'appearance.weights'),
                                        _array(appearance['means'], 'appearance.means'),
                                        appearance['sigma']),
            shading=ShadingField(_array(shading['values'], 'shading.values'),
                                 shading['smoothness_weight']),
            classes=EdgeClassSet(tuple(tuple(o) for o in payload['classes'])),
            confusions={worker: ConfusionMatrix(_array(block, f"confusions.{worker}"))
                        for worker, block in payload['confusions'].items()},
        )
    except KeyError as e:
        raise ValidationError(f"model file lacks key {e}") from e
    if list(model.dims) != list(payload.get('dims', model.dims)):
        raise ValidationError(f"model dims {payload['dims']} disagree with shading shape")
    return model


class CrowdDataExtractor:
    """Loads the inputs of the command line tools from a base directory."""

    def __init__(self, base_path: Path = Path('.')):
        """
        Initialize the extractor.

        Args:
            base_path: Directory relative paths are resolved against
        """
        self.base_path = Path(base_path)

    def _resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_path / path

    def _load_json(self, path):
        resolved = self._resolve(path)
        with open(resolved, 'r', encoding='utf-8') as f:
            try:
                return json.load(f)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{resolved}: invalid JSON at line {e.lineno}: {e.msg}") from e

    def load_pgm(self, path) -> np.ndarray:
        """8-bit gray pixels of a PGM file as a (height, width) uint8 array."""
        with Image.open(self._resolve(path)) as img:
            if img.mode != 'L':
                raise ValidationError(f"{path}: expected an 8-bit gray image, got mode {img.mode}")
            return np.array(img, dtype=np.uint8)

    def load_image(self, path) -> ImageGrid:
        return ImageGrid(self.load_pgm(path) / 255.0)

    def load_labels(self, path) -> LabelGrid:
        """Binary PGM mask; values of 128 and above read as label 1."""
        return LabelGrid((self.load_pgm(path) >= 128).astype(np.uint8))

    def load_mask(self, path) -> np.ndarray:
        return self.load_pgm(path) >= 128

    def load_marginals(self, path) -> MarginalField:
        raw = self._resolve(path).read_bytes()
        if len(raw) < 8:
            raise ValidationError(f"{path}: marginal file shorter than its header")
        width, height = (int(v) for v in np.frombuffer(raw[:8], dtype='<u4'))
        body = np.frombuffer(raw[8:], dtype='<f4')
        if body.size != width * height:
            raise ValidationError(f"{path}: expected {width * height} values, found {body.size}")
        return MarginalField(body.astype(np.float64).reshape(height, width))

    def load_model(self, path) -> MrfModel:
        return model_from_dict(self._load_json(path))

    def load_annotation_records(self, path) -> List[AnnotationRecord]:
        """
        Records of the JSON polygon format.

        Returns:
            One AnnotationRecord per stored task

        Raises:
            ValidationError: a record misses ``worker_id`` or ``polygons``
        """
        payload = self._load_json(path)
        if not isinstance(payload, list):
            raise ValidationError(f"{path}: expected a list of annotation records")
        records = []
        for index, item in enumerate(payload):
            try:
                polygons = tuple(Polygon(tuple(tuple(v) for v in poly)) for poly in item['polygons'])
                records.append(AnnotationRecord(str(item['worker_id']), item.get('tile_id'), polygons))
            except (KeyError, TypeError, ValueError) as e:
                raise ValidationError(f"{path}: malformed record {index}: {e}") from e
        return records

    def extract_annotations(self, path, dims: Dims, ring_width: int) -> List[Annotation]:
        """Rasterize every stored record into an Annotation."""
        annotations = []
        for record in self.load_annotation_records(path):
            if not record.polygons:
                logger.debug("skipping empty record of worker %s", record.worker_id)
                continue
            annotations.append(build_annotation(record.worker_id, record.polygons, ring_width,
                                                dims, record.tile_id))
        return annotations

    def load_scores(self, path, column: Optional[str] = None) -> Dict[str, float]:
        """
        Worker scores from a CSV with a ``worker_id`` column.

        Args:
            path: CSV file
            column: Score column; defaults to the first column other than ``worker_id``
        """
        frame = pd.read_csv(self._resolve(path), dtype={'worker_id': str})
        if 'worker_id' not in frame.columns:
            raise ValidationError(f"{path}: no worker_id column")
        candidates = [c for c in frame.columns if c != 'worker_id']
        column = column or (candidates[0] if candidates else None)
        if column not in frame.columns:
            raise ValidationError(f"{path}: no score column {column!r}")
        if frame['worker_id'].duplicated().any():
            raise ValidationError(f"{path}: duplicate worker ids")
        return {str(w): float(s) for w, s in zip(frame['worker_id'], frame[column])}
