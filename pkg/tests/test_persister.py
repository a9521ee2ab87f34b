import json

import numpy as np
import pytest
from PIL import Image

from src.crowd_fusion.exceptions import ValidationError
from src.crowd_fusion.extractor import CrowdDataExtractor, model_from_dict
from src.crowd_fusion.grid import build_annotation
from src.crowd_fusion.inference import initial_model
from src.crowd_fusion.metrics import evaluate
from src.crowd_fusion.models import (
    AnnotationRecord,
    ConfusionMatrix,
    LabelGrid,
    MarginalField,
    ModelConfig,
    Polygon,
)
from src.crowd_fusion.persister import MODEL_FORMAT, ResultPersister, model_to_dict


@pytest.fixture
def persister(tmp_path):
    return ResultPersister(tmp_path / "out")


@pytest.fixture
def extractor(tmp_path):
    return CrowdDataExtractor(tmp_path / "out")


def test_labels_round_trip(persister, extractor, blocks_truth):
    persister.save_labels(blocks_truth, "gt.pgm")
    assert extractor.load_labels("gt.pgm").equals(blocks_truth)


def test_labels_are_black_and_white(persister, blocks_truth):
    path = persister.save_labels(blocks_truth, "gt.pgm")
    with Image.open(path) as img:
        assert img.mode == "L"
        assert set(np.unique(np.array(img))) == {0, 255}


def test_image_quantised_to_bytes(persister, extractor, blocks_image):
    persister.save_image(blocks_image, "image.pgm")
    loaded = extractor.load_image("image.pgm")
    assert loaded.dims == blocks_image.dims
    assert np.abs(loaded.values - blocks_image.values).max() <= 0.5 / 255 + 1e-12


def test_rejects_colour_images(tmp_path, extractor):
    (tmp_path / "out").mkdir()
    Image.new("RGB", (4, 3)).save(tmp_path / "out" / "rgb.ppm")
    with pytest.raises(ValidationError, match="gray"):
        extractor.load_labels("rgb.ppm")


class TestMarginals:
    def test_round_trip(self, persister, extractor):
        field = MarginalField(np.linspace(0.0, 1.0, 12).reshape(3, 4))
        path = persister.save_marginals(field, "m.bin")
        assert path.stat().st_size == 8 + 4 * 12
        loaded = extractor.load_marginals("m.bin")
        assert loaded.dims == (4, 3)
        assert np.allclose(loaded.p1, field.p1, atol=1e-7)

    def test_header_layout(self, persister):
        path = persister.save_marginals(MarginalField([[0.25, 0.75]]), "m.bin")
        raw = path.read_bytes()
        assert np.frombuffer(raw[:8], dtype="<u4").tolist() == [2, 1]
        assert np.frombuffer(raw[8:], dtype="<f4").tolist() == [0.25, 0.75]

    def test_truncated_body(self, persister, extractor):
        path = persister.save_marginals(MarginalField([[0.25, 0.75]]), "m.bin")
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValidationError, match="expected 2 values"):
            extractor.load_marginals("m.bin")


def test_model_round_trip(persister, extractor, blocks_image, blocks_truth, make_annotation):
    annotations = [make_annotation("u", blocks_truth.labels)]
    model = initial_model(blocks_image, annotations, ModelConfig()).with_confusions(
        {"u": ConfusionMatrix([[0.9, 0.1], [1.0 / 3.0, 2.0 / 3.0]])}
    )
    persister.save_model(model, "model.json")
    loaded = extractor.load_model("model.json")
    assert loaded.classes.offsets == model.classes.offsets
    assert np.array_equal(loaded.prior.pairwise, model.prior.pairwise)
    assert np.array_equal(loaded.appearance.means, model.appearance.means)
    assert loaded.appearance.sigma == model.appearance.sigma
    assert np.array_equal(loaded.shading.values, model.shading.values)
    assert np.array_equal(loaded.confusions["u"].p, model.confusions["u"].p)


def test_model_format_is_checked(blocks_image, blocks_truth, make_annotation):
    payload = model_to_dict(initial_model(blocks_image, [make_annotation("u", blocks_truth.labels)],
                                          ModelConfig()))
    payload["format"] = "something-else"
    with pytest.raises(ValidationError, match="not a model file"):
        model_from_dict(payload)
    payload["format"] = MODEL_FORMAT
    del payload["prior"]
    with pytest.raises(ValidationError, match="lacks key"):
        model_from_dict(payload)


class TestAnnotations:
    square = Polygon(((1.0, 1.0), (5.0, 1.0), (5.0, 5.0), (1.0, 5.0)))

    def test_records_rasterize_like_build_annotation(self, persister, extractor):
        records = [AnnotationRecord("w001", "r00c00", (self.square,)), AnnotationRecord("w002", None, ())]
        persister.save_annotations(records, "annotations.json")
        assert extractor.load_annotation_records("annotations.json") == records
        (annotation,) = extractor.extract_annotations("annotations.json", (8, 8), 1)
        expected = build_annotation("w001", [self.square], 1, (8, 8), "r00c00")
        assert annotation.labels.equals(expected.labels)
        assert np.array_equal(annotation.observed, expected.observed)
        assert annotation.tile_id == "r00c00"

    def test_record_without_polygons(self, tmp_path, extractor):
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / "bad.json").write_text(json.dumps([{"worker_id": "a"}]))
        with pytest.raises(ValidationError, match="malformed record 0"):
            extractor.load_annotation_records("bad.json")

    def test_invalid_json_reports_line(self, tmp_path, extractor):
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / "bad.json").write_text('[\n{"worker_id": }\n]')
        with pytest.raises(ValidationError, match="line 2"):
            extractor.load_annotation_records("bad.json")


class TestScores:
    def test_round_trip(self, persister, extractor):
        persister.save_scores({"b": 0.5, "a": 0.75}, "scores.csv")
        assert extractor.load_scores("scores.csv") == {"a": 0.75, "b": 0.5}
        assert persister.path("scores.csv").read_text().splitlines()[0] == "worker_id,score"

    def test_numeric_looking_ids_stay_strings(self, persister, extractor):
        persister.save_scores({"007": 1.0}, "scores.csv")
        assert list(extractor.load_scores("scores.csv")) == ["007"]

    def test_duplicate_workers(self, tmp_path, extractor):
        (tmp_path / "out").mkdir()
        (tmp_path / "out" / "s.csv").write_text("worker_id,score\na,1\na,2\n")
        with pytest.raises(ValidationError, match="duplicate"):
            extractor.load_scores("s.csv")

    def test_missing_column(self, persister, extractor):
        persister.save_scores({"a": 1.0}, "scores.csv")
        with pytest.raises(ValidationError, match="no score column"):
            extractor.load_scores("scores.csv", column="accuracy")


def test_confusion_table(persister):
    persister.save_confusions({"u": ConfusionMatrix([[0.9, 0.1], [0.2, 0.8]])}, "confusions.csv")
    lines = persister.path("confusions.csv").read_text().splitlines()
    assert lines == ["worker_id,p00,p10,p01,p11", "u,0.9,0.1,0.2,0.8"]


def test_metrics_json_keeps_null_blocks(persister, blocks_truth):
    report = evaluate(blocks_truth, blocks_truth)
    path = persister.save_metrics({"full": report, "covered": None}, "metrics.json")
    payload = json.loads(path.read_text())
    assert payload["covered"] is None
    assert payload["full"]["pixel_accuracy"] == 1.0


def test_undefined_metrics_are_written_as_null(persister, blocks_truth):
    report = evaluate(LabelGrid.zeros((16, 16)), blocks_truth)
    path = persister.save_metrics({"full": report}, "metrics.json")
    text = path.read_text()
    assert "NaN" not in text
    payload = json.loads(text, parse_constant=lambda token: pytest.fail(f"bare {token} in JSON"))
    assert payload["full"]["voi"] is None
    assert payload["full"]["pixel_accuracy"] == pytest.approx(1.0 - blocks_truth.labels.mean())


def test_nested_infinities_become_null(persister):
    path = persister.save_json({"scores": [1.0, float("inf")], "run": {"loss": float("-inf")}}, "meta.json")
    assert json.loads(path.read_text()) == {"scores": [1.0, None], "run": {"loss": None}}


def test_no_temporary_files_left(persister, blocks_truth):
    persister.save_labels(blocks_truth, "gt.pgm")
    persister.save_json({"a": 1}, "meta.json")
    assert sorted(p.name for p in persister.out_dir.iterdir()) == ["gt.pgm", "meta.json"]


def test_absolute_paths_ignore_base(tmp_path, blocks_truth):
    ResultPersister(tmp_path).save_labels(blocks_truth, "gt.pgm")
    absolute = CrowdDataExtractor(tmp_path / "elsewhere").load_labels(tmp_path / "gt.pgm")
    assert absolute.equals(blocks_truth)
