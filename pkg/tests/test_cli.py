import json

import pandas as pd
import pytest

from src.cli.experiment import plan_runs, subset_indices
from src.cli.main import main
from src.cli.seeds import derive_seed
from src.crowd_fusion.config import config_from_dict

SMALL_CONFIG = """\
seed: 3
phantom:
  dims: [32, 32]
  n_cells: 6
protocol:
  tile_size: 32
  passes: 2
workers:
  n_workers: 3
model:
  appearance_iterations: 3
learner:
  em_iterations: 5
inference:
  burn_in: 2
  n_samples: 5
fractions: [0.5, 1.0]
repetitions: 1
methods: [istaple, staple, majority]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def simulated(tmp_path, config_file):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
    return out


def test_simulate_writes_inputs(capsys, simulated):
    names = {p.name for p in simulated.iterdir()}
    assert {"image.pgm", "ground_truth.pgm", "cells.json", "annotations.json",
            "tasks.csv", "true_scores.csv"} <= names
    tasks = pd.read_csv(simulated / "tasks.csv")
    assert list(tasks.columns) == ["pass", "round", "tile_id", "worker_id", "n_polygons"]
    assert set(tasks["pass"]) == {1, 2}
    assert "SIMULATING CROWD ANNOTATIONS" in capsys.readouterr().out


@pytest.mark.parametrize("method", ["staple", "majority", "istaple"])
def test_fuse_writes_results(tmp_path, simulated, config_file, method):
    out = tmp_path / method
    code = main(["fuse", "--image", str(simulated / "image.pgm"),
                 "--annotations", str(simulated / "annotations.json"),
                 "--method", method, "--seed", "5", "--config", str(config_file), "--out", str(out)])
    assert code == 0
    assert (out / "labeling.pgm").exists()
    assert (out / "marginals.bin").exists()
    metadata = json.loads((out / "metadata.json").read_text())
    assert metadata["method"] == method
    assert metadata["seed"] == 5
    assert len(metadata["config_hash"]) == 64
    assert (out / "model.json").exists() == (method == "istaple")


def test_eval_of_ground_truth_is_perfect(tmp_path, simulated):
    report = tmp_path / "report.json"
    code = main(["eval", "--pred", str(simulated / "ground_truth.pgm"), "--gt", str(simulated / "ground_truth.pgm"),
                 "--coverage", str(simulated / "coverage.pgm"), "--report", str(report)])
    assert code == 0
    payload = json.loads(report.read_text())
    assert payload["full"]["pixel_accuracy"] == 1.0
    assert payload["full"]["voi"] == pytest.approx(0.0, abs=1e-12)
    assert payload["covered"]["mask_mode"] == "covered"


def test_eval_without_coverage(tmp_path, simulated):
    report = tmp_path / "report.json"
    assert main(["eval", "--pred", str(simulated / "ground_truth.pgm"),
                 "--gt", str(simulated / "ground_truth.pgm"), "--report", str(report)]) == 0
    assert json.loads(report.read_text())["covered"] is None


def test_rank_against_itself(simulated, capsys):
    scores = str(simulated / "true_scores.csv")
    assert main(["rank", "--estimated", scores, "--truth", scores]) == 0
    assert "mean rank difference): 0.0000" in capsys.readouterr().out


def test_rank_of_fused_scores(tmp_path, simulated, capsys):
    out = tmp_path / "fused"
    assert main(["fuse", "--image", str(simulated / "image.pgm"),
                 "--annotations", str(simulated / "annotations.json"),
                 "--method", "staple", "--out", str(out)]) == 0
    estimated = pd.read_csv(out / "scores.csv", dtype={"worker_id": str})
    truth = pd.read_csv(simulated / "true_scores.csv", dtype={"worker_id": str})
    assert set(estimated["worker_id"]) == set(truth["worker_id"])
    assert main(["rank", "--estimated", str(out / "scores.csv"),
                 "--truth", str(simulated / "true_scores.csv")]) == 0
    assert "WORKER RANKING" in capsys.readouterr().out


class TestExitCodes:
    def test_invalid_config_is_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("phantom:\n  colour: red\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "out")]) == 1
        assert "unknown key 'phantom.colour'" in capsys.readouterr().err

    def test_missing_file_is_2(self, tmp_path):
        code = main(["fuse", "--image", str(tmp_path / "none.pgm"), "--annotations", str(tmp_path / "none.json"),
                     "--method", "staple", "--out", str(tmp_path / "out")])
        assert code == 2

    def test_bad_annotation_file_is_1(self, tmp_path, simulated):
        broken = tmp_path / "broken.json"
        broken.write_text('[{"worker_id": "w000"}]')
        code = main(["fuse", "--image", str(simulated / "image.pgm"), "--annotations", str(broken),
                     "--method", "staple", "--out", str(tmp_path / "out")])
        assert code == 1

    def test_unknown_command_exits(self):
        with pytest.raises(SystemExit):
            main(["paint"])


class TestSeeds:
    def test_stable(self):
        assert derive_seed(1, 0.5, 2, "istaple") == derive_seed(1, 0.5, 2, "istaple")

    def test_distinct_parts(self):
        seeds = {derive_seed(1, f, r, m) for f in (0.1, 0.5) for r in range(3) for m in ("istaple", "staple")}
        assert len(seeds) == 12
        assert derive_seed(1, "x") != derive_seed(2, "x")

    def test_range(self):
        assert 0 <= derive_seed(7, "protocol") < 2 ** 63


class TestPlan:
    def test_subset_sizes(self):
        assert len(subset_indices(10, 0.25, 0)) == 2
        assert len(subset_indices(3, 0.1, 0)) == 1
        assert subset_indices(4, 1.0, 0) == (0, 1, 2, 3)

    def test_subset_is_seeded(self):
        assert subset_indices(20, 0.5, 11) == subset_indices(20, 0.5, 11)

    def test_methods_share_the_subset(self):
        cfg = config_from_dict({"fractions": [0.5], "repetitions": 2, "methods": ["istaple", "staple"]})
        runs = plan_runs(cfg, 10)
        assert len(runs) == 4
        assert runs[0].indices == runs[1].indices
        assert runs[0].seed != runs[1].seed
        assert runs[0].name == "f0.500_r00_istaple"


@pytest.mark.slow
def test_experiment_sweep_is_deterministic(tmp_path, config_file):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["experiment", "--config", str(config_file), "--out", str(first)]) == 0
    assert main(["experiment", "--config", str(config_file), "--out", str(second)]) == 0

    runs = pd.read_csv(first / "runs.csv")
    assert set(runs["method"]) == {"istaple", "staple", "majority"}
    assert set(runs["fraction"]) == {0.5, 1.0}
    assert {"pixel_accuracy", "pixel_accuracy_c", "voi_c", "ranking_quality"} <= set(runs["metric"])
    assert runs.equals(pd.read_csv(second / "runs.csv"))

    metadata = json.loads((first / "metadata.json").read_text())
    assert metadata["n_failed"] == 0
    assert metadata["n_runs"] == 6
    aggregate = pd.read_csv(first / "aggregate.csv")
    assert list(aggregate.columns) == ["fraction", "method", "metric", "mean", "std", "count"]
    assert (first / "simulation" / "annotations.json").exists()


def test_experiment_rejects_zero_jobs(tmp_path, config_file):
    assert main(["experiment", "--config", str(config_file), "--out", str(tmp_path / "x"), "--jobs", "0"]) == 1
