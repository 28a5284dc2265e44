import shutil

import numpy as np
import pytest

from conceptseg.cli import main
from conceptseg.core import write_manifest
from conceptseg.synthetic import generate_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    manifest, gt_manifest = generate_dataset(root, n_images=4, size=64,
                                             seed=0)
    return manifest, gt_manifest


@pytest.fixture(scope="module")
def pipeline_workdir(dataset, tmp_path_factory):
    manifest, gt_manifest = dataset
    workdir = tmp_path_factory.mktemp("work")
    rc = main([
        "pipeline", "--workdir", str(workdir), "--manifest", str(manifest),
        "--gt", str(gt_manifest), "--classes", "4", "--K", "8", "--C", "4",
        "--spectral-sigma", "5.0", "--epochs", "3", "--scale", "1000",
        "--matching", "hungarian",
    ])
    assert rc == 0
    return workdir


class TestPipeline:
    def test_produces_all_stage_outputs(self, pipeline_workdir):
        w = pipeline_workdir
        for name in ("config_snapshot.txt", "merge_log.txt",
                     "crop_manifest.txt", "mean_color.txt",
                     "embeddings.sgde", "assignments.txt",
                     "kmeans_model.sgde", "refiner.sgdr", "loss_trace.csv",
                     "metrics.csv", "metrics.txt",
                     "majority_diagnostic.txt"):
            assert (w / name).exists(), name
        for sub in ("primitives", "crops", "pseudolabels", "predictions",
                    "viz"):
            assert len(list((w / sub).glob("*.png"))) > 0, sub

    def test_assignments_format(self, pipeline_workdir):
        lines = (pipeline_workdir / "assignments.txt").read_text().split()
        values = np.array(lines, dtype=int).reshape(-1, 4)
        assert (values[:, 3] < 4).all()
        assert (values[:, 2] < 8).all()

    def test_loss_trace_csv(self, pipeline_workdir):
        lines = (pipeline_workdir /
                 "loss_trace.csv").read_text().splitlines()
        assert lines[0] == "epoch,mean_loss"
        assert len(lines) == 4

    def test_config_snapshot_records_overrides(self, pipeline_workdir):
        snap = (pipeline_workdir / "config_snapshot.txt").read_text()
        assert "K = 8" in snap.replace("=", " = ").replace("  ", " ") or \
            "K=8" in snap.replace(" ", "")

    def test_metrics_csv_parses(self, pipeline_workdir):
        text = (pipeline_workdir / "metrics.csv").read_text()
        rows = dict(line.split(",", 1)
                    for line in text.splitlines()[1:] if line)
        for key in ("mIoU", "wIoU", "pAcc"):
            assert 0.0 <= float(rows[key]) <= 1.0


class TestStageOrdering:
    def test_cluster_before_embed_names_missing_file(self, tmp_path, capsys):
        workdir = tmp_path / "w"
        rc = main(["cluster", "--workdir", str(workdir)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "embeddings.sgde" in err
        assert "cluster" in err

    def test_crops_before_primitives(self, dataset, tmp_path, capsys):
        manifest, _ = dataset
        rc = main(["crops", "--workdir", str(tmp_path / "w"),
                   "--manifest", str(manifest)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "primitives" in err


class TestEval:
    def test_perfect_prediction_scores_one(self, dataset, tmp_path):
        _, gt_manifest = dataset
        workdir = tmp_path / "w"
        pred_dir = workdir / "predictions"
        pred_dir.mkdir(parents=True)
        gt_paths = [line.strip() for line in
                    open(gt_manifest, encoding="utf-8") if line.strip()]
        for i, path in enumerate(gt_paths):
            shutil.copyfile(path, pred_dir / f"{i:04d}.png")
        rc = main(["eval", "--workdir", str(workdir),
                   "--gt", str(gt_manifest), "--classes", "4", "--C", "4",
                   "--matching", "hungarian"])
        assert rc == 0
        rows = dict(line.split(",", 1) for line in
                    (workdir / "metrics.csv").read_text().splitlines()[1:]
                    if line)
        assert float(rows["mIoU"]) == 1.0
        assert float(rows["wIoU"]) == 1.0
        assert float(rows["pAcc"]) == 1.0
        assert (workdir / "majority_diagnostic.txt").read_text() == ""


class TestDeterminism:
    def test_cluster_rerun_byte_identical(self, pipeline_workdir, tmp_path):
        src = pipeline_workdir
        w1, w2 = tmp_path / "a", tmp_path / "b"
        for w in (w1, w2):
            w.mkdir()
            shutil.copyfile(src / "embeddings.sgde", w / "embeddings.sgde")
            rc = main(["cluster", "--workdir", str(w), "--K", "8",
                       "--C", "4", "--spectral-sigma", "5.0"])
            assert rc == 0
        assert (w1 / "assignments.txt").read_bytes() == \
            (w2 / "assignments.txt").read_bytes()
        assert (w1 / "kmeans_model.sgde").read_bytes() == \
            (w2 / "kmeans_model.sgde").read_bytes()


class TestViz:
    def test_viz_without_gt(self, pipeline_workdir, dataset, tmp_path):
        workdir = tmp_path / "w"
        workdir.mkdir()
        shutil.copytree(pipeline_workdir / "predictions",
                        workdir / "predictions")
        rc = main(["viz", "--workdir", str(workdir), "--C", "4"])
        assert rc == 0
        n_pred = len(list((workdir / "predictions").glob("*.png")))
        assert len(list((workdir / "viz").glob("*.png"))) == n_pred


class TestBadInputs:
    def test_missing_manifest_path(self, tmp_path, capsys):
        rc = main(["primitives", "--workdir", str(tmp_path / "w"),
                   "--manifest", str(tmp_path / "nope.txt")])
        assert rc == 1
        assert "nope.txt" in capsys.readouterr().err

    def test_invalid_external_embeddings(self, dataset, tmp_path, capsys):
        bad = tmp_path / "bad.sgde"
        bad.write_bytes(b"XXXX" + bytes(12))
        workdir = tmp_path / "w"
        workdir.mkdir()
        (workdir / "crop_manifest.txt").write_text("")
        rc = main(["embed", "--workdir", str(workdir),
                   "--embeddings", str(bad)])
        assert rc == 1
        assert "magic" in capsys.readouterr().err
