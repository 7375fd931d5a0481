"""The command-line pipeline end to end on a generated demo dataset."""

import numpy as np
import pytest

from meshseg.cli import build_run_config, main, parse_config_file
from meshseg.mesh_io import load_colored_ply, read_prediction_csv
from meshseg.model import load_checkpoint
from meshseg.synthetic import write_demo_dataset

TINY_CONFIG = """\
# small everything, for fast runs
train_tiles = {root}/train_0,{root}/train_1
val_tiles = {root}/val_0
test_tiles = {root}/test_0
output_dir = {root}/runs

num_classes = 2
branch_dim = 4
embed_dim = 8
num_blocks = 1
num_heads = 2
pixels_per_face = 8
num_clusters = 4
dropout = 0.0

epochs = 2
seed = 0
lr_max = 0.003
lr_min = 0.0001
eval_every = 1
augment = false
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiles")
    write_demo_dataset(root, kind="texture")
    config_path = root / "tiny.cfg"
    config_path.write_text(TINY_CONFIG.format(root=root), encoding="utf-8")
    return root, config_path


class TestConfigParsing:
    def test_values_comments_and_blanks(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# leading comment\n\nepochs = 12\nmodality = texture\n",
            encoding="utf-8",
        )
        values = parse_config_file(path)
        assert values == {"epochs": "12", "modality": "texture"}

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("learning_rate = 3\n", encoding="utf-8")
        with pytest.raises(ValueError, match="unknown key"):
            parse_config_file(path)

    def test_line_without_equals_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs\n", encoding="utf-8")
        with pytest.raises(ValueError):
            parse_config_file(path)

    def test_flags_override_file_values(self):
        import argparse

        args = argparse.Namespace(modality=None, global_mode="ca", k_clusters=9,
                                  blocks=None, embed_dim=None, seed=5)
        config = build_run_config({"num_clusters": "300", "modality": "texture",
                                   "epochs": "7"}, args)
        assert config.model.num_clusters == 9          # flag beats file
        assert config.model.modality == "texture"      # file beats default
        assert config.model.global_mode == "cross_attention"
        assert config.train.seed == 5
        assert config.train.epochs == 7

    def test_environment_overrides_output_dir(self, monkeypatch, tmp_path):
        import argparse

        monkeypatch.setenv("MESHSEG_OUTPUT_DIR", str(tmp_path / "elsewhere"))
        args = argparse.Namespace()
        config = build_run_config({"output_dir": str(tmp_path / "configured")}, args)
        assert config.output_dir == tmp_path / "elsewhere"


class TestPipeline:
    def test_preprocess_then_cache_reuse(self, dataset, caplog):
        root, config_path = dataset
        assert main(["preprocess", "--config", str(config_path)]) == 0
        cache = root / "runs" / "cache"
        for tile in ("train_0", "train_1", "val_0", "test_0"):
            assert (cache / tile / "meta.json").exists()
            assert (cache / tile / "arrays.npz").exists()
            assert (cache / tile / "clusters.csv").exists()
        import logging

        with caplog.at_level(logging.INFO, logger="meshseg.cli"):
            assert main(["preprocess", "--config", str(config_path)]) == 0
        assert any("cached" in message for message in caplog.messages)

    def test_train_writes_checkpoints_and_history(self, dataset):
        root, config_path = dataset
        assert main(["train", "--config", str(config_path)]) == 0
        checkpoints = root / "runs" / "checkpoints"
        assert (checkpoints / "last.pt").exists()
        assert (checkpoints / "best.pt").exists()
        assert (checkpoints / "history.csv").exists()
        payload = load_checkpoint(checkpoints / "last.pt")
        assert payload["model_config"]["embed_dim"] == 8
        # the run state records the last finished epoch, zero-based
        assert payload["extra"]["epoch"] == 1
        assert payload["extra"]["step"] == 4

    def test_evaluate_writes_metrics(self, dataset):
        root, config_path = dataset
        checkpoint = root / "runs" / "checkpoints" / "best.pt"
        assert main(["evaluate", "--config", str(config_path),
                     "--checkpoint", str(checkpoint), "--split", "test"]) == 0
        metrics_dir = root / "runs" / "metrics"
        assert (metrics_dir / "test.txt").exists()
        text = (metrics_dir / "test.txt").read_text(encoding="utf-8")
        assert "mean F1" in text
        assert (metrics_dir / "test.csv").exists()

    def test_evaluate_takes_architecture_from_the_checkpoint(self, dataset):
        root, config_path = dataset
        checkpoint = root / "runs" / "checkpoints" / "best.pt"
        # a contradictory width on the command line must not break anything
        assert main(["evaluate", "--config", str(config_path),
                     "--checkpoint", str(checkpoint), "--split", "val",
                     "--embed-dim", "64"]) == 0
        assert (root / "runs" / "metrics" / "val.txt").exists()

    def test_export_writes_colored_mesh_and_scores(self, dataset):
        root, config_path = dataset
        checkpoint = root / "runs" / "checkpoints" / "best.pt"
        assert main(["export", "--config", str(config_path),
                     "--checkpoint", str(checkpoint),
                     "--tile", str(root / "test_0")]) == 0
        ply_path = root / "runs" / "export" / "test_0_predicted.ply"
        csv_path = root / "runs" / "export" / "test_0_scores.csv"
        vertices, faces, colors = load_colored_ply(ply_path)
        assert faces.shape == (484, 3)
        assert vertices.shape == (3 * 484, 3)
        assert len(np.unique(colors, axis=0)) <= 3  # two classes plus unlabeled
        labels, scores = read_prediction_csv(csv_path)
        assert labels.shape == (484,)
        assert np.allclose(scores.sum(axis=1), 1.0, atol=1e-9)

    def test_resume_flag_continues_from_last(self, dataset):
        root, config_path = dataset
        assert main(["train", "--config", str(config_path), "--resume"]) == 0

    def test_train_respects_seed_flag(self, dataset, tmp_path, monkeypatch):
        root, config_path = dataset
        monkeypatch.setenv("MESHSEG_OUTPUT_DIR", str(tmp_path / "runs_seeded"))
        assert main(["train", "--config", str(config_path), "--seed", "9"]) == 0
        assert (tmp_path / "runs_seeded" / "checkpoints" / "last.pt").exists()


class TestErrorExits:
    def test_unknown_config_key_exits_nonzero(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_key = 1\n", encoding="utf-8")
        assert main(["preprocess", "--config", str(bad)]) == 2

    def test_missing_tile_directory_exits_nonzero(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(
            f"train_tiles = {tmp_path}/nowhere\nnum_classes = 2\n",
            encoding="utf-8",
        )
        assert main(["preprocess", "--config", str(config)]) == 2

    def test_resume_without_checkpoint_exits_nonzero(self, dataset, tmp_path,
                                                     monkeypatch):
        root, config_path = dataset
        monkeypatch.setenv("MESHSEG_OUTPUT_DIR", str(tmp_path / "fresh"))
        assert main(["train", "--config", str(config_path), "--resume"]) == 2

    def test_preprocess_without_tiles_exits_nonzero(self, tmp_path):
        config = tmp_path / "empty.cfg"
        config.write_text("num_classes = 2\n", encoding="utf-8")
        assert main(["preprocess", "--config", str(config)]) == 2
