import hashlib

import numpy as np
import pytest

from tripletiris.cli import build_parser, main
from tripletiris.config import OPTIONS, RunConfig, parse_config_text, resolve
from tripletiris.errors import ConfigError
from tripletiris.evaluation import TtaEmbedding
from tripletiris.store import EmbeddingStore, read_store, write_store

TOY_CONFIG = """\
# toy run for tests
model.input_resolution = 32
model.stage_channels = 8,16
model.blocks_per_stage = 1,1
model.embedding_dim = 16
train.P = 4
train.lr = 0.02
train.triplet_lr = 0.001
train.triplet_steps = 6
train.pretrain_max_epochs = 3
"""


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        h.update(str(p.relative_to(root)).encode())
        if p.is_file():
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "toy.cfg").write_text(TOY_CONFIG)
    assert main(["synth", "--classes", "4", "--per-class", "5", "--resolution", "32", "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "toy.cfg"), "--data", str(root / "data"),
                 "--out", str(root / "model.tfck"), "--seed", "1"]) == 0
    return root


class TestConfig:
    def test_round_trip(self):
        cfg = RunConfig.from_values({"train.P": "6", "model.stage_channels": "4, 8",
                                   "model.blocks_per_stage": "1,2", "train.margin": "0.3"})
        assert RunConfig.from_values(parse_config_text(cfg.to_text())) == cfg
        assert cfg.model.stage_channels == (4, 8) and cfg.train.margin.m == 0.3

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown option"):
            parse_config_text("train.nope = 1")

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_text("train.P = 4\njust words")

    @pytest.mark.parametrize("raw", [{"train.P": "x"}, {"train.P": "1"}, {"eval.metric": "manhattan"},
                                     {"eval.far_target": "0"}])
    def test_bad_values(self, raw):
        with pytest.raises(ConfigError):
            RunConfig.from_values(raw)

    def test_flag_names(self):
        flags = {o.flag for o in OPTIONS}
        assert "--train-triplet-steps" in flags and "--model-embedding-dim" in flags

    def test_flags_override_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("train.K = 3\ntrain.P = 5\n")
        args = build_parser().parse_args(["train", "--out", "x", "--config", str(tmp_path / "c.cfg"), "--train-K", "6"])
        cfg = resolve(args, ("train",))
        assert (cfg.train.P, cfg.train.K) == (5, 6)


class TestHelp:
    @pytest.mark.parametrize("command", ["synth", "train", "embed", "eval"])
    def test_help_documents_every_flag(self, command, capsys):
        with pytest.raises(SystemExit) as info:
            main([command, "--help"])
        assert info.value.code == 0
        text = capsys.readouterr().out
        sub = build_parser()._subparsers._group_actions[0].choices[command]
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in text
            if action.option_strings and action.dest != "help":
                assert action.help


class TestSynth:
    def test_counts(self, tmp_path, capsys):
        assert main(["synth", "--classes", "8", "--per-class", "12", "--resolution", "16", "--out", str(tmp_path / "d")]) == 0
        dirs = sorted(p for p in (tmp_path / "d").iterdir())
        assert len(dirs) == 8 and sum(len(list(d.iterdir())) for d in dirs) == 96
        assert "96 images in 8 classes" in capsys.readouterr().out

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ("a", "b"):
            main(["synth", "--classes", "3", "--per-class", "2", "--resolution", "16", "--seed", "5", "--out", str(tmp_path / name)])
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    def test_one_class_is_usage_error(self, tmp_path):
        assert main(["synth", "--classes", "1", "--out", str(tmp_path / "d")]) == 2
        assert not (tmp_path / "d").exists()

    def test_refuses_non_empty_output(self, tmp_path):
        (tmp_path / "d").mkdir()
        (tmp_path / "d" / "keep.txt").write_text("x")
        assert main(["synth", "--out", str(tmp_path / "d")]) == 2


class TestTrain:
    def test_outputs(self, workspace):
        assert (workspace / "model.tfck").read_bytes()[:4] == b"TFCK"
        log = (workspace / "model.tfck.log").read_text()
        assert "# train.seed = 1" in log and "# model.embedding_dim = 16" in log
        assert "stage=triplet" in log

    def test_same_seed_identical_checkpoint(self, workspace, tmp_path):
        assert main(["train", "--config", str(workspace / "toy.cfg"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "again.tfck"), "--seed", "1"]) == 0
        assert (tmp_path / "again.tfck").read_bytes() == (workspace / "model.tfck").read_bytes()

    def test_missing_dataset_fails_before_output(self, workspace, tmp_path):
        out = tmp_path / "sub" / "m.tfck"
        assert main(["train", "--config", str(workspace / "toy.cfg"), "--data", str(tmp_path / "none"),
                     "--out", str(out)]) == 3
        assert not (tmp_path / "sub").exists()

    def test_missing_config_file(self, workspace, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.cfg"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "m.tfck")]) == 2

    def test_divergence_exit_code(self, workspace, tmp_path, capsys):
        code = main(["train", "--config", str(workspace / "toy.cfg"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "m.tfck"), "--train-lr", "1e12"])
        assert code == 4
        assert "step" in capsys.readouterr().err
        assert not (tmp_path / "m.tfck").exists()

    def test_skip_pretrain(self, workspace, tmp_path, capsys):
        assert main(["train", "--config", str(workspace / "toy.cfg"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "m.tfck"), "--skip-pretrain"]) == 0
        log = (tmp_path / "m.tfck.log").read_text()
        assert "stage=pretrain" not in log
        assert "# flag = triplet_without_pretrain" in log


class TestEmbed:
    def test_tta_dim(self, workspace, tmp_path):
        assert main(["embed", "--checkpoint", str(workspace / "model.tfck"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "e.bin")]) == 0
        store = read_store(tmp_path / "e.bin")
        assert (len(store), store.dim) == (20, 96)

    def test_no_tta_dim(self, workspace, tmp_path):
        assert main(["embed", "--checkpoint", str(workspace / "model.tfck"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "e.bin"), "--no-tta"]) == 0
        assert read_store(tmp_path / "e.bin").dim == 16

    def test_resolution_mismatch(self, workspace, tmp_path, capsys):
        main(["synth", "--classes", "2", "--per-class", "2", "--resolution", "24", "--out", str(tmp_path / "d")])
        capsys.readouterr()
        assert main(["embed", "--checkpoint", str(workspace / "model.tfck"), "--data", str(tmp_path / "d"),
                     "--out", str(tmp_path / "e.bin")]) == 3
        err = capsys.readouterr().err
        assert "24x24" in err and "32x32" in err
        assert not (tmp_path / "e.bin").exists()

    def test_corrupt_checkpoint(self, workspace, tmp_path):
        blob = bytearray((workspace / "model.tfck").read_bytes())
        blob[40] ^= 0xFF
        (tmp_path / "bad.tfck").write_bytes(bytes(blob))
        assert main(["embed", "--checkpoint", str(tmp_path / "bad.tfck"), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "e.bin")]) == 3


@pytest.fixture(scope="module")
def store(workspace):
    path = workspace / "emb.bin"
    assert main(["embed", "--checkpoint", str(workspace / "model.tfck"), "--data", str(workspace / "data"),
                 "--out", str(path)]) == 0
    return path


class TestEval:
    def test_report_and_files(self, store, tmp_path, capsys):
        assert main(["eval", "--store", str(store), "--far", "0.001", "--roc", str(tmp_path / "roc.csv"),
                     "--scores", str(tmp_path / "s.csv"), "--report", str(tmp_path / "r.txt")]) == 0
        out = capsys.readouterr().out
        assert "FRR@0.1% FAR" in out and "EER" in out and "Rank-1" in out
        assert (tmp_path / "roc.csv").read_text().startswith("far,frr\n")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        # 4 classes x 5 images: 40 genuine + 150 impostor pairs
        assert len(lines) == 1 + 190
        assert "# eval.far_target = 0.001" in (tmp_path / "r.txt").read_text()

    def test_identical_report_bytes(self, store, tmp_path):
        for name in ("a", "b"):
            main(["eval", "--store", str(store), "--metric", "l2", "--report", str(tmp_path / f"{name}.txt"),
                  "--roc", str(tmp_path / f"{name}.csv"), "--scores", str(tmp_path / f"{name}.s.csv")])
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert "metric: euclidean_l2" in (tmp_path / "a.txt").read_text()

    def test_single_class_store(self, tmp_path, capsys):
        write_store(EmbeddingStore(2, [TtaEmbedding(np.array([1.0, float(i)]), f"a/{i}", "a") for i in range(3)]),
                    tmp_path / "one.bin")
        assert main(["eval", "--store", str(tmp_path / "one.bin")]) == 3
        assert "impostor" in capsys.readouterr().err
        assert not (tmp_path / "one.roc.csv").exists()

    def test_missing_store(self, tmp_path):
        assert main(["eval", "--store", str(tmp_path / "none.bin")]) == 3

    def test_bad_metric_is_usage_error(self, store):
        assert main(["eval", "--store", str(store), "--metric", "manhattan"]) == 2
