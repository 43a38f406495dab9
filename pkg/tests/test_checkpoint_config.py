"""Tests for PASR1 checkpoints, config loading and config hashing."""

import logging

import numpy as np
import pytest
from conftest import TINY_OVERRIDES

from paser.checkpoint import load_checkpoint, load_graph, save_checkpoint, save_graph
from paser.config import ExperimentConfig, load_config
from paser.data.splits import SPLIT_NAMES
from paser.errors import ConfigError, FormatError, ShapeError
from paser.experiments import ensure_prepared
from paser.models import UNet, UNetSpec
from paser.stages import Stage, gen_data, load_split, paths_for, stage_hash, stage_is_current
from paser.tensorkit import RngStream

HASH = "ab" * 32
OTHER_HASH = "cd" * 32


@pytest.fixture
def tensors() -> dict[str, np.ndarray]:
    gen = np.random.default_rng(0)
    return {
        "enc.weight": gen.normal(size=(4, 1, 3, 3)).astype(np.float32),
        "enc.bias": np.zeros(4, dtype=np.float32),
        "head.scale": np.float64(np.pi) * np.ones((2, 5)),
        "scalar": np.array(1.5, dtype=np.float64),
    }


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, tensors):
        path = tmp_path / "ckpt" / "model.pasr"
        save_checkpoint(path, tensors, HASH)
        checkpoint = load_checkpoint(path, HASH)
        assert checkpoint.config_hash == HASH
        assert list(checkpoint.tensors) == list(tensors)
        for name, value in tensors.items():
            loaded = checkpoint.tensors[name]
            assert loaded.dtype == value.dtype
            assert loaded.shape == value.shape
            assert loaded.tobytes() == value.tobytes()

    def test_graph_round_trip(self, tmp_path):
        model = UNet(UNetSpec(depth=1, base_channels=2), RngStream(0))
        save_graph(tmp_path / "f0.pasr", model, HASH)
        clone = UNet(UNetSpec(depth=1, base_channels=2), RngStream(1))
        assert load_graph(tmp_path / "f0.pasr", clone) is clone
        assert clone.trained
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(clone.params[name].data, value)

    def test_wrong_architecture(self, tmp_path):
        save_graph(tmp_path / "f0.pasr", UNet(UNetSpec(depth=1), RngStream(0)), HASH)
        with pytest.raises(ShapeError):
            load_graph(tmp_path / "f0.pasr", UNet(UNetSpec(depth=2), RngStream(0)))

    def test_hash_mismatch_warns(self, tmp_path, tensors, caplog):
        save_checkpoint(tmp_path / "x.pasr", tensors, HASH)
        with caplog.at_level(logging.WARNING, logger="paser.checkpoint"):
            checkpoint = load_checkpoint(tmp_path / "x.pasr", OTHER_HASH)
        assert "was written under config" in caplog.text
        assert len(checkpoint.tensors) == len(tensors)

    def test_bad_magic(self, tmp_path, tensors):
        path = tmp_path / "x.pasr"
        save_checkpoint(path, tensors, HASH)
        path.write_bytes(b"PASR2" + path.read_bytes()[5:])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, tensors):
        path = tmp_path / "x.pasr"
        save_checkpoint(path, tensors, HASH)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path, tensors):
        path = tmp_path / "x.pasr"
        save_checkpoint(path, tensors, HASH)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)

    def test_bad_hash(self, tmp_path, tensors):
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "x.pasr", tensors, "abc")

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "x.pasr", {"w": np.zeros(2, dtype=np.int32)}, HASH)


class TestConfig:
    def test_defaults(self):
        config = load_config()
        assert config.rl.lam == 0.5
        assert config.suite.base_channels == [6, 24, 64]
        assert config.eval_samples == config.rl.samples

    def test_toml_dotted_keys(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(
            'seed = 7\nrl.lambda = 0.25\nsuite.base_channels = [2, 4, 8]\n'
            '[data]\ngenerator = "glyphs"\nnoise_type = "box"\n'
        )
        config = load_config(path)
        assert config.seed == 7
        assert config.rl.lam == 0.25
        assert config.suite.base_channels == [2, 4, 8]
        assert config.data.generator == "glyphs"
        assert config.data.num_classes == 2

    def test_overrides_and_flags(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("seed = 7\nrl.lambda = 0.25\n")
        config = load_config(
            path, overrides=["rl.lambda=0.9", "eval.samples=3"], seed=11, out_dir="elsewhere"
        )
        assert config.rl.lam == 0.9
        assert config.eval_samples == 3
        assert config.seed == 11
        assert config.out_dir == "elsewhere"

    @pytest.mark.parametrize(
        "override",
        ["rl.unknown=1", "rl.lambda=1.5", "suite.depths=[1]", "seed=-1", "noequals", "=3"],
    )
    def test_invalid(self, override):
        with pytest.raises(ConfigError):
            load_config(overrides=[override])

    def test_unreadable_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")

    def test_override_into_scalar(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["seed.value=1"])


class TestHash:
    def test_ignores_out_dir(self):
        a = load_config(out_dir="one")
        b = load_config(out_dir="two")
        assert a.config_hash() == b.config_hash()
        assert len(a.config_hash()) == 64

    def test_tracks_values(self):
        assert load_config().config_hash() != load_config(overrides=["rl.lambda=0.3"]).config_hash()

    def test_stage_sections(self):
        base = ExperimentConfig()
        tvd = load_config(overrides=["tvd.threshold=0.2"])
        assert stage_hash(base, Stage.TRAIN_RL) == stage_hash(tvd, Stage.TRAIN_RL)
        assert stage_hash(base, Stage.FINETUNE_TVD) != stage_hash(tvd, Stage.FINETUNE_TVD)

    def test_pretrain_variant_excluded(self):
        noisy = load_config(overrides=['pretrain.variant="noisy"'])
        assert stage_hash(ExperimentConfig(), Stage.PRETRAIN) == stage_hash(noisy, Stage.PRETRAIN)


class TestStageIsCurrent:
    def test_data_stamp_tracks_data_section(self, tiny_config):
        assert not stage_is_current(tiny_config, Stage.GEN_DATA)
        gen_data(tiny_config)
        assert stage_is_current(tiny_config, Stage.GEN_DATA)
        resized = load_config(
            overrides=[*TINY_OVERRIDES, "data.num_samples=30"], out_dir=tiny_config.out_dir
        )
        assert not stage_is_current(resized, Stage.GEN_DATA)

    def test_checkpoint_hash_tracks_stage_sections(self, tiny_config):
        path = paths_for(tiny_config).checkpoint(Stage.TRAIN_RL, "policy")
        graph = UNet(UNetSpec(depth=1), RngStream(0))
        save_graph(path, graph, stage_hash(tiny_config, Stage.TRAIN_RL))
        assert stage_is_current(tiny_config, Stage.TRAIN_RL, "policy")
        greedy = load_config(
            overrides=[*TINY_OVERRIDES, "rl.lambda=0"], out_dir=tiny_config.out_dir
        )
        assert not stage_is_current(greedy, Stage.TRAIN_RL, "policy")
        assert not stage_is_current(tiny_config, Stage.FINETUNE, "policy")

    def test_stale_data_is_regenerated(self, tiny_config):
        gen_data(tiny_config)
        resized = load_config(
            overrides=[*TINY_OVERRIDES, "data.num_samples=30"], out_dir=tiny_config.out_dir
        )
        ensure_prepared(resized)
        assert stage_is_current(resized, Stage.GEN_DATA)
        assert stage_is_current(resized, Stage.PRETRAIN, "f0")
        assert sum(len(load_split(resized, name)) for name in SPLIT_NAMES) == 30
