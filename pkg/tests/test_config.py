"""Config tree (de)serialization and validation messages."""

import dataclasses

import pytest
import yaml

from miclab.config import (ExperimentConfig, config_from_dict, config_to_dict,
                           load_config, save_config)
from miclab.errors import ConfigError
from miclab.masking import AugParams
from miclab.uda import LossWeights, MicConfig


def full_config():
    return ExperimentConfig(
        seed=3, task="seg", host="self_training", steps=50, batch_source=2,
        batch_target=3, lr=0.01, lr_power=0.9, momentum=0.8, eval_interval=25,
        eval_splits=("target/val", "target/test"), dataset_root="/tmp/x",
        output_dir="/tmp/y", widths=(8, 16), kernel=5, lam_grl=0.5,
        mix_color_aug=False, pl_noise_frac=0.2,
        mic=MicConfig(patch=4, ratio=0.3, alpha=0.9, tau=0.5,
                      mask_domains=("source", "target")),
        weights=LossWeights(lambda_t=0.5, lambda_m=2.0),
        aug=AugParams(brightness=0.1, blur_prob=0.25))


class TestRoundTrip:
    def test_dict_identity(self):
        cfg = full_config()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_default_round_trip(self):
        cfg = ExperimentConfig()
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_file_round_trip(self, tmp_path):
        cfg = full_config()
        p = str(tmp_path / "cfg.yaml")
        save_config(cfg, p)
        assert load_config(p) == cfg

    def test_yaml_lists_become_tuples(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text(yaml.safe_dump({"widths": [4, 8],
                                     "mic": {"mask_domains": ["target"]}}))
        cfg = load_config(str(p))
        assert cfg.widths == (4, 8)
        assert cfg.mic.mask_domains == ("target",)

    def test_empty_file_gives_defaults(self, tmp_path):
        p = tmp_path / "cfg.yaml"
        p.write_text("")
        assert load_config(str(p)) == ExperimentConfig()

    def test_partial_overrides_keep_defaults(self):
        cfg = config_from_dict({"lr": 0.2, "mic": {"ratio": 0.9}})
        assert cfg.lr == 0.2
        assert cfg.mic.ratio == 0.9
        assert cfg.mic.patch == MicConfig().patch
        assert cfg.steps == ExperimentConfig().steps


class TestUnknownKeys:
    def test_top_level_typo_named(self):
        with pytest.raises(ConfigError, match="stepps"):
            config_from_dict({"stepps": 10})

    def test_nested_typo_dotted_path(self):
        with pytest.raises(ConfigError, match=r"mic\.ration"):
            config_from_dict({"mic": {"ration": 0.5}})

    def test_scalar_where_mapping_expected(self):
        with pytest.raises(ConfigError, match="mic"):
            config_from_dict({"mic": 5})


class TestValidationMessages:
    @pytest.mark.parametrize("field,value,needle", [
        ("task", "detection", "task"),
        ("host", "dreaming", "host"),
        ("steps", -1, "steps"),
        ("lr", 0.0, "lr"),
        ("lr_power", -1.0, "lr_power"),
        ("momentum", 1.0, "momentum"),
        ("kernel", 4, "kernel"),
        ("batch_source", 0, "batch"),
        ("pl_noise_frac", 1.5, "pl_noise_frac"),
        ("eval_splits", (), "eval_splits"),
        ("widths", (0,), "widths"),
        ("lam_grl", -0.1, "lam_grl"),
    ])
    def test_field_named_in_error(self, field, value, needle):
        cfg = dataclasses.replace(ExperimentConfig(), **{field: value})
        with pytest.raises(ConfigError, match=needle):
            cfg.validate()

    def test_nested_mic_error_keeps_prefix(self):
        cfg = ExperimentConfig(mic=MicConfig(ratio=1.5))
        with pytest.raises(ConfigError, match=r"mic\."):
            cfg.validate()

    def test_nested_weights_error_keeps_prefix(self):
        cfg = ExperimentConfig(weights=LossWeights(lambda_m=-1.0))
        with pytest.raises(ConfigError, match="weights"):
            cfg.validate()

    def test_cls_rejects_seg_only_hosts(self):
        cfg = ExperimentConfig(task="cls", host="adversarial")
        with pytest.raises(ConfigError, match="cls"):
            cfg.validate()

    def test_from_dict_validates(self):
        with pytest.raises(ConfigError):
            config_from_dict({"lr": -1.0})
