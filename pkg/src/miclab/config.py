"""Run configuration: a typed tree with strict YAML (de)serialization.

Unknown keys anywhere in the tree are errors (catching typos like
``mic.ration``), and every validation failure names the dotted field
path it refers to.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .masking import AugParams
from .uda import CLS_HOSTS, HOSTS, LossWeights, MicConfig

__all__ = ["ExperimentConfig", "load_config", "save_config", "config_from_dict",
           "config_to_dict"]


@dataclass
class ExperimentConfig:
    """Everything one training run needs, minus the dataset bytes."""
    seed: int = 0
    task: str = "seg"
    host: str = "source_only"
    steps: int = 1000
    batch_source: int = 4
    batch_target: int = 4
    lr: float = 0.05
    lr_power: float = 0.0         # polynomial decay exponent; 0 = constant
    momentum: float = 0.9
    eval_interval: int = 500
    eval_splits: tuple = ("target/val",)
    dataset_root: str = ""
    output_dir: str = ""
    widths: tuple = (16, 32, 64, 64)
    kernel: int = 3
    lam_grl: float = 1.0          # adversarial host: gradient-reversal scale
    mix_color_aug: bool = True    # self-training host: jitter the mixed image
    pl_noise_frac: float = 0.0    # corrupt this fraction of teacher label segments
    mic: MicConfig = field(default_factory=MicConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    aug: AugParams = field(default_factory=AugParams)

    def validate(self):
        if self.task not in ("seg", "cls"):
            raise ConfigError(f"task: must be seg|cls, got {self.task!r}")
        if self.host not in HOSTS:
            raise ConfigError(f"host: unknown {self.host!r}; expected one of {HOSTS}")
        if self.task == "cls" and self.host not in CLS_HOSTS:
            raise ConfigError(f"host: {self.host!r} is segmentation-only; "
                              f"cls supports {CLS_HOSTS}")
        if self.steps < 0:
            raise ConfigError(f"steps: must be >= 0, got {self.steps}")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ConfigError(f"batch sizes must be >= 1, got source={self.batch_source} "
                              f"target={self.batch_target}")
        if self.lr <= 0:
            raise ConfigError(f"lr: must be > 0, got {self.lr}")
        if self.lr_power < 0:
            raise ConfigError(f"lr_power: must be >= 0, got {self.lr_power}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum: must be in [0, 1), got {self.momentum}")
        if self.eval_interval < 0:
            raise ConfigError(f"eval_interval: must be >= 0, got {self.eval_interval}")
        if not self.eval_splits:
            raise ConfigError("eval_splits: need at least one split")
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths: must be positive, got {self.widths}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ConfigError(f"kernel: must be odd and positive, got {self.kernel}")
        if self.lam_grl < 0:
            raise ConfigError(f"lam_grl: must be >= 0, got {self.lam_grl}")
        if not (0.0 <= self.pl_noise_frac <= 1.0):
            raise ConfigError(f"pl_noise_frac: must be in [0, 1], got {self.pl_noise_frac}")
        if self.pl_noise_frac > 0 and self.task != "seg":
            raise ConfigError("pl_noise_frac: applies to the segmentation task")
        try:
            self.mic.validate()
        except ConfigError as e:
            raise ConfigError(f"mic.{e}") from None
        try:
            self.weights.validate()
        except ConfigError as e:
            raise ConfigError(f"weights.{e}") from None
        try:
            self.aug.validate()
        except ConfigError as e:
            raise ConfigError(f"aug.{e}") from None


# tuple-typed fields get lists in YAML; coerce them back on load
_TUPLE_FIELDS = {
    ExperimentConfig: {"eval_splits", "widths"},
    MicConfig: {"mask_domains"},
    AugParams: {"contrast", "saturation"},
    LossWeights: set(),
}


def _from_dict(dc_type, d: dict, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(d).__name__}")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(d) - set(known)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): "
                          + ", ".join(f"{where}{k}" for k in sorted(unknown)))
    kwargs = {}
    for name, f in known.items():
        if name not in d:
            continue
        value = d[name]
        sub = f"{path}.{name}" if path else name
        if f.type in ("MicConfig", "LossWeights", "AugParams") or \
                dataclasses.is_dataclass(f.type):
            nested = {"MicConfig": MicConfig, "LossWeights": LossWeights,
                      "AugParams": AugParams}.get(f.type, f.type)
            kwargs[name] = _from_dict(nested, value, sub)
        elif name in _TUPLE_FIELDS.get(dc_type, set()):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub}: expected a list, got {type(value).__name__}")
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return dc_type(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def _to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = _to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, d, "")
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _to_dict(cfg)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True,
                       default_flow_style=False)
