"""Tiny convolutional segmenter, classifier, and domain discriminator.

All three share the same encoder recipe: four stride-2 3x3 conv+ReLU
stages.  With stride products 1,2,4,8 the receptive field of the deepest
encoder features is 3 + 2*2 + 2*4 + 2*8 = 31 pixels, so on 32x32 scenes
a single deep feature integrates essentially the whole image; this is
what lets the models pick up relations between objects rather than just
local texture.  No normalization layers anywhere; weights use He
(fan-in) initialization from the experiment's init stream, biases start
at zero.

The segmenter decodes back to input resolution with non-learned
bilinear 2x upsampling followed by 3x3 conv+ReLU at each stage and a
final 1x1 projection to class logits.  The classifier pools the encoder
output and applies one linear layer.  The discriminator is a 3-conv
binary domain classifier that consumes softmax probability maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor, grad_reverse  # re-export grad_reverse here too

__all__ = [
    "ArchSpec", "ModelParams", "DiscriminatorParams",
    "build_segmenter", "build_classifier", "build_discriminator",
    "grad_reverse",
]

ENCODER_RF = 31  # receptive field (pixels) of the deepest encoder stage


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; stored verbatim in checkpoints."""
    task: str = "seg"                 # "seg" | "cls" | "disc"
    in_channels: int = 3
    widths: tuple = (16, 32, 64, 64)  # encoder stage widths
    num_classes: int = 6
    kernel: int = 3

    def validate(self):
        if self.task not in ("seg", "cls", "disc"):
            raise ConfigError(f"arch.task must be seg|cls|disc, got {self.task!r}")
        if len(self.widths) < 1 or any(int(w) < 1 for w in self.widths):
            raise ConfigError(f"arch.widths must be positive, got {self.widths!r}")
        if self.num_classes < 2:
            raise ConfigError(f"arch.num_classes must be >= 2, got {self.num_classes}")
        if self.kernel % 2 != 1:
            raise ConfigError(f"arch.kernel must be odd, got {self.kernel}")

    def to_dict(self):
        return {"task": self.task, "in_channels": self.in_channels,
                "widths": list(self.widths), "num_classes": self.num_classes,
                "kernel": self.kernel}

    @staticmethod
    def from_dict(d):
        return ArchSpec(task=d["task"], in_channels=int(d["in_channels"]),
                        widths=tuple(int(w) for w in d["widths"]),
                        num_classes=int(d["num_classes"]), kernel=int(d["kernel"]))


def _he_conv(rng, cout, cin, k, requires_grad=True):
    fan_in = cin * k * k
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
    return T.Tensor(w, requires_grad=requires_grad), T.Tensor(np.zeros(cout), requires_grad=requires_grad)


@dataclass
class ModelParams:
    """Named parameter container plus the forward pass that uses it."""
    arch: ArchSpec
    params: dict = field(default_factory=dict)  # name -> Tensor, insertion-ordered

    # -- bookkeeping ---------------------------------------------------
    def named(self):
        return self.params.items()

    def tensors(self):
        return list(self.params.values())

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict):
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise ShapeError(f"parameter name mismatch: missing={sorted(missing)}, "
                             f"unexpected={sorted(extra)}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {k!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()

    def clone(self, requires_grad: bool = False) -> "ModelParams":
        out = ModelParams(self.arch)
        for k, t in self.params.items():
            out.params[k] = T.Tensor(t.data.copy(), requires_grad=requires_grad)
        return out

    # -- forward -------------------------------------------------------
    def _encode(self, x: Tensor) -> Tensor:
        h = x
        for i in range(len(self.arch.widths)):
            h = T.relu(T.conv2d(h, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"],
                                stride=2, padding=self.arch.kernel // 2))
        return h

    def forward(self, x: Tensor) -> Tensor:
        """Logits for a batch: seg [N,C,H,W]; cls [N,C]; disc [N]."""
        if not isinstance(x, Tensor):
            x = T.Tensor(x)
        if x.ndim != 4:
            raise ShapeError(f"forward expects [N,C,H,W], got {x.shape}")
        n, c, h, w = x.shape
        if c != self.arch.in_channels:
            raise ShapeError(f"forward: {c} input channels, model expects {self.arch.in_channels}")
        if self.arch.task == "seg":
            div = 2 ** len(self.arch.widths)
            if h % div or w % div:
                raise ShapeError(f"segmenter input spatial dims must be divisible by {div}, "
                                 f"got {(h, w)}")
            z = self._encode(x)
            for i in range(len(self.arch.widths)):
                z = T.relu(T.conv2d(T.upsample2x(z), self.params[f"dec{i}.w"],
                                    self.params[f"dec{i}.b"], stride=1,
                                    padding=self.arch.kernel // 2))
            return T.conv2d(z, self.params["head.w"], self.params["head.b"])
        if self.arch.task == "cls":
            z = T.global_mean_pool(self._encode(x))
            return T.linear(z, self.params["head.w"], self.params["head.b"])
        # disc: three stride-2 convs, pool, single logit per image
        z = x
        for i in range(3):
            z = T.relu(T.conv2d(z, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"],
                                stride=2, padding=self.arch.kernel // 2))
        z = T.global_mean_pool(z)
        out = T.linear(z, self.params["head.w"], self.params["head.b"])
        return _squeeze_last(out)


def _squeeze_last(t: Tensor) -> Tensor:
    """[N,1] -> [N] with gradient support."""
    n = t.shape[0]
    return T._make(t.data.reshape(n), (t,), lambda g: (g.reshape(n, 1),))


@dataclass
class DiscriminatorParams(ModelParams):
    """Binary domain classifier over probability maps, with the
    gradient-reversal scale used by the adversarial objective."""
    lam_grl: float = 1.0


def build_segmenter(arch: ArchSpec, rng: np.random.Generator) -> ModelParams:
    """Encoder-decoder segmenter; parameters drawn in definition order."""
    arch.validate()
    if arch.task != "seg":
        raise ConfigError(f"build_segmenter got arch.task={arch.task!r}")
    m = ModelParams(arch)
    cin = arch.in_channels
    for i, wdt in enumerate(arch.widths):
        m.params[f"enc{i}.w"], m.params[f"enc{i}.b"] = _he_conv(rng, wdt, cin, arch.kernel)
        cin = wdt
    dec_widths = list(arch.widths[::-1][1:]) + [arch.widths[0]]
    for i, wdt in enumerate(dec_widths):
        m.params[f"dec{i}.w"], m.params[f"dec{i}.b"] = _he_conv(rng, wdt, cin, arch.kernel)
        cin = wdt
    m.params["head.w"], m.params["head.b"] = _he_conv(rng, arch.num_classes, cin, 1)
    return m


def build_classifier(arch: ArchSpec, rng: np.random.Generator) -> ModelParams:
    arch.validate()
    if arch.task != "cls":
        raise ConfigError(f"build_classifier got arch.task={arch.task!r}")
    m = ModelParams(arch)
    cin = arch.in_channels
    for i, wdt in enumerate(arch.widths):
        m.params[f"enc{i}.w"], m.params[f"enc{i}.b"] = _he_conv(rng, wdt, cin, arch.kernel)
        cin = wdt
    fan_in = cin
    m.params["head.w"] = T.Tensor(
        rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cin, arch.num_classes)),
        requires_grad=True)
    m.params["head.b"] = T.Tensor(np.zeros(arch.num_classes), requires_grad=True)
    return m


def build_discriminator(num_classes: int, rng: np.random.Generator,
                        lam_grl: float = 1.0,
                        widths: tuple = (16, 32, 32)) -> DiscriminatorParams:
    """Domain discriminator consuming [N, num_classes, H, W] softmax maps."""
    if len(widths) != 3:
        raise ConfigError(f"discriminator uses exactly 3 conv stages, got {len(widths)}")
    arch = ArchSpec(task="disc", in_channels=num_classes, widths=tuple(widths),
                    num_classes=2, kernel=3)
    m = DiscriminatorParams(arch, lam_grl=float(lam_grl))
    cin = num_classes
    for i, wdt in enumerate(widths):
        m.params[f"enc{i}.w"], m.params[f"enc{i}.b"] = _he_conv(rng, wdt, cin, 3)
        cin = wdt
    m.params["head.w"] = T.Tensor(
        rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, 1)), requires_grad=True)
    m.params["head.b"] = T.Tensor(np.zeros(1), requires_grad=True)
    return m
