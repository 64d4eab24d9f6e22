"""Patch masks, photometric augmentation, and cross-domain class mixing.

These transforms operate on plain numpy arrays (images are [3,H,W]
float64 in [0,1], labels are [H,W] integer maps): they prepare network
inputs, so no gradients flow through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, RangeError, ShapeError

__all__ = ["PatchMask", "AugParams", "sample_patch_mask", "apply_mask",
           "color_augment", "class_mix"]


@dataclass
class PatchMask:
    """A patch-aligned binary keep-mask.

    ``mask`` is [H,W] float64 with values in {0.0, 1.0}; 1 keeps a pixel,
    0 zeroes it.  ``cell_draws`` records the raw uniform draw behind each
    patch cell so a mask can be audited or replayed.
    """
    mask: np.ndarray
    patch: int
    ratio: float
    cell_draws: np.ndarray


def sample_patch_mask(height: int, width: int, patch: int, ratio: float,
                      rng: np.random.Generator) -> PatchMask:
    """Sample a mask on a (height/patch) x (width/patch) cell grid.

    Each cell gets one uniform draw v in [0,1) taken in row-major cell
    order; the cell keeps its pixels iff v > ratio, so the expected
    masked fraction is exactly ``ratio``.  The mask is constant within
    each patch cell.  ratio=0 keeps (almost surely) everything and
    ratio=1 masks everything.
    """
    if not (0.0 <= ratio <= 1.0):
        raise ConfigError(f"mask ratio must be in [0, 1], got {ratio}")
    if patch < 1:
        raise ConfigError(f"patch size must be >= 1, got {patch}")
    if height % patch or width % patch:
        raise ShapeError(f"image dims {(height, width)} not divisible by patch {patch}")
    draws = rng.random((height // patch, width // patch))
    cells = (draws > ratio).astype(np.float64)
    mask = np.repeat(np.repeat(cells, patch, axis=0), patch, axis=1)
    return PatchMask(mask=mask, patch=patch, ratio=float(ratio), cell_draws=draws)


def apply_mask(image: np.ndarray, mask: PatchMask | np.ndarray) -> np.ndarray:
    """Elementwise multiply: masked pixels become exactly 0.0, kept
    pixels are bit-identical to the input.  image is [C,H,W] (or [H,W])."""
    m = mask.mask if isinstance(mask, PatchMask) else np.asarray(mask)
    image = np.asarray(image, dtype=np.float64)
    if image.shape[-2:] != m.shape:
        raise ShapeError(f"mask shape {m.shape} does not match image spatial dims "
                         f"{image.shape[-2:]}")
    return image * m


@dataclass(frozen=True)
class AugParams:
    """Photometric augmentation ranges.

    brightness: additive shift drawn from [-brightness, +brightness];
    contrast / saturation: factors drawn from the given (lo, hi);
    hue: rotation drawn from [-hue, +hue] in turns;
    blur: Gaussian blur with sigma ~ U(0, blur_sigma), applied with
    probability blur_prob.
    """
    enabled: bool = True
    brightness: float = 0.2
    contrast: tuple = (0.75, 1.25)
    saturation: tuple = (0.75, 1.25)
    hue: float = 0.05
    blur_sigma: float = 1.0
    blur_prob: float = 0.5

    def validate(self):
        if self.brightness < 0 or self.hue < 0 or self.blur_sigma < 0:
            raise ConfigError("augmentation ranges must be non-negative")
        for name, rng_ in (("contrast", self.contrast), ("saturation", self.saturation)):
            if len(rng_) != 2 or rng_[0] > rng_[1] or rng_[0] < 0:
                raise ConfigError(f"aug.{name} must be (lo, hi) with 0 <= lo <= hi")
        if not (0.0 <= self.blur_prob <= 1.0):
            raise ConfigError("aug.blur_prob must be in [0, 1]")


def color_augment(image: np.ndarray, params: AugParams,
                  rng: np.random.Generator) -> np.ndarray:
    """Randomized photometric jitter for a [3,H,W] image in [0,1].

    Draw order is fixed (brightness shift, contrast factor, saturation
    factor, hue shift, blur coin, blur sigma: six draws per call, always
    consumed when enabled) so downstream streams never shift when ranges
    change.  Sub-steps whose drawn value is exactly neutral are skipped,
    which makes degenerate ranges a bit-exact identity.  Values are
    clamped back to [0,1]; geometry and labels are never touched.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"color_augment expects [3,H,W], got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise RangeError(f"image values outside [0,1]: min={image.min()}, max={image.max()}")
    if not params.enabled:
        return image.copy()
    params.validate()

    shift = rng.uniform(-params.brightness, params.brightness)
    fc = rng.uniform(params.contrast[0], params.contrast[1])
    fs = rng.uniform(params.saturation[0], params.saturation[1])
    dh = rng.uniform(-params.hue, params.hue)
    coin = rng.uniform()
    sigma = rng.uniform(0.0, params.blur_sigma)

    out = image.copy()
    if shift != 0.0:
        out = out + shift
    if fc != 1.0:
        mean = out.mean()
        out = mean + fc * (out - mean)
    if fs != 1.0:
        gray = out.mean(axis=0, keepdims=True)
        out = gray + fs * (out - gray)
    out = np.clip(out, 0.0, 1.0)
    if dh != 0.0:
        hsv = rgb_to_hsv(out.transpose(1, 2, 0))
        hsv[..., 0] = (hsv[..., 0] + dh) % 1.0
        out = hsv_to_rgb(hsv).transpose(2, 0, 1)
    if coin < params.blur_prob and sigma > 0.0:
        out = np.stack([gaussian_filter(out[c], sigma, mode="nearest") for c in range(3)])
    return np.clip(out, 0.0, 1.0)


def class_mix(source_image: np.ndarray, source_label: np.ndarray,
              target_image: np.ndarray, target_pl: np.ndarray,
              target_weight: float, rng: np.random.Generator):
    """Paste half the source classes onto a target scene.

    Selects ceil(K/2) of the K classes present in ``source_label`` (one
    ``rng.permutation`` over the ascending class list; the first half is
    taken) and copies their source pixels onto the target image and onto
    the target pseudo-label.  Returns (image, label, weight) where the
    pixel weight map is 1 on pasted source pixels and ``target_weight``
    elsewhere.
    """
    source_image = np.asarray(source_image, dtype=np.float64)
    target_image = np.asarray(target_image, dtype=np.float64)
    source_label = np.asarray(source_label)
    target_pl = np.asarray(target_pl)
    if source_image.shape != target_image.shape or source_label.shape != target_pl.shape \
            or source_image.shape[-2:] != source_label.shape:
        raise ShapeError(f"class_mix: inconsistent shapes image={source_image.shape} vs "
                         f"{target_image.shape}, label={source_label.shape} vs {target_pl.shape}")
    present = np.unique(source_label)
    k = len(present)
    pick = math.ceil(k / 2)
    chosen = rng.permutation(present)[:pick]
    paste = np.isin(source_label, chosen)
    mixed_image = np.where(paste[None, :, :], source_image, target_image)
    mixed_label = np.where(paste, source_label, target_pl)
    weight = np.where(paste, 1.0, float(target_weight))
    return mixed_image, mixed_label.astype(np.int64), weight
