"""Pseudo-labels, their quality estimates, and controlled corruption."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, NumericsError, ShapeError, UnsupportedError

__all__ = ["PseudoLabel", "make_pseudo_label", "pseudo_label_seg", "quality_seg",
           "quality_cls", "inject_pl_noise"]

# 4-connectivity: label-map segments touch only through edges
_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class PseudoLabel:
    """A predicted label map (or scalar class) with its quality weight.

    ``quality`` is the confident-pixel fraction for segmentation and the
    max softmax probability for classification, both in [0, 1].
    """
    labels: np.ndarray
    quality: float
    source: str = "teacher"
    threshold: float | None = None


def make_pseudo_label(probs: np.ndarray, tau: float | None = None,
                      source: str = "teacher") -> PseudoLabel:
    """Bundle argmax labels and quality for one prediction.

    [C,H,W] probabilities give a segmentation pseudo-label (``tau``
    required); [C] gives a classification one (``tau`` ignored, quality
    is the max probability).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 3:
        if tau is None:
            raise ConfigError("segmentation pseudo-labels need a tau threshold")
        return PseudoLabel(labels=pseudo_label_seg(probs),
                           quality=float(quality_seg(probs, tau)),
                           source=source, threshold=tau)
    if probs.ndim == 1:
        if not np.all(np.abs(probs.sum() - 1.0) <= 1e-6):
            raise NumericsError("make_pseudo_label: probabilities must sum to 1")
        return PseudoLabel(labels=np.int64(np.argmax(probs)),
                           quality=float(quality_cls(probs)),
                           source=source, threshold=None)
    raise ShapeError(f"make_pseudo_label: expected [C,H,W] or [C], got {probs.shape}")


def _check_probs(probs, opname):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim not in (3, 4):
        raise ShapeError(f"{opname}: expected [C,H,W] or [N,C,H,W], got {probs.shape}")
    caxis = 0 if probs.ndim == 3 else 1
    sums = probs.sum(axis=caxis)
    if not np.all(np.abs(sums - 1.0) <= 1e-6):
        raise NumericsError(f"{opname}: per-pixel probabilities must sum to 1 "
                            f"(worst deviation {np.max(np.abs(sums - 1.0)):.3e})")
    return probs, caxis


def pseudo_label_seg(probs: np.ndarray) -> np.ndarray:
    """Per-pixel argmax labels; ties go to the lowest class index."""
    probs, caxis = _check_probs(probs, "pseudo_label_seg")
    return np.argmax(probs, axis=caxis).astype(np.int64)


def quality_seg(probs: np.ndarray, tau: float) -> float | np.ndarray:
    """Fraction of pixels whose max probability strictly exceeds tau.

    Scalar for [C,H,W]; an [N] vector for batched input.
    """
    if not (0.0 < tau < 1.0):
        raise ConfigError(f"tau must be in (0, 1), got {tau}")
    probs, caxis = _check_probs(probs, "quality_seg")
    conf = probs.max(axis=caxis) > tau
    if probs.ndim == 3:
        return float(conf.mean())
    return conf.mean(axis=(1, 2))


def quality_cls(probs: np.ndarray) -> float | np.ndarray:
    """Maximum softmax probability (scalar for [C], vector for [N,C])."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim not in (1, 2):
        raise ShapeError(f"quality_cls: expected [C] or [N,C], got {probs.shape}")
    caxis = probs.ndim - 1
    sums = probs.sum(axis=caxis)
    if not np.all(np.abs(sums - 1.0) <= 1e-6):
        raise NumericsError("quality_cls: probabilities must sum to 1")
    mx = probs.max(axis=caxis)
    return float(mx) if probs.ndim == 1 else mx


def inject_pl_noise(labels: np.ndarray, noise_frac: float, num_classes: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Relabel a fraction of the label map's connected segments.

    Segments are maximal 4-connected regions of equal label, enumerated
    in (class value ascending, region id ascending) order.  Exactly
    round-half-up(noise_frac * #segments) of them are chosen without
    replacement and each gets a uniformly drawn class different from its
    own, so noise_frac=1 changes every segment.  Draw order: one
    ``rng.choice`` for the segment subset, then one integer draw per
    chosen segment in enumeration order.  Returns (new labels, number of
    segments relabeled); quality estimates are not touched.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise UnsupportedError("inject_pl_noise operates on 2-d segmentation label maps; "
                               "classification pseudo-labels have no segments")
    if not (0.0 <= noise_frac <= 1.0):
        raise ConfigError(f"noise_frac must be in [0, 1], got {noise_frac}")
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ConfigError(f"labels outside [0, {num_classes})")

    segments = []  # (class value, boolean mask)
    for value in np.unique(labels):
        comp, n = ndimage.label(labels == value, structure=_FOUR)
        for i in range(1, n + 1):
            segments.append((int(value), comp == i))
    total = len(segments)
    count = int(np.floor(noise_frac * total + 0.5))  # round half up
    out = labels.copy()
    if count == 0:
        return out, 0
    chosen = np.sort(rng.choice(total, size=count, replace=False))
    for idx in chosen:
        value, mask = segments[idx]
        draw = int(rng.integers(0, num_classes - 1))
        new_value = draw + 1 if draw >= value else draw
        out[mask] = new_value
    return out, count
