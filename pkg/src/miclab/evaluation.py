"""Confusion-matrix metrics and the context-sensitivity probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, RangeError, ShapeError

__all__ = ["ConfusionMatrix", "miou", "accuracy", "predict_batched",
           "context_probe", "ProbeResult"]


class ConfusionMatrix:
    """C x C counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int):
        if num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred).reshape(-1)
        gt = np.asarray(gt).reshape(-1)
        if pred.shape != gt.shape:
            raise ShapeError(f"pred size {pred.shape} != gt size {gt.shape}")
        c = self.num_classes
        if pred.min() < 0 or pred.max() >= c or gt.min() < 0 or gt.max() >= c:
            raise ShapeError(f"labels outside [0, {c})")
        self.counts += np.bincount(gt * c + pred, minlength=c * c).reshape(c, c)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.num_classes != self.num_classes:
            raise ShapeError("confusion matrices of different class counts")
        self.counts += other.counts

    def iou(self) -> np.ndarray:
        """Per-class IoU; NaN marks classes absent from both GT and pred."""
        diag = np.diag(self.counts).astype(np.float64)
        gt_tot = self.counts.sum(axis=1).astype(np.float64)
        pr_tot = self.counts.sum(axis=0).astype(np.float64)
        union = gt_tot + pr_tot - diag
        out = np.full(self.num_classes, np.nan)
        present = union > 0
        out[present] = diag[present] / union[present]
        return out

    def mean_iou(self) -> float:
        per = self.iou()
        if np.all(np.isnan(per)):
            return float("nan")
        return float(np.nanmean(per))


def _collect_pairs(preds, gts, num_classes) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes)
    preds = preds if isinstance(preds, (list, tuple)) else [preds]
    gts = gts if isinstance(gts, (list, tuple)) else [gts]
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    for p, g in zip(preds, gts):
        cm.update(p, g)
    return cm


def miou(preds, gts, num_classes: int) -> tuple[float, np.ndarray]:
    """Mean IoU over all classes present in GT or predictions.

    Classes absent from both are excluded from the mean (their per-class
    entry is NaN).  accepts single maps or lists of maps; a batched
    [N,H,W] array also works.
    """
    cm = _collect_pairs(preds, gts, num_classes)
    return cm.mean_iou(), cm.iou()


def accuracy(preds, gts, num_classes: int) -> tuple[float, float]:
    """(overall fraction correct, mean per-class recall).

    The per-class mean covers only classes that appear in the ground
    truth.
    """
    cm = _collect_pairs(preds, gts, num_classes)
    total = cm.counts.sum()
    overall = float(np.diag(cm.counts).sum() / total) if total else float("nan")
    gt_tot = cm.counts.sum(axis=1)
    present = gt_tot > 0
    recalls = np.diag(cm.counts)[present] / gt_tot[present]
    per_class_mean = float(recalls.mean()) if present.any() else float("nan")
    return overall, per_class_mean


def predict_batched(model, images: np.ndarray, batch: int = 32) -> np.ndarray:
    """Argmax predictions for a stack of images, forward passes chunked
    to keep memory flat.  Seg gives [N,H,W] labels, cls gives [N]."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ShapeError(f"predict_batched expects [N,C,H,W], got {images.shape}")
    if batch < 1:
        raise RangeError(f"batch must be >= 1, got {batch}")
    preds = []
    for lo in range(0, images.shape[0], batch):
        with T.no_grad():
            logits = model.forward(T.Tensor(images[lo:lo + batch])).data
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds) if preds else np.empty((0,), dtype=np.int64)


@dataclass
class ProbeResult:
    mean_iou: float
    per_class: np.ndarray
    confusion: ConfusionMatrix
    patch: int


def context_probe(model, images: np.ndarray, labels: np.ndarray,
                  patch: int | None = None, batch: int = 32) -> ProbeResult:
    """How well a model predicts what it cannot see.

    For every non-overlapping patch x patch window of every image, the
    window is zeroed, the model runs on the occluded image, and only the
    predictions inside the window are scored against the ground truth
    there.  All windows pool into one global confusion matrix (micro
    aggregation).  ``patch`` defaults to half the image height.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim != 4 or labels.ndim != 3 or images.shape[0] != labels.shape[0] \
            or images.shape[-2:] != labels.shape[-2:]:
        raise ShapeError(f"probe expects images [N,C,H,W] and labels [N,H,W], "
                         f"got {images.shape} and {labels.shape}")
    n, _, h, w = images.shape
    if patch is None:
        patch = h // 2
    if patch < 1 or h % patch or w % patch:
        raise ShapeError(f"image dims {(h, w)} not divisible by probe patch {patch}")
    num_classes = model.arch.num_classes
    cm = ConfusionMatrix(num_classes)
    for wi in range(h // patch):
        for wj in range(w // patch):
            rs, cs = wi * patch, wj * patch
            occluded = images.copy()
            occluded[:, :, rs:rs + patch, cs:cs + patch] = 0.0
            for lo in range(0, n, batch):
                hi = min(lo + batch, n)
                with T.no_grad():
                    logits = model.forward(T.Tensor(occluded[lo:hi])).data
                pred = np.argmax(logits, axis=1)
                cm.update(pred[:, rs:rs + patch, cs:cs + patch],
                          labels[lo:hi, rs:rs + patch, cs:cs + patch])
    return ProbeResult(mean_iou=cm.mean_iou(), per_class=cm.iou(), confusion=cm,
                       patch=patch)
