"""Adaptation objectives and the training loop.

A run always minimizes a labeled cross-entropy term plus optional
unlabeled terms:

    total = L_labeled + lambda_t * L_host_target + lambda_m * L_masked

``L_labeled`` is plain cross-entropy on the labeled batch (source
domain, or target for the supervised-comparison host).  ``L_host_target``
is the host method's own unlabeled-target term (entropy, adversarial
confusion, or mixed self-training).  ``L_masked`` is the masked
consistency term: a frozen-copy teacher, updated as an exponential
moving average of the student after every optimizer step, predicts
pseudo-labels on the clean target image; the student sees the same
image with a patch mask applied (after photometric jitter) and is
trained to reproduce the teacher's labels, each image weighted by the
teacher's confidence.

All losses are pure functions of (models, batch, rng streams) so they
can be oracle-tested in isolation; the loop just sums them and steps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericsError, ShapeError
from .masking import AugParams, apply_mask, class_mix, color_augment, sample_patch_mask
from .models import ArchSpec, DiscriminatorParams, ModelParams, build_classifier, \
    build_discriminator, build_segmenter
from .pseudolabel import inject_pl_noise, pseudo_label_seg, quality_cls, quality_seg
from .rng import STREAM_IDS, get_state, set_state, stream_bundle
from .tensor import Tensor

__all__ = ["MicConfig", "LossWeights", "EmaTeacher", "SgdMomentum", "TrainState",
           "ema_update", "source_loss", "entropy_loss", "mic_loss",
           "adversarial_losses", "self_training_loss", "total_objective",
           "train", "evaluate_model", "default_arch", "init_state", "lr_at",
           "state_payload", "state_from_payload", "HOSTS", "CLS_HOSTS"]

HOSTS = ("source_only", "entropy_min", "adversarial", "self_training",
         "supervised_target")
CLS_HOSTS = ("source_only", "entropy_min", "supervised_target")


@dataclass
class MicConfig:
    """Masked-consistency settings.

    ``mask_domains`` selects which domains get a masked branch; the
    target branch learns from teacher pseudo-labels, the source branch
    from ground truth.  ``loss_region`` restricts the consistency loss
    to hidden patches ("masked"), visible ones ("unmasked"), or every
    pixel ("all").  ``use_ema_teacher``/``use_quality_weight`` exist for
    ablations: off means the student labels its own masked input / all
    images weigh 1.
    """
    enabled: bool = True
    patch: int = 8
    ratio: float = 0.7
    mask_domains: tuple = ("target",)
    loss_region: str = "all"
    use_color_aug: bool = True
    alpha: float = 0.95
    tau: float = 0.968
    use_ema_teacher: bool = True
    use_quality_weight: bool = True

    def validate(self):
        if self.patch < 1:
            raise ConfigError(f"mic.patch must be >= 1, got {self.patch}")
        if not (0.0 <= self.ratio <= 1.0):
            raise ConfigError(f"mic.ratio must be in [0, 1], got {self.ratio}")
        doms = tuple(self.mask_domains)
        if not doms or any(d not in ("source", "target") for d in doms):
            raise ConfigError(f"mic.mask_domains must be a non-empty subset of "
                              f"('source', 'target'), got {self.mask_domains!r}")
        if self.loss_region not in ("masked", "unmasked", "all"):
            raise ConfigError(f"mic.loss_region must be masked|unmasked|all, "
                              f"got {self.loss_region!r}")
        if not (0.0 <= self.alpha < 1.0):
            raise ConfigError(f"mic.alpha must be in [0, 1), got {self.alpha}")
        if not (0.0 < self.tau < 1.0):
            raise ConfigError(f"mic.tau must be in (0, 1), got {self.tau}")


@dataclass
class LossWeights:
    lambda_t: float = 1.0   # host's own unlabeled-target term
    lambda_m: float = 1.0   # masked consistency term

    def validate(self):
        if self.lambda_t < 0 or self.lambda_m < 0:
            raise ConfigError(f"loss weights must be >= 0, got "
                              f"lambda_t={self.lambda_t}, lambda_m={self.lambda_m}")


# ----------------------------------------------------------- teacher

def ema_update(teacher: ModelParams, student: ModelParams, alpha: float) -> None:
    """teacher <- alpha * teacher + (1 - alpha) * student, in place.

    Call after the optimizer step.  alpha=0 copies the student.
    """
    if not (0.0 <= alpha < 1.0):
        raise ConfigError(f"ema alpha must be in [0, 1), got {alpha}")
    for name, p in student.named():
        tp = teacher.params.get(name)
        if tp is None or tp.data.shape != p.data.shape:
            raise ShapeError(f"ema_update: parameter {name!r} missing or mismatched")
        tp.data = alpha * tp.data + (1.0 - alpha) * p.data


class EmaTeacher:
    """Frozen copy of the student, tracking it by exponential moving
    average.  The copy is taken at construction (update 0)."""

    def __init__(self, student: ModelParams, alpha: float):
        if not (0.0 <= alpha < 1.0):
            raise ConfigError(f"ema alpha must be in [0, 1), got {alpha}")
        self.model = student.clone(requires_grad=False)
        self.alpha = float(alpha)
        self.update_count = 0

    def update(self, student: ModelParams) -> None:
        ema_update(self.model, student, self.alpha)
        self.update_count += 1


# ----------------------------------------------------------- optimizer

class SgdMomentum:
    """SGD with classical momentum: v <- mu*v + g; p <- p - lr*v."""

    def __init__(self, named_params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ConfigError(f"lr must be > 0, got {lr}")
        if not (0.0 <= momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        self.params = dict(named_params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.vel = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self.momentum * self.vel[name] + p.grad
            self.vel[name] = v
            p.data = p.data - self.lr * v

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: v.copy() for name, v in self.vel.items()}

    def load_state_dict(self, state: dict) -> None:
        for name in self.vel:
            if name not in state:
                raise ConfigError(f"optimizer state missing velocity for {name!r}")
            if state[name].shape != self.vel[name].shape:
                raise ShapeError(f"optimizer velocity {name!r}: shape "
                                 f"{state[name].shape} != {self.vel[name].shape}")
            self.vel[name] = state[name].copy()


# ------------------------------------------------------------- losses

def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ConfigError(f"labels outside [0, {num_classes})")
    oh = np.eye(num_classes, dtype=np.float64)[labels]
    if labels.ndim >= 1:
        oh = np.moveaxis(oh, -1, 1) if labels.ndim >= 2 else oh
    return oh


def _teacher_probs(model: ModelParams, images: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return T.softmax(model.forward(Tensor(images))).data


def source_loss(model: ModelParams, images: np.ndarray, labels: np.ndarray) -> Tensor:
    """Plain cross-entropy on a labeled batch."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        raise ConfigError("source_loss: empty batch")
    probs = T.softmax(model.forward(Tensor(images)))
    return T.cross_entropy(probs, _onehot(labels, model.arch.num_classes))


def entropy_loss(model: ModelParams, images: np.ndarray) -> Tensor:
    """Mean per-prediction entropy of the model's output distribution,
    normalized by ln(num_classes) so the value lives in [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        raise ConfigError("entropy_loss: empty batch")
    probs = T.softmax(model.forward(Tensor(images)))
    c = model.arch.num_classes
    count = probs.data.size // c  # predictions = batch (cls) or batch*H*W (seg)
    plogp = T.mul(probs, T.log(probs))
    return T.scale(T.tsum(plogp), -1.0 / (count * np.log(c)))


def _mask_region(mask_batch: np.ndarray, loss_region: str):
    if loss_region == "all":
        return None
    if loss_region == "masked":
        return 1.0 - mask_batch
    return mask_batch


def _masked_branch(student, images, labels_onehot, quality, cfg: MicConfig,
                   rngs, aug_params: AugParams):
    """Shared student-side pipeline: jitter, mask, forward, weighted CE."""
    n = images.shape[0]
    h, w = images.shape[-2:]
    out_imgs = np.empty_like(images)
    masks = np.empty((n, h, w))
    for i in range(n):
        x = images[i]
        if cfg.use_color_aug:
            x = color_augment(x, aug_params, rngs["aug"])
        pm = sample_patch_mask(h, w, cfg.patch, cfg.ratio, rngs["mask"])
        out_imgs[i] = apply_mask(x, pm)
        masks[i] = pm.mask
    probs = T.softmax(student.forward(Tensor(out_imgs)))
    region = None
    if student.arch.task == "seg":
        region = _mask_region(masks, cfg.loss_region)
    ce = T.cross_entropy_per_image(probs, labels_onehot, region=region)
    return T.tmean(T.mul(ce, Tensor(np.asarray(quality, dtype=np.float64))))


def mic_loss(student: ModelParams, teacher: ModelParams | None,
             target_images: np.ndarray, cfg: MicConfig, rngs: dict,
             aug_params: AugParams | None = None,
             source_images: np.ndarray | None = None,
             source_labels: np.ndarray | None = None,
             teacher_probs: np.ndarray | None = None,
             pl_noise_frac: float = 0.0) -> Tensor:
    """Masked consistency loss.

    The teacher (the student itself when ``cfg.use_ema_teacher`` is off
    and ``teacher`` is None) predicts on the clean target image; the
    student predicts on the jittered, patch-masked one and is pulled
    toward the teacher's argmax labels, each image scaled by the
    fraction of teacher pixels above the confidence threshold.  With
    "source" in ``cfg.mask_domains`` an analogous term on source images
    uses ground-truth labels at weight 1; the returned loss is the sum
    of the enabled domain terms.  ``pl_noise_frac`` relabels that
    fraction of teacher label segments before the student sees them
    (corruption study; segmentation only).
    """
    cfg.validate()
    if aug_params is None:
        aug_params = AugParams()
    task = student.arch.task
    num_classes = student.arch.num_classes
    if task == "cls" and cfg.loss_region != "all":
        raise ConfigError("mic.loss_region applies to segmentation; use 'all' for cls")
    if not (0.0 <= pl_noise_frac <= 1.0):
        raise ConfigError(f"pl_noise_frac must be in [0, 1], got {pl_noise_frac}")
    if pl_noise_frac > 0 and task != "seg":
        raise ConfigError("pseudo-label noise injection needs segment maps (seg task)")
    doms = tuple(cfg.mask_domains)
    terms = []
    if "target" in doms:
        target_images = np.asarray(target_images, dtype=np.float64)
        if target_images.shape[0] == 0:
            raise ConfigError("mic_loss: empty target batch")
        if teacher_probs is None:
            teacher_probs = _teacher_probs(teacher if teacher is not None else student,
                                           target_images)
        if task == "seg":
            pl = pseudo_label_seg(teacher_probs)
            if pl_noise_frac > 0:
                pl = np.stack([inject_pl_noise(pl[i], pl_noise_frac, num_classes,
                                               rngs["plnoise"])[0]
                               for i in range(pl.shape[0])])
            q = quality_seg(teacher_probs, cfg.tau)
        else:
            pl = np.argmax(teacher_probs, axis=1)
            q = quality_cls(teacher_probs)
        if not cfg.use_quality_weight:
            q = np.ones(target_images.shape[0])
        terms.append(_masked_branch(student, target_images, _onehot(pl, num_classes),
                                    q, cfg, rngs, aug_params))
    if "source" in doms:
        if source_images is None or source_labels is None:
            raise ConfigError("mic.mask_domains includes 'source' but no labeled "
                              "source batch was given")
        source_images = np.asarray(source_images, dtype=np.float64)
        terms.append(_masked_branch(student, source_images,
                                    _onehot(source_labels, num_classes),
                                    np.ones(source_images.shape[0]), cfg, rngs,
                                    aug_params))
    loss = terms[0]
    for t in terms[1:]:
        loss = T.add(loss, t)
    return loss


def adversarial_losses(student: ModelParams, disc: DiscriminatorParams,
                       source_images: np.ndarray,
                       target_images: np.ndarray) -> tuple[float, Tensor]:
    """Domain-confusion objective with a gradient-reversal coupling.

    Returns ``(seg_side, disc_side)``.  The trainable scalar is
    ``disc_side``: the discriminator reads the student's softmax maps
    and is scored toward 1 on source / 0 on target, with a reversal
    layer between the two models scaling the gradient that reaches the
    student by ``-disc.lam_grl`` — one backward pass improves the
    discriminator while pushing the student toward
    domain-indistinguishable outputs.  ``seg_side`` is the detached
    monitor: binary CE of target maps against label 1, i.e. how
    source-like target predictions currently look (low = confused
    discriminator).  Minimizing seg_side directly would need the
    student gradient that the reversal already supplies with the
    correct sign; training it as a second objective would push the
    student the wrong way, hence monitor-only.
    """
    ps = T.softmax(student.forward(Tensor(np.asarray(source_images, dtype=np.float64))))
    pt = T.softmax(student.forward(Tensor(np.asarray(target_images, dtype=np.float64))))
    lam = disc.lam_grl
    d_src = disc.forward(T.grad_reverse(ps, lam))
    d_tgt = disc.forward(T.grad_reverse(pt, lam))
    disc_side = T.scale(T.add(T.bce_with_logits(d_src, 1.0),
                              T.bce_with_logits(d_tgt, 0.0)), 0.5)
    with T.no_grad():
        seg_side = float(T.bce_with_logits(disc.forward(Tensor(pt.data)), 1.0).data)
    return seg_side, disc_side


def self_training_loss(student: ModelParams, teacher: ModelParams,
                       source_images: np.ndarray, source_labels: np.ndarray,
                       target_images: np.ndarray, tau: float, rngs: dict,
                       aug_params: AugParams | None = None,
                       use_color_aug: bool = True,
                       use_quality_weight: bool = True,
                       teacher_probs: np.ndarray | None = None,
                       pl_noise_frac: float = 0.0) -> Tensor:
    """Mixed self-training: the i-th source and target images are
    combined by pasting half the source classes onto the target scene;
    the student is trained on the mixed image against the stitched
    label map, with target-side pixels weighted by the teacher's
    confidence for that image.  Segmentation only.
    """
    if student.arch.task != "seg":
        raise ConfigError("self_training_loss requires the segmentation task")
    source_images = np.asarray(source_images, dtype=np.float64)
    target_images = np.asarray(target_images, dtype=np.float64)
    n = source_images.shape[0]
    if n == 0 or target_images.shape[0] != n:
        raise ConfigError(f"self_training_loss pairs batches elementwise; got "
                          f"{n} source vs {target_images.shape[0]} target images")
    if aug_params is None:
        aug_params = AugParams()
    num_classes = student.arch.num_classes
    if teacher_probs is None:
        teacher_probs = _teacher_probs(teacher, target_images)
    pl = pseudo_label_seg(teacher_probs)
    if pl_noise_frac > 0:
        pl = np.stack([inject_pl_noise(pl[i], pl_noise_frac, num_classes,
                                       rngs["plnoise"])[0] for i in range(n)])
    q = quality_seg(teacher_probs, tau)
    if not use_quality_weight:
        q = np.ones(n)
    mixed = np.empty_like(target_images)
    labels = np.empty(pl.shape, dtype=np.int64)
    weights = np.empty(pl.shape, dtype=np.float64)
    for i in range(n):
        mi, ml, mw = class_mix(source_images[i], np.asarray(source_labels[i]),
                               target_images[i], pl[i], float(q[i]), rngs["mix"])
        if use_color_aug:
            mi = color_augment(mi, aug_params, rngs["aug"])
        mixed[i], labels[i], weights[i] = mi, ml, mw
    probs = T.softmax(student.forward(Tensor(mixed)))
    return T.cross_entropy(probs, _onehot(labels, num_classes), weight=weights)


# ------------------------------------------------------------ assembly

@dataclass
class TrainState:
    """Everything a training run carries between steps."""
    student: ModelParams
    teacher: EmaTeacher | None
    disc: DiscriminatorParams | None
    opt: SgdMomentum
    rngs: dict
    step: int = 0
    records: list = field(default_factory=list)


def _needs_teacher(config) -> bool:
    return (config.mic.enabled and config.mic.use_ema_teacher) \
        or config.host == "self_training"


def lr_at(base: float, step: int, total: int, power: float = 0.0) -> float:
    """Learning rate for 1-based ``step`` of ``total``: polynomial decay
    with exponent ``power`` (0 keeps it constant).  The last step keeps a
    nonzero rate."""
    if power <= 0:
        return base
    frac = (step - 1) / max(total, 1)
    return base * (1.0 - frac) ** power


def init_state(config, arch: ArchSpec) -> TrainState:
    """Fresh models, optimizer, and rng streams for a run."""
    rngs = stream_bundle(config.seed)
    if arch.task == "seg":
        student = build_segmenter(arch, rngs["init"])
    else:
        student = build_classifier(arch, rngs["init"])
    teacher = EmaTeacher(student, config.mic.alpha) if _needs_teacher(config) else None
    disc = None
    named = {f"student/{k}": v for k, v in student.named()}
    if config.host == "adversarial":
        disc = build_discriminator(arch.num_classes, rngs["init"],
                                   lam_grl=config.lam_grl)
        named.update({f"disc/{k}": v for k, v in disc.named()})
    opt = SgdMomentum(named, lr=config.lr, momentum=config.momentum)
    return TrainState(student=student, teacher=teacher, disc=disc, opt=opt, rngs=rngs)


def total_objective(config, state: TrainState, batch: dict) -> tuple[Tensor, dict]:
    """One step's scalar objective plus a per-term monitor dict.

    ``batch`` carries "source_images"/"source_labels" (the labeled
    batch; the target-labeled one for the supervised host) and
    "target_images".  Teacher predictions on the clean target batch are
    computed once and shared by every term that consumes them.
    """
    host = config.host
    w = config.weights
    parts = {}
    labeled = source_loss(state.student, batch["source_images"], batch["source_labels"])
    parts["loss/labeled"] = float(labeled.data)
    total = labeled

    tgt = batch.get("target_images")
    ema_probs = None
    if tgt is not None and state.teacher is not None and \
            ((config.mic.enabled and w.lambda_m > 0) or
             (host == "self_training" and w.lambda_t > 0)):
        ema_probs = _teacher_probs(state.teacher.model, tgt)

    # a zero-weight term is skipped outright (its rng streams do not
    # advance), making lambda=0 runs identical to disabled-term runs
    if host == "entropy_min" and w.lambda_t > 0:
        ent = entropy_loss(state.student, tgt)
        parts["loss/target"] = float(ent.data)
        total = T.add(total, T.scale(ent, w.lambda_t))
    elif host == "adversarial" and w.lambda_t > 0:
        seg_side, disc_side = adversarial_losses(state.student, state.disc,
                                                 batch["source_images"], tgt)
        parts["loss/target"] = float(disc_side.data)
        parts["adv/seg_side"] = seg_side
        total = T.add(total, T.scale(disc_side, w.lambda_t))
    elif host == "self_training" and w.lambda_t > 0:
        st = self_training_loss(state.student, state.teacher.model,
                                batch["source_images"], batch["source_labels"],
                                tgt, config.mic.tau, state.rngs,
                                aug_params=config.aug,
                                use_color_aug=config.mix_color_aug,
                                use_quality_weight=config.mic.use_quality_weight,
                                teacher_probs=ema_probs,
                                pl_noise_frac=config.pl_noise_frac)
        parts["loss/target"] = float(st.data)
        total = T.add(total, T.scale(st, w.lambda_t))

    if config.mic.enabled and w.lambda_m > 0:
        teacher_model = None
        probs_for_mic = None
        if config.mic.use_ema_teacher:
            teacher_model = state.teacher.model
            probs_for_mic = ema_probs
        mic = mic_loss(state.student, teacher_model, tgt, config.mic, state.rngs,
                       aug_params=config.aug,
                       source_images=batch["source_images"],
                       source_labels=batch["source_labels"],
                       teacher_probs=probs_for_mic,
                       pl_noise_frac=config.pl_noise_frac)
        parts["loss/mic"] = float(mic.data)
        if "target" in config.mic.mask_domains:
            ref = probs_for_mic
            if ref is None:
                ref = _teacher_probs(state.student, tgt)
            qfun = quality_seg if state.student.arch.task == "seg" else \
                (lambda p, _t: quality_cls(p))
            parts["mic/q_mean"] = float(np.mean(qfun(ref, config.mic.tau)))
        total = T.add(total, T.scale(mic, w.lambda_m))

    parts["loss/total"] = float(total.data)
    return total, parts


def evaluate_model(model: ModelParams, images: np.ndarray,
                   labels: np.ndarray, batch: int = 32) -> dict:
    """Metric rows for one split: mean IoU and per-class IoU for
    segmentation, overall and mean per-class accuracy for
    classification.  Keys are (metric, class) pairs."""
    from .evaluation import accuracy, miou, predict_batched
    preds = predict_batched(model, images, batch=batch)
    c = model.arch.num_classes
    out = {}
    if model.arch.task == "seg":
        mean, per = miou(preds, labels, c)
        out[("miou", "")] = mean
        for k in range(c):
            out[("iou", str(k))] = float(per[k])
    else:
        overall, per_mean = accuracy(preds, labels, c)
        out[("accuracy", "")] = overall
        out[("class_accuracy", "")] = per_mean
    return out


def _check_host(config, task: str):
    if config.host not in HOSTS:
        raise ConfigError(f"unknown host {config.host!r}; expected one of {HOSTS}")
    if task == "cls" and config.host not in CLS_HOSTS:
        raise ConfigError(f"host {config.host!r} is segmentation-only; "
                          f"cls supports {CLS_HOSTS}")


def default_arch(config, datasets: dict) -> ArchSpec:
    """ArchSpec implied by a config plus a loaded dataset.

    Class count comes from the dataset manifest when present, falling
    back to the labeled split's max label."""
    meta = datasets.get("__meta__")
    if meta and "spec" in meta:
        from .synthworlds import SceneSpec
        ncls = SceneSpec.from_dict(meta["spec"]).num_classes
    else:
        key = "target/train" if config.host == "supervised_target" else "source/train"
        sp = datasets.get(key)
        if sp is None or sp.labels is None:
            raise ConfigError("cannot infer num_classes: no manifest and no labels")
        ncls = int(np.max(sp.labels)) + 1
    return ArchSpec(task=config.task, widths=tuple(config.widths),
                    num_classes=ncls, kernel=config.kernel)


def train(config, datasets: dict, arch: ArchSpec | None = None,
          start_state: TrainState | None = None,
          on_eval: Callable | None = None,
          on_checkpoint: Callable | None = None) -> TrainState:
    """Run (or resume) a training loop.

    ``datasets`` maps split names to objects with ``.images`` and
    ``.labels``; the supervised-comparison host needs unsealed target
    train labels.  Metric rows accumulate on ``state.records`` as dicts
    with keys (step, split, metric, cls, value); ``on_eval`` receives
    each new batch of rows, ``on_checkpoint`` the state at every
    evaluation point and at the end.  Resuming from a checkpointed
    state continues the exact same trajectory: optimizer velocities,
    teacher, and every rng stream are part of the state.
    """
    config.validate()
    if arch is None:
        arch = default_arch(config, datasets)
    _check_host(config, arch.task)
    if config.pl_noise_frac > 0 and arch.task != "seg":
        raise ConfigError("pl_noise_frac applies to the segmentation task")

    if config.host == "supervised_target":
        lab_split = datasets.get("target/train")
        if lab_split is None or lab_split.labels is None:
            raise ConfigError("supervised_target needs unsealed target/train labels; "
                              "load the dataset with unseal_target_train=True")
    else:
        lab_split = datasets.get("source/train")
        if lab_split is None or lab_split.labels is None:
            raise ConfigError("missing labeled split source/train")
    tgt_split = datasets.get("target/train")
    if tgt_split is None:
        raise ConfigError("missing split target/train")

    state = start_state if start_state is not None else init_state(config, arch)
    n_lab = lab_split.images.shape[0]
    n_tgt = tgt_split.images.shape[0]
    data_rng = state.rngs["data"]

    def run_eval(step):
        rows = []
        for split_name in config.eval_splits:
            sp = datasets.get(split_name)
            if sp is None or sp.labels is None:
                raise ConfigError(f"eval split {split_name!r} missing or unlabeled")
            with T.no_grad():
                metrics = evaluate_model(state.student, sp.images, sp.labels)
            for (metric, cls), value in metrics.items():
                rows.append({"step": step, "split": split_name, "metric": metric,
                             "cls": cls, "value": value})
        for key, val in sorted(running.items()):
            rows.append({"step": step, "split": "train", "metric": key, "cls": "",
                         "value": val / max(running_n, 1)})
        state.records.extend(rows)
        if on_eval is not None:
            on_eval(step, rows)
        return rows

    running: dict = {}
    running_n = 0
    while state.step < config.steps:
        state.step += 1
        li = data_rng.integers(0, n_lab, size=config.batch_source)
        ti = data_rng.integers(0, n_tgt, size=config.batch_target)
        batch = {"source_images": lab_split.images[li],
                 "source_labels": lab_split.labels[li],
                 "target_images": tgt_split.images[ti]}
        total, parts = total_objective(config, state, batch)
        if not np.isfinite(total.data):
            raise NumericsError(f"non-finite objective at step {state.step}: {parts}")
        T.backward(total)
        state.opt.lr = lr_at(config.lr, state.step, config.steps,
                             config.lr_power)
        state.opt.step()
        state.opt.zero_grad()
        T.reset_graph()
        if state.teacher is not None:
            state.teacher.update(state.student)
        for key, val in parts.items():
            running[key] = running.get(key, 0.0) + val
        running_n += 1
        at_eval = (config.eval_interval > 0 and state.step % config.eval_interval == 0)
        if at_eval or state.step == config.steps:
            run_eval(state.step)
            running, running_n = {}, 0
            if on_checkpoint is not None:
                on_checkpoint(state)
    return state


# -------------------------------------------------- state (de)serialization

def state_payload(state: TrainState, config_dict: dict, arch: ArchSpec) -> tuple[dict, dict]:
    """Split a TrainState into (json-able meta, name -> array blocks)."""
    blocks = {}
    for name, p in state.student.named():
        blocks[f"student/{name}"] = p.data
    if state.teacher is not None:
        for name, p in state.teacher.model.named():
            blocks[f"teacher/{name}"] = p.data
    if state.disc is not None:
        for name, p in state.disc.named():
            blocks[f"disc/{name}"] = p.data
    for name, v in state.opt.state_dict().items():
        blocks[f"vel/{name}"] = v
    meta = {
        "kind": "train_state",
        "step": state.step,
        "config": config_dict,
        "arch": arch.to_dict(),
        "teacher": None if state.teacher is None else {
            "alpha": state.teacher.alpha, "update_count": state.teacher.update_count},
        "disc": None if state.disc is None else {"lam_grl": state.disc.lam_grl},
        "rng": {name: get_state(g) for name, g in state.rngs.items()},
    }
    return meta, blocks


def state_from_payload(meta: dict, blocks: dict, config, arch: ArchSpec) -> TrainState:
    """Rebuild a TrainState saved by ``state_payload``.

    ``config``/``arch`` must describe the same run shape the checkpoint
    was written with; array shapes are re-validated on load.
    """
    state = init_state(config, arch)
    for name, p in state.student.named():
        key = f"student/{name}"
        if key not in blocks:
            raise ConfigError(f"checkpoint missing block {key!r}")
        p.data = blocks[key].copy()
    if state.teacher is not None:
        info = meta.get("teacher")
        if info is None:
            raise ConfigError("checkpoint has no teacher but the config needs one")
        state.teacher.alpha = float(info["alpha"])
        state.teacher.update_count = int(info["update_count"])
        for name, p in state.teacher.model.named():
            p.data = blocks[f"teacher/{name}"].copy()
    if state.disc is not None:
        for name, p in state.disc.named():
            p.data = blocks[f"disc/{name}"].copy()
    state.opt.load_state_dict({name[4:]: arr for name, arr in blocks.items()
                               if name.startswith("vel/")})
    for name, g in state.rngs.items():
        set_state(g, meta["rng"][name])
    state.step = int(meta["step"])
    return state
