"""Loss, metrics, the training loop, and the two fine-tuning strategies."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .arch import (MULTI_LABEL, SINGLE_LABEL, build_model, section_ordinal,
                   transplant_unet_to_munet, transplant_unet_to_unet)
from .errors import ConfigError, DataError, NumericError
from .optim import adam_step
from .validation import check_batch_for_model, check_mask_batch


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    precision: str = "float32"
    dice_epsilon: float = 1.0
    val_fraction: float = 0.2
    threshold: float = 0.5
    # per-section learning rate multipliers, flow order; None -> (k/n)^2 default
    section_lr_multipliers: tuple | None = None
    # ordered (sections_to_freeze, epochs) phases; None -> strategy default
    freeze_schedule: tuple | None = None

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.section_lr_multipliers is not None:
            if any(m < 0 for m in self.section_lr_multipliers):
                raise ConfigError("learning rate multipliers must be nonnegative")
        if self.freeze_schedule is not None:
            for phase in self.freeze_schedule:
                _, n_epochs = phase
                if n_epochs < 1:
                    raise ConfigError("every freeze phase must cover >= 1 epoch")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


@dataclass
class EvalReport:
    """Evaluation summary; also carries per-epoch training history."""

    per_class_iou: list | None = None
    mean_iou: float | None = None
    dice_loss: float | None = None
    event_precision: float | None = None
    event_recall: float | None = None
    # rows of (epoch, train_loss, val_loss, val_iou); val fields NaN if unused
    history: list = field(default_factory=list)
    best_epoch: int | None = None
    final_state: dict | None = None

    def to_dict(self):
        out = {
            "per_class_iou": None if self.per_class_iou is None
            else [float(v) for v in self.per_class_iou],
            "mean_iou": self.mean_iou,
            "dice_loss": self.dice_loss,
            "best_epoch": self.best_epoch,
            "history": [
                {"epoch": e, "train_loss": tl, "val_loss": vl, "val_iou": vi}
                for e, tl, vl, vi in self.history
            ],
        }
        if self.event_precision is not None:
            out["event_precision"] = self.event_precision
            out["event_recall"] = self.event_recall
        return out


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------

def soft_dice_loss(probs, target, eps=1.0):
    """Soft Dice loss and its gradient with respect to the probabilities.

    loss = 1 - mean over (batch, class) of (2*sum(p*g) + eps)/(sum p + sum g + eps),
    sums taken over time. Exact binary agreement gives loss 0 because the
    epsilon cancels. Returns (loss, dprobs).
    """
    probs = np.asarray(probs)
    target = np.asarray(target, dtype=probs.dtype)
    if probs.shape != target.shape:
        raise DataError(f"probs shape {probs.shape} != target shape {target.shape}")
    inter = (probs * target).sum(axis=1)
    num = 2.0 * inter + eps
    den = probs.sum(axis=1) + target.sum(axis=1) + eps
    dice = num / den
    loss = 1.0 - dice.mean()
    scale = 1.0 / dice.size
    dprobs = -scale * (2.0 * target * den[:, None, :] - num[:, None, :]) / den[:, None, :] ** 2
    return float(loss), dprobs


def iou_per_class(pred_mask, true_mask):
    """Intersection over union per class; empty-union classes score 1.0.

    Leading axes are flattened: any of (L, K), (B, L, K) works as long as the
    two masks agree in shape.
    """
    pred_mask = np.asarray(pred_mask).astype(bool)
    true_mask = np.asarray(true_mask).astype(bool)
    if pred_mask.shape != true_mask.shape:
        raise DataError(f"mask shapes differ: {pred_mask.shape} vs {true_mask.shape}")
    k = pred_mask.shape[-1]
    p = pred_mask.reshape(-1, k)
    t = true_mask.reshape(-1, k)
    inter = (p & t).sum(axis=0).astype(np.float64)
    union = (p | t).sum(axis=0).astype(np.float64)
    return np.where(union > 0, inter / np.maximum(union, 1), 1.0)


def mean_iou(pred_mask, true_mask):
    """Mean IoU over classes, excluding classes absent from both masks.

    If every class is absent everywhere the score is defined as 1.0.
    """
    pred_mask = np.asarray(pred_mask).astype(bool)
    true_mask = np.asarray(true_mask).astype(bool)
    k = pred_mask.shape[-1]
    union = (pred_mask.reshape(-1, k) | true_mask.reshape(-1, k)).sum(axis=0)
    per_class = iou_per_class(pred_mask, true_mask)
    present = union > 0
    if not present.any():
        return 1.0
    return float(per_class[present].mean())


def binarize_probs(probs, label_mode, threshold=0.5):
    """Probabilities -> per-class binary masks over the anomaly classes.

    Multi-label output thresholds each channel; single-label output takes the
    argmax over the M+1 channels and drops the trailing nominal column.
    """
    probs = np.asarray(probs)
    if label_mode == MULTI_LABEL:
        return (probs >= threshold).astype(np.uint8)
    winners = probs.argmax(axis=-1)
    m = probs.shape[-1] - 1
    out = np.zeros(probs.shape[:-1] + (m,), dtype=np.uint8)
    for k in range(m):
        out[..., k] = winners == k
    return out


def prepare_target(y, label_mode, dtype):
    """Mask batch -> training target; single-label gains a nominal column."""
    y = np.asarray(y)
    if label_mode == MULTI_LABEL:
        return y.astype(dtype)
    nominal = 1 - y.max(axis=-1, keepdims=True)
    return np.concatenate([y, nominal], axis=-1).astype(dtype)


def event_precision_recall(pred_events, true_events):
    """Event-level precision/recall by same-class interval overlap."""
    def overlaps(a, b):
        return a.class_id == b.class_id and a.start <= b.end and b.start <= a.end

    if not pred_events and not true_events:
        return 1.0, 1.0
    matched_pred = sum(1 for p in pred_events if any(overlaps(p, t) for t in true_events))
    matched_true = sum(1 for t in true_events if any(overlaps(t, p) for p in pred_events))
    precision = matched_pred / len(pred_events) if pred_events else 1.0
    recall = matched_true / len(true_events) if true_events else 1.0
    return precision, recall


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _forward_in_batches(model, x, batch_size=32, train=False):
    outs = [model.forward(x[i : i + batch_size], train=train)
            for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def evaluate(model, x, y, *, dice_epsilon=1.0, threshold=0.5, batch_size=32):
    """Infer-mode metrics of a model on a labeled dataset."""
    x = check_batch_for_model(x, model.spec)
    y = check_mask_batch(y, n=len(x), length=model.spec.input_length)
    if y.shape[2] != model.spec.classes:
        raise DataError(f"mask classes {y.shape[2]} != model classes {model.spec.classes}")
    probs = _forward_in_batches(model, x, batch_size=batch_size, train=False)
    target = prepare_target(y, model.spec.label_mode, probs.dtype)
    loss, _ = soft_dice_loss(probs, target, eps=dice_epsilon)
    pred = binarize_probs(probs, model.spec.label_mode, threshold)
    per_class = iou_per_class(pred, y)
    return EvalReport(per_class_iou=list(map(float, per_class)),
                      mean_iou=mean_iou(pred, y), dice_loss=loss)


def train(model, x, y, config: TrainConfig, x_val=None, y_val=None):
    """Seeded minibatch training with Adam on the soft Dice loss.

    When validation data exists (passed in, or split off via
    config.val_fraction) the best-validation-IoU weights are restored into
    the model at the end; the final-epoch state stays available in
    ``report.final_state``. Deterministic given (data, config.seed).
    """
    x = check_batch_for_model(x, model.spec, dtype=model.dtype)
    y = check_mask_batch(y, n=len(x), length=model.spec.input_length)
    if len(x) == 0:
        raise DataError("training dataset is empty")
    if y.shape[2] != model.spec.classes:
        raise DataError(f"mask classes {y.shape[2]} != model classes {model.spec.classes}")

    rng = np.random.default_rng(config.seed)
    if x_val is None and config.val_fraction > 0 and len(x) >= 4:
        n_val = max(1, int(round(config.val_fraction * len(x))))
        n_val = min(n_val, len(x) - 1)
        perm = rng.permutation(len(x))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        x_val, y_val = x[val_idx], y[val_idx]
        x, y = x[train_idx], y[train_idx]

    target = prepare_target(y, model.spec.label_mode, model.dtype)
    report = EvalReport()
    best_iou, best_state, best_epoch = -1.0, None, None
    params = model.params()

    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            probs = model.forward(x[idx], train=True)
            loss, dprobs = soft_dice_loss(probs, target[idx], eps=config.dice_epsilon)
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {i // config.batch_size} "
                    f"(base_lr={config.base_lr}); reduce the learning rate")
            model.zero_grads()
            model.backward(dprobs)
            adam_step(params, config.base_lr, config.beta1, config.beta2, config.eps)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss, val_iou = float("nan"), float("nan")
        if x_val is not None and len(x_val):
            val_report = evaluate(model, x_val, y_val,
                                  dice_epsilon=config.dice_epsilon,
                                  threshold=config.threshold)
            val_loss, val_iou = val_report.dice_loss, val_report.mean_iou
            if val_iou > best_iou:
                best_iou, best_state, best_epoch = val_iou, model.get_state(), epoch
        report.history.append((epoch, train_loss, val_loss, val_iou))

    report.final_state = model.get_state()
    if best_state is not None:
        model.set_state(best_state)
        report.best_epoch = best_epoch
        report.mean_iou = best_iou
        val_report = evaluate(model, x_val, y_val,
                              dice_epsilon=config.dice_epsilon,
                              threshold=config.threshold)
        report.per_class_iou = val_report.per_class_iou
        report.dice_loss = val_report.dice_loss
    return report


# ---------------------------------------------------------------------------
# fine-tuning strategies
# ---------------------------------------------------------------------------

def default_multipliers(n_sections: int) -> tuple:
    """Quadratic ramp (k/n)^2 over flow-ordered sections; final section 1.0."""
    return tuple((k / n_sections) ** 2 for k in range(1, n_sections + 1))


def set_section_lr_multipliers(model, multipliers):
    """Assign one learning-rate multiplier per flow-ordered section."""
    n = model.spec.n_sections
    multipliers = tuple(float(m) for m in multipliers)
    if len(multipliers) != n:
        raise ConfigError(
            f"need {n} multipliers for this architecture "
            f"({model.spec.depth} encoding, {model.spec.depth - 1} decoding, "
            f"1 output section), got {len(multipliers)}")
    for sec_name, params in model.section_map().items():
        mult = multipliers[section_ordinal(sec_name, model.spec.depth) - 1]
        for p in params:
            p.lr_multiplier = mult


def _transplanted(pretrained, classes, label_mode, target_kind, channels, seed):
    spec = pretrained.spec
    if target_kind == "munet":
        if channels is None or channels < 2:
            raise ConfigError("munet target requires channels >= 2")
        target = replace(spec, kind="munet", channels=channels,
                         classes=classes, label_mode=label_mode)
        return transplant_unet_to_munet(pretrained, target, seed=seed)
    target = replace(spec, classes=classes, label_mode=label_mode)
    return transplant_unet_to_unet(pretrained, target, seed=seed)


def finetune_multipliers(pretrained, x, y, config: TrainConfig, *,
                         label_mode=MULTI_LABEL, target_kind="unet",
                         channels=None):
    """Transplant the head, ramp per-section learning rates, train.

    Default multipliers follow the quadratic sequence 0.01, 0.04, ...,
    0.81, 1.0 over the 10 flow-ordered sections of the default architecture.
    """
    y = check_mask_batch(y)
    model = _transplanted(pretrained, y.shape[2], label_mode, target_kind,
                          channels, config.seed)
    mults = config.section_lr_multipliers or default_multipliers(model.spec.n_sections)
    set_section_lr_multipliers(model, mults)
    report = train(model, x, y, config)
    return model, report


def default_freeze_schedule(kind: str, depth: int, epochs: int) -> tuple:
    """Per-architecture staged unfreezing.

    Plain model: freeze the first two encoding sections, then tune all.
    Multivariate model: freeze all per-channel encoder sections, then keep
    only the first two frozen, then tune everything.
    """
    if epochs < 1:
        return ()
    if kind == "munet":
        e1 = max(1, round(epochs * 0.4))
        e2 = max(1, round(epochs * 0.3))
        e3 = max(1, epochs - e1 - e2)
        all_enc = tuple(f"enc{f}" for f in range(1, depth))
        return ((all_enc, e1), (("enc1", "enc2"), e2), ((), e3))
    e1 = max(1, round(epochs / 3))
    e2 = max(1, epochs - e1)
    return ((("enc1", "enc2"), e1), ((), e2))


def finetune_freeze(pretrained, x, y, config: TrainConfig, *,
                    label_mode=MULTI_LABEL, target_kind="unet", channels=None):
    """Transplant, then train through an ordered freeze/unfreeze schedule.

    Frozen parameters are bit-unchanged during their phase; batch-norm
    running statistics keep updating throughout (they are statistics, not
    weights).
    """
    y = check_mask_batch(y)
    model = _transplanted(pretrained, y.shape[2], label_mode, target_kind,
                          channels, config.seed)
    schedule = config.freeze_schedule
    if schedule is None:
        schedule = default_freeze_schedule(model.spec.kind, model.spec.depth,
                                           config.epochs)
    report = EvalReport()
    for frozen_sections, phase_epochs in schedule:
        model.unfreeze_all()
        if frozen_sections:
            model.set_frozen(tuple(frozen_sections), True)
        phase_config = replace(config, epochs=int(phase_epochs), freeze_schedule=None)
        phase_report = train(model, x, y, phase_config)
        offset = len(report.history)
        report.history.extend(
            (offset + e, tl, vl, vi) for e, tl, vl, vi in phase_report.history)
        report.per_class_iou = phase_report.per_class_iou
        report.mean_iou = phase_report.mean_iou
        report.dice_loss = phase_report.dice_loss
        report.best_epoch = phase_report.best_epoch
        report.final_state = phase_report.final_state
    model.unfreeze_all()
    if not schedule:
        report = train(model, x, y, config)
    return model, report
