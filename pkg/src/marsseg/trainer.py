"""Training loop, evaluation and checkpoint assembly."""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import Checkpoint, restore_model, save_checkpoint
from .config import TrainConfig
from .data import SegmentationSample, augment, load_manifest, oversample_samples
from .errors import ConfigError, DataError, NonFiniteLossError
from .losses import IGNORE_INDEX, ClassWeightState, combined_loss, update_class_weights
from .metrics import ConfusionMatrix, EvalReport
from .network import MarsSegNet
from .optim import OptimState, sgd_step
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: MarsSegNet
    checkpoint: Checkpoint
    history: List[Dict] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)
    train_samples: List[SegmentationSample] = field(default_factory=list)
    val_samples: List[SegmentationSample] = field(default_factory=list)


def stack_batch(samples: Sequence[SegmentationSample], dtype=np.float32):
    images = np.stack([s.image for s in samples]).astype(dtype, copy=False)
    masks = np.stack([s.mask for s in samples])
    return Tensor(images), masks


def predict_logits(model: MarsSegNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode logits for an ``[N,3,H,W]`` array; restores the previous mode."""
    was_training = model.training
    model.eval()
    try:
        outs = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                outs.append(model(Tensor(images[i : i + batch_size])).data)
        return np.concatenate(outs)
    finally:
        model.train(was_training)


def evaluate(
    model_or_ckpt: Union[MarsSegNet, Checkpoint],
    samples: Sequence[SegmentationSample],
    class_names: Optional[Sequence[str]] = None,
    batch_size: int = 8,
) -> EvalReport:
    """Eval-mode forward, argmax and confusion accumulation over ``samples``."""
    if isinstance(model_or_ckpt, Checkpoint):
        model = MarsSegNet(model_or_ckpt.config.network)
        restore_model(model_or_ckpt, model)
    else:
        model = model_or_ckpt
    n = model.config.num_classes
    if class_names is not None and len(class_names) != n:
        raise ConfigError(f"model predicts {n} classes but {len(class_names)} class names were given")
    conf = ConfusionMatrix(n)
    groups: Dict[tuple, List[SegmentationSample]] = OrderedDict()
    for s in samples:
        valid = s.mask[s.mask != IGNORE_INDEX]
        if valid.size and valid.max() >= n:
            raise ConfigError(f"sample {s.id} has class id {int(valid.max())} but model has {n} classes")
        groups.setdefault(s.mask.shape, []).append(s)
    for group in groups.values():
        images = np.stack([s.image for s in group])
        logits = predict_logits(model, images, batch_size)
        conf.update(logits.argmax(axis=1), np.stack([s.mask for s in group]))
    return EvalReport.from_confusion(conf, class_names)


def split_validation(samples: Sequence[SegmentationSample], fraction: float, seed: int):
    samples = list(samples)
    if fraction <= 0 or len(samples) < 2:
        return samples, []
    n_val = min(max(1, int(round(fraction * len(samples)))), len(samples) - 1)
    perm = np.random.default_rng([seed, 7919]).permutation(len(samples))
    val_idx = set(perm[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def _param_norms(model: MarsSegNet) -> Dict[str, float]:
    return {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}


def make_checkpoint(config, model, optim, weight_state, epoch, step, history) -> Checkpoint:
    hist = {}
    if history:
        hist["epoch"] = np.array([h["epoch"] for h in history], dtype=np.float64)
        hist["train_loss"] = np.array([h["train_loss"] for h in history], dtype=np.float64)
        hist["val_miou"] = np.array([h.get("val_miou", np.nan) for h in history], dtype=np.float64)
    return Checkpoint(
        config=config,
        model=OrderedDict((k, v.copy()) for k, v in model.state_dict().items()),
        optim=OptimState(optim.lr, optim.momentum, optim.weight_decay, [v.copy() for v in optim.velocity]),
        weight_state=ClassWeightState(weight_state.weights.copy(), weight_state.source_iou.copy(), weight_state.alpha),
        epoch=epoch,
        step=step,
        seed=config.train.seed,
        history=hist,
    )


def write_history_csv(path, history: Sequence[Dict], class_names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_miou"] + [f"iou_{n}" for n in class_names])
        for h in history:
            ious = h.get("val_iou")
            row = [h["epoch"], f"{h['train_loss']:.8f}", "" if "val_miou" not in h else f"{h['val_miou']:.6f}"]
            row += ["" if ious is None or np.isnan(v) else f"{v:.6f}" for v in (ious if ious is not None else [np.nan] * len(class_names))]
            writer.writerow(row)


def train(
    config: TrainConfig,
    samples: Optional[Sequence[SegmentationSample]] = None,
    class_names: Optional[Sequence[str]] = None,
    resume: Optional[Checkpoint] = None,
    val_samples: Optional[Sequence[SegmentationSample]] = None,
) -> TrainResult:
    """Run the optimization loop.

    Each epoch visits the training entries in an order fixed by
    ``(seed, epoch)``; every ``validate_every`` epochs the model is evaluated,
    class weights are refreshed from per-class IoU (when adaptive weights are
    on) and a checkpoint is written. Passing ``resume`` continues from a
    checkpoint and reproduces the uninterrupted trajectory.
    """
    sched = config.train
    n = config.network.num_classes
    if samples is None:
        if not config.data.root:
            raise ConfigError("data.root is not set and no samples were given")
        manifest = load_manifest(config.data.root, split_ratio=config.data.split_ratio, seed=sched.seed)
        samples = manifest.samples("train")
        class_names = class_names or manifest.class_names
    samples = list(samples)
    if not samples:
        raise DataError("training split is empty")
    class_names = list(class_names) if class_names is not None else [f"class_{k}" for k in range(n)]
    if len(class_names) != n:
        raise ConfigError(f"network has {n} classes but the dataset defines {len(class_names)}")

    if val_samples is not None:
        train_set, val_set = samples, list(val_samples)
    elif sched.val_source == "train":
        train_set, val_set = samples, samples
    else:
        train_set, val_set = split_validation(samples, config.data.val_fraction, sched.seed)
        if not val_set:
            val_set = train_set
    pool = train_set
    aug = config.augment
    if aug.rare_class_id is not None and aug.rare_factor > 1:
        pool = oversample_samples(train_set, aug.rare_class_id, aug.rare_factor)

    model = MarsSegNet(config.network, seed=sched.seed)
    params = model.parameters()
    optim = OptimState.for_params(params, config.optim)
    weight_state = ClassWeightState.uniform(n, config.loss.alpha)
    start_epoch, step = 0, 0
    history: List[Dict] = []
    if resume is not None:
        restore_model(resume, model)
        optim = OptimState(resume.optim.lr, resume.optim.momentum, resume.optim.weight_decay,
                           [v.copy() for v in resume.optim.velocity])
        weight_state = ClassWeightState(resume.weight_state.weights.copy(),
                                        resume.weight_state.source_iou.copy(), resume.weight_state.alpha)
        start_epoch, step = resume.epoch, resume.step
        for i, e in enumerate(resume.history.get("epoch", [])):
            h = {"epoch": int(e), "train_loss": float(resume.history["train_loss"][i])}
            if not np.isnan(resume.history["val_miou"][i]):
                h["val_miou"] = float(resume.history["val_miou"][i])
            history.append(h)

    step_losses: List[float] = []
    ckpt = make_checkpoint(config, model, optim, weight_state, start_epoch, step, history)
    done = sched.max_steps is not None and step >= sched.max_steps
    epoch = start_epoch
    while epoch < sched.epochs and not done:
        model.train()
        order = np.random.default_rng([sched.seed, epoch]).permutation(len(pool))
        losses = []
        for b, start in enumerate(range(0, len(order), sched.batch_size)):
            idx = order[start : start + sched.batch_size]
            batch = [pool[i] for i in idx]
            if not aug.is_identity:
                batch = [augment(s, aug, np.random.default_rng([sched.seed, epoch, start + k]))
                         for k, s in enumerate(batch)]
            images, masks = stack_batch(batch)
            outputs = model.forward_deep(images)
            loss = combined_loss(outputs, masks, weight_state, config.loss)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b}",
                    epoch=epoch, batch=b, param_norms=_param_norms(model),
                )
            loss.backward()
            sgd_step(params, [p.grad for p in params], optim)
            model.zero_grad()
            losses.append(value)
            step_losses.append(value)
            step += 1
            if sched.max_steps is not None and step >= sched.max_steps:
                done = True
                break
        epoch += 1
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if epoch % sched.validate_every == 0 or done or epoch == sched.epochs:
            report = evaluate(model, val_set, class_names, sched.batch_size)
            record["val_miou"] = report.miou
            record["val_iou"] = report.iou
            if config.train.adaptive_weights:
                # classes absent from validation keep their previous IoU prior
                iou = np.where(np.isnan(report.iou), weight_state.source_iou, report.iou)
                weight_state = update_class_weights(iou, config.loss.alpha)
            logger.info("epoch %d step %d loss %.4f val mIoU %.4f", epoch, step, record["train_loss"], report.miou)
            history.append(record)
            ckpt = make_checkpoint(config, model, optim, weight_state, epoch, step, history)
            if sched.checkpoint:
                save_checkpoint(sched.checkpoint, ckpt)
        else:
            history.append(record)
    if sched.history:
        write_history_csv(sched.history, history, class_names)
    return TrainResult(model, ckpt, history, step_losses, class_names, list(train_set), list(val_set))
