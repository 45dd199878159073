"""Training loop, stratified k-fold harness and the one-hot vs one-hot+hue comparison."""

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .. import seeding
from ..errors import ConfigError, NonFiniteLoss
from ..hueloss import LABEL_MODES, assign_labels, batch_loss
from .optim import Adam, cosine_lr
from .tinynet import TinyNet

LOSS_MODES = ("onehot", "onehot_hue")
BACKBONE_NOTE = (
    "TinyNet (2 conv blocks, 32-dim bottleneck) stands in for ResNet-18/EfficientNet-B0; "
    "results compare loss mechanisms at desk scale and are not comparable to full-scale benchmarks."
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lr_min: float = 0.0
    seed: int = 0
    loss_mode: str = "onehot_hue"
    label_mode: str = "random_permutation"
    folds: int = 5
    hflip: bool = True
    random_crop_pad: int = 2
    hue_weight: float = 1.0
    project_prediction: bool = False
    hue_hidden: int = 0

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0 or self.lr_min < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {LABEL_MODES}")
        if self.folds == 1 or self.folds < 0:
            raise ConfigError("folds must be 0 (no cross-validation) or >= 2")
        if self.random_crop_pad < 0:
            raise ConfigError("random_crop_pad must be >= 0")


def stratified_folds(labels, k, seed=0):
    """Fold index per sample; each class is dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    rng = seeding.stream(seed, seeding.FOLDS)
    assign = np.empty(labels.shape[0], dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.shape[0])]
        assign[idx] = (offset + np.arange(idx.shape[0])) % k
        offset += idx.shape[0]
    return assign


def hflip(images):
    return images[:, :, ::-1, :]


def augment(images, rng, do_flip=True, pad=0):
    """Random horizontal flip (p=0.5) and zero-pad-then-crop, per sample."""
    B, H, W, _ = images.shape
    out = images.copy()
    flips = rng.random(B) < 0.5 if do_flip else np.zeros(B, dtype=bool)
    out[flips] = hflip(out[flips])
    if pad:
        padded = np.pad(out, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        dy = rng.integers(0, 2 * pad + 1, size=B)
        dx = rng.integers(0, 2 * pad + 1, size=B)
        for i in range(B):
            out[i] = padded[i, dy[i] : dy[i] + H, dx[i] : dx[i] + W]
    return out


def predict(net, images, batch=256):
    logits, hue = [], []
    for s in range(0, images.shape[0], batch):
        lo, hu, _ = net.forward(images[s : s + batch])
        logits.append(lo)
        hue.append(hu)
    return np.concatenate(logits), np.concatenate(hue)


def accuracies(net, images, targets, labels):
    """One-hot head accuracy and hue-head nearest-label accuracy."""
    if images.shape[0] == 0:
        return None, None
    logits, hue = predict(net, images)
    acc = float(np.mean(logits.argmax(axis=1) == targets))
    d = np.linalg.norm(hue[:, None, :] - labels.labels[None], axis=-1)
    hue_acc = float(np.mean(d.argmin(axis=1) == targets))
    return acc, hue_acc


def fit(images, targets, classes, config: TrainConfig, fold=0, net=None):
    """Train one TinyNet; returns ``(net, labels, epoch_losses, hue_grad_seen)``."""
    labels = assign_labels(classes, config.label_mode, config.seed)
    if net is None:
        net = TinyNet(images.shape[-1], classes, hue_hidden=config.hue_hidden, seed=config.seed)
    opt = Adam()
    use_hue = config.loss_mode == "onehot_hue"
    n = images.shape[0]
    epoch_losses = []
    hue_grad_seen = False
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)
        order = seeding.stream(config.seed, seeding.SHUFFLE, fold, epoch).permutation(n)
        aug_rng = seeding.stream(config.seed, seeding.AUGMENT, fold, epoch)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            x = augment(images[idx], aug_rng, config.hflip, config.random_crop_pad)
            logits, hue, cache = net.forward(x)
            loss, _, _, g_logits, g_hue = batch_loss(
                logits, hue, targets[idx], labels, use_hue, config.hue_weight, config.project_prediction
            )
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss} at fold {fold}, epoch {epoch}, batch start {s}")
            grads = net.backward(cache, g_logits, g_hue)
            if np.any(grads["hue.w"]):
                hue_grad_seen = True
            opt.step(net.params, grads, lr)
            net.mark_updated()
            total += loss * idx.shape[0]
        epoch_losses.append(total / n)
    return net, labels, epoch_losses, hue_grad_seen


@dataclass
class FoldResult:
    fold: int
    epoch_losses: list
    train_accuracy: float
    train_hue_accuracy: float
    val_accuracy: float = None
    val_hue_accuracy: float = None
    hue_grad_nonzero: bool = False


@dataclass
class TrainReport:
    config: dict
    n_params: int
    folds: list
    summary: dict
    note: str = BACKBONE_NOTE

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _as_arrays(dataset):
    images = np.asarray(dataset.images, dtype=np.float64)
    targets = np.asarray(dataset.labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise ConfigError("dataset is empty")
    return images, targets


def train(dataset, config: TrainConfig) -> TrainReport:
    """Train with ``config``; with ``folds >= 2`` run stratified cross-validation."""
    config.validate()
    images, targets = _as_arrays(dataset)
    classes = int(targets.max()) + 1
    results = []
    n_params = None
    if config.folds:
        counts = np.bincount(targets)
        if counts.min() < config.folds:
            raise ConfigError("every class needs at least one sample per fold")
        assign = stratified_folds(targets, config.folds, config.seed)
        splits = [(np.flatnonzero(assign != f), np.flatnonzero(assign == f)) for f in range(config.folds)]
    else:
        splits = [(np.arange(targets.shape[0]), np.empty(0, dtype=np.int64))]
    for f, (tr, va) in enumerate(splits):
        net, labels, losses, seen = fit(images[tr], targets[tr], classes, config, fold=f)
        n_params = net.n_params
        acc, hacc = accuracies(net, images[tr], targets[tr], labels)
        vacc, vhacc = accuracies(net, images[va], targets[va], labels)
        results.append(FoldResult(f, losses, acc, hacc, vacc, vhacc, seen))
    vals = [r.val_accuracy for r in results if r.val_accuracy is not None]
    summary = {
        "train_accuracy_mean": float(np.mean([r.train_accuracy for r in results])),
        "val_accuracy_mean": float(np.mean(vals)) if vals else None,
        "val_accuracy_sd": float(np.std(vals)) if vals else None,
        "hue_grad_nonzero": any(r.hue_grad_nonzero for r in results),
    }
    return TrainReport(asdict(config), n_params, [asdict(r) for r in results], summary)


def compare(dataset, config: TrainConfig, seeds=(0, 1, 2, 3, 4), modes=LOSS_MODES) -> dict:
    """Cross-validated comparison of loss modes across seeds.

    For each mode and seed the fold-mean validation accuracy is computed; the
    table reports mean and sample standard deviation of those over seeds.
    """
    if not config.folds:
        raise ConfigError("comparison needs folds >= 2")
    runs = {}
    table = {}
    for mode in modes:
        per_seed = []
        runs[mode] = {}
        for s in seeds:
            rep = train(dataset, replace(config, loss_mode=mode, seed=int(s)))
            runs[mode][str(s)] = rep.to_dict()
            per_seed.append(rep.summary["val_accuracy_mean"])
        table[mode] = {
            "mean": float(np.mean(per_seed)),
            "sd": float(np.std(per_seed, ddof=1)) if len(per_seed) > 1 else 0.0,
            "per_seed": per_seed,
        }
    return {
        "config": asdict(config),
        "seeds": [int(s) for s in seeds],
        "table": table,
        "hue_grad_nonzero": any(
            r["summary"]["hue_grad_nonzero"] for r in runs.get("onehot_hue", {}).values()
        ),
        "runs": runs,
        "note": BACKBONE_NOTE,
    }
