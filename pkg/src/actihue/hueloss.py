"""Angular class labels and the combined one-hot + hue loss.

Each class owns a point on the unit circle. A 2-D prediction is scored against
every class point by ``d_k = ||label_k - pred|| / (2M)``; the hue term is the
cross-entropy of ``softmax(-d)`` at the true class. All math is float64.
"""

from dataclasses import dataclass

import numpy as np

from . import seeding
from .errors import BadClassCount

LABEL_MODES = ("equally_spaced", "random_permutation", "random_angles")
KINK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AngularLabelSet:
    labels: np.ndarray  # (M, 2) unit points
    mode: str
    seed: int

    @property
    def M(self) -> int:
        return self.labels.shape[0]

    @property
    def angles(self) -> np.ndarray:
        return np.arctan2(self.labels[:, 1], self.labels[:, 0])


def assign_labels(M: int, mode: str = "random_permutation", seed: int = 0) -> AngularLabelSet:
    if M < 2:
        raise BadClassCount(f"need at least 2 classes, got {M}")
    if mode == "equally_spaced":
        theta = 2 * np.pi * np.arange(M) / M
    elif mode == "random_permutation":
        perm = seeding.stream(seed, seeding.LABELS).permutation(M)
        theta = 2 * np.pi * perm / M
    elif mode == "random_angles":
        theta = seeding.stream(seed, seeding.LABELS).uniform(0.0, 2 * np.pi, size=M)
    else:
        raise ValueError(f"unknown label mode {mode!r}")
    labels = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    labels.setflags(write=False)
    return AngularLabelSet(labels, mode, int(seed))


def dtheta_all(labels: AngularLabelSet, prediction) -> np.ndarray:
    """Scaled distance from ``prediction`` to every class label, shape ``(M,)``."""
    diff = labels.labels - np.asarray(prediction, dtype=np.float64)
    return np.hypot(diff[:, 0], diff[:, 1]) / (2 * labels.M)


def dtheta(labels: AngularLabelSet, prediction, c: int) -> float:
    return float(dtheta_all(labels, prediction)[c])


def logsumexp(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(x - m).sum(axis=axis))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _project(pred):
    """Radial projection onto the unit circle and its Jacobian (batched)."""
    r = np.linalg.norm(pred, axis=-1, keepdims=True)
    unit = pred / r
    jac = (np.eye(2) - unit[..., :, None] * unit[..., None, :]) / r[..., None]
    return unit, jac


def hue_loss_batch(labels: AngularLabelSet, predictions, targets, project=False):
    """Per-sample hue loss values and gradients w.r.t. the predictions.

    ``predictions`` is ``(B, 2)``, ``targets`` is ``(B,)``.
    """
    pred = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    M = labels.M
    if project:
        pred, jac = _project(pred)
    diff = pred[:, None, :] - labels.labels[None, :, :]  # (B, M, 2)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    d = dist / (2 * M)
    rows = np.arange(pred.shape[0])
    value = d[rows, targets] + logsumexp(-d, axis=1)
    dL_dd = -softmax(-d, axis=1)
    dL_dd[rows, targets] += 1.0
    safe = np.where(dist < KINK_TOL, np.inf, dist)
    dd_dpred = diff / (2 * M * safe[..., None])  # subgradient 0 at a label
    grad = (dL_dd[..., None] * dd_dpred).sum(axis=1)
    if project:
        grad = np.einsum("bij,bi->bj", jac, grad)
    return value, grad


def hue_loss(labels: AngularLabelSet, prediction, true_class: int, project=False):
    value, grad = hue_loss_batch(labels, np.asarray(prediction)[None, :], [true_class], project)
    return float(value[0]), grad[0]


def onehot_loss_batch(logits, targets):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    rows = np.arange(logits.shape[0])
    value = logsumexp(logits, axis=1) - logits[rows, targets]
    grad = softmax(logits, axis=1)
    grad[rows, targets] -= 1.0
    return value, grad


@dataclass(frozen=True, eq=False)
class LossBreakdown:
    one_hot_term: float
    hue_term: float
    total: float
    grad_logits: np.ndarray
    grad_prediction: np.ndarray


def combined_loss(logits, labels: AngularLabelSet, prediction, true_class: int,
                  hue_weight=1.0, project=False) -> LossBreakdown:
    oh, g_logits = onehot_loss_batch(np.asarray(logits)[None, :], [true_class])
    hue, g_pred = hue_loss(labels, prediction, true_class, project)
    one_hot_term = float(oh[0])
    hue_term = hue_weight * hue
    return LossBreakdown(one_hot_term, hue_term, one_hot_term + hue_term, g_logits[0], hue_weight * g_pred)


def batch_loss(logits, predictions, targets, labels: AngularLabelSet, use_hue=True,
               hue_weight=1.0, project=False):
    """Mean combined loss over a batch, with gradients of that mean.

    Returns ``(total, one_hot_mean, hue_mean, grad_logits, grad_predictions)``.
    Per-sample terms are reduced in sample order.
    """
    B = np.atleast_2d(logits).shape[0]
    oh, g_logits = onehot_loss_batch(logits, targets)
    oh_mean = float(oh.sum() / B)
    if use_hue:
        hv, g_pred = hue_loss_batch(labels, predictions, targets, project)
        hue_mean = float(hue_weight * hv.sum() / B)
        g_pred = hue_weight * g_pred / B
    else:
        hue_mean = 0.0
        g_pred = np.zeros((B, 2))
    return oh_mean + hue_mean, oh_mean, hue_mean, g_logits / B, g_pred


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def relative_error(a, b, floor=1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradcheck(trials=200, seed=0, classes=None, mode="equally_spaced", h=1e-6, exclusion=1e-4,
              project=False) -> dict:
    """Analytic vs central-difference gradients of the hue loss.

    ``classes=None`` draws M uniformly from [2, 10] per trial. Predictions are
    uniform on [-2, 2]^2, redrawn while within ``exclusion`` of any label.
    """
    rng = seeding.stream(seed, seeding.GRADCHECK)
    worst = 0.0
    rows = []
    for t in range(trials):
        M = int(classes) if classes else int(rng.integers(2, 11))
        labels = assign_labels(M, mode, seed=int(rng.integers(2**31)))
        while True:
            pred = rng.uniform(-2.0, 2.0, size=2)
            if np.min(np.linalg.norm(labels.labels - pred, axis=1)) > exclusion:
                break
        c = int(rng.integers(M))
        _, g = hue_loss(labels, pred, c, project)
        g_fd = central_difference(lambda p: hue_loss(labels, p, c, project)[0], pred, h)
        err = relative_error(g, g_fd)
        worst = max(worst, err)
        rows.append({"trial": t, "M": M, "true_class": c, "relative_error": err})
    return {"trials": trials, "seed": seed, "mode": mode, "h": h, "max_relative_error": worst, "per_trial": rows}
