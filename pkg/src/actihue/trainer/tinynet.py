"""A two-block convolutional net with hand-written backpropagation.

conv3x3(C_in->16) - relu - maxpool2 - conv3x3(16->32) - relu - maxpool2
- global average pool -> 32-dim bottleneck feeding two heads: class logits
(affine 32->M) and a 2-D hue prediction (affine, optionally with one hidden
ReLU layer). Tensors are NHWC float64; convolutions use zero "same" padding.
"""

from dataclasses import dataclass

import numpy as np

from .. import seeding
from ..errors import ShapeMismatch, StaleCache

CONV1 = 16
CONV2 = 32


def _pad(x):
    return np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))


def im2col(x):
    """(B, H, W, C) -> (B, H, W, 9C) patches of a padded 3x3 neighborhood."""
    B, H, W, C = x.shape
    xp = _pad(x)
    cols = [xp[:, dy : dy + H, dx : dx + W, :] for dy in range(3) for dx in range(3)]
    return np.concatenate(cols, axis=-1)


def col2im(dcols, C):
    B, H, W, _ = dcols.shape
    dxp = np.zeros((B, H + 2, W + 2, C))
    k = 0
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy : dy + H, dx : dx + W, :] += dcols[..., k * C : (k + 1) * C]
            k += 1
    return dxp[:, 1:-1, 1:-1, :]


def conv_forward(x, w, b):
    cols = im2col(x)
    return cols @ w.reshape(-1, w.shape[-1]) + b, cols


def conv_backward(dout, cols, w, C):
    F = w.shape[-1]
    dw = np.tensordot(cols, dout, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    dx = col2im(dout @ w.reshape(-1, F).T, C)
    return dx, dw, db


def pool_forward(x):
    B, H, W, C = x.shape
    h, w = H // 2, W // 2
    x = x[:, : 2 * h, : 2 * w, :]
    win = x.reshape(B, h, 2, w, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, h, w, C, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (arg, (B, H, W, C))


def pool_backward(dout, cache):
    arg, (B, H, W, C) = cache
    h, w = H // 2, W // 2
    dwin = np.zeros((B, h, w, C, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros((B, H, W, C))
    dx[:, : 2 * h, : 2 * w, :] = (
        dwin.reshape(B, h, w, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, 2 * h, 2 * w, C)
    )
    return dx


@dataclass
class ForwardCache:
    net_id: int
    version: int
    tensors: dict


class TinyNet:
    """Parameters live in ``self.params`` (name -> float64 array)."""

    def __init__(self, in_channels=3, classes=8, hue_hidden=0, seed=0, zero_heads=False):
        self.in_channels = in_channels
        self.classes = classes
        self.hue_hidden = hue_hidden
        self.version = 0
        rng = seeding.stream(seed, seeding.INIT)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        p = {
            "conv1.w": uniform((3, 3, in_channels, CONV1), 9 * in_channels),
            "conv1.b": uniform((CONV1,), 9 * in_channels),
            "conv2.w": uniform((3, 3, CONV1, CONV2), 9 * CONV1),
            "conv2.b": uniform((CONV2,), 9 * CONV1),
            "onehot.w": uniform((CONV2, classes), CONV2),
            "onehot.b": uniform((classes,), CONV2),
        }
        if hue_hidden:
            p["hue_hidden.w"] = uniform((CONV2, hue_hidden), CONV2)
            p["hue_hidden.b"] = uniform((hue_hidden,), CONV2)
            p["hue.w"] = uniform((hue_hidden, 2), hue_hidden)
            p["hue.b"] = uniform((2,), hue_hidden)
        else:
            p["hue.w"] = uniform((CONV2, 2), CONV2)
            p["hue.b"] = uniform((2,), CONV2)
        if zero_heads:
            for name in ("onehot.w", "hue.w"):
                p[name][:] = 0.0
        self.params = p

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def mark_updated(self):
        self.version += 1

    def forward(self, images):
        """Returns ``(logits (B, M), hue_prediction (B, 2), cache)``.

        A single ``(H, W, C)`` image is treated as a batch of one.
        """
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeMismatch(f"expected (B, H, W, {self.in_channels}) input, got {x.shape}")
        if x.shape[1] < 4 or x.shape[2] < 4:
            raise ShapeMismatch("input must be at least 4x4")
        p = self.params
        z1, cols1 = conv_forward(x, p["conv1.w"], p["conv1.b"])
        a1 = np.maximum(z1, 0.0)
        m1, pc1 = pool_forward(a1)
        z2, cols2 = conv_forward(m1, p["conv2.w"], p["conv2.b"])
        a2 = np.maximum(z2, 0.0)
        m2, pc2 = pool_forward(a2)
        feat = m2.mean(axis=(1, 2))
        logits = feat @ p["onehot.w"] + p["onehot.b"]
        t = dict(cols1=cols1, z1=z1, pc1=pc1, cols2=cols2, z2=z2, pc2=pc2, m2_shape=m2.shape, feat=feat)
        if self.hue_hidden:
            hz = feat @ p["hue_hidden.w"] + p["hue_hidden.b"]
            ha = np.maximum(hz, 0.0)
            hue = ha @ p["hue.w"] + p["hue.b"]
            t.update(hz=hz, ha=ha)
        else:
            hue = feat @ p["hue.w"] + p["hue.b"]
        return logits, hue, ForwardCache(id(self), self.version, t)

    def backward(self, cache: ForwardCache, grad_logits, grad_hue) -> dict:
        """Parameter gradients given upstream gradients on both heads."""
        if cache.net_id != id(self) or cache.version != self.version:
            raise StaleCache("cache does not belong to the current parameters")
        p = self.params
        t = cache.tensors
        g = {}
        grad_logits = np.atleast_2d(grad_logits)
        grad_hue = np.atleast_2d(grad_hue)
        feat = t["feat"]
        g["onehot.w"] = feat.T @ grad_logits
        g["onehot.b"] = grad_logits.sum(axis=0)
        dfeat = grad_logits @ p["onehot.w"].T
        if self.hue_hidden:
            g["hue.w"] = t["ha"].T @ grad_hue
            g["hue.b"] = grad_hue.sum(axis=0)
            dhz = (grad_hue @ p["hue.w"].T) * (t["hz"] > 0)
            g["hue_hidden.w"] = feat.T @ dhz
            g["hue_hidden.b"] = dhz.sum(axis=0)
            dfeat = dfeat + dhz @ p["hue_hidden.w"].T
        else:
            g["hue.w"] = feat.T @ grad_hue
            g["hue.b"] = grad_hue.sum(axis=0)
            dfeat = dfeat + grad_hue @ p["hue.w"].T
        B, h, w, C = t["m2_shape"]
        dm2 = np.broadcast_to(dfeat[:, None, None, :] / (h * w), (B, h, w, C))
        da2 = pool_backward(dm2, t["pc2"])
        dz2 = da2 * (t["z2"] > 0)
        dm1, g["conv2.w"], g["conv2.b"] = conv_backward(dz2, t["cols2"], p["conv2.w"], CONV1)
        da1 = pool_backward(dm1, t["pc1"])
        dz1 = da1 * (t["z1"] > 0)
        _, g["conv1.w"], g["conv1.b"] = conv_backward(dz1, t["cols1"], p["conv1.w"], self.in_channels)
        return g
