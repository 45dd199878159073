"""Instance builders and the TinyNet finite-difference check, shared by test modules."""

import numpy as np

from actihue.activation import ActivationImage
from actihue.hueloss import assign_labels, batch_loss
from actihue.memory import MemoryStore
from actihue.trainer.tinynet import TinyNet

H = 1e-5


ACCEPTANCE_LINES = []


def make_store(vectors, classes, images=None):
    s = MemoryStore()
    images = range(len(vectors)) if images is None else images
    for v, c, i in zip(vectors, classes, images):
        s.insert_vectors(np.asarray(v, dtype=np.float64)[None], np.zeros((1, 2)), int(c), int(i))
    return s.freeze()


def query_image(pixels):
    pixels = np.asarray(pixels, dtype=np.float32)
    return ActivationImage(pixels.reshape(1, len(pixels), -1))


def random_instance(rng, nonneg=False):
    """Memory of 1..200 entries, 1..8 channels, K in 1..10, 1..9 query pixels."""
    n_mem = int(rng.integers(1, 201))
    dim = int(rng.integers(1, 9))
    k = int(rng.integers(1, 11))
    n_cls = int(rng.integers(1, 5))
    draw = rng.random if nonneg else rng.standard_normal
    mem = draw((n_mem, dim))
    mem[np.linalg.norm(mem, axis=1) < 1e-6] = 1.0
    cls = rng.integers(0, n_cls, size=n_mem)
    pix = draw((int(rng.integers(1, 10)), dim))
    if rng.random() < 0.3:
        pix[0] = 0.0
        if pix.shape[0] == 1:
            pix = np.vstack([pix, draw((1, dim))])
    return mem, cls, pix, k


def unit_rows(rng, n, dim, nonneg=False):
    v = rng.random((n, dim)) if nonneg else rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def net_gradcheck(cfg, size=4, batch=2, tol=1e-4):
    """Finite-difference check of every parameter for one random configuration.

    The scalar is the full combined loss, so both heads are on the path.
    ``error`` is the worst per-tensor ||fd - analytic|| / max(||fd||, ||analytic||)
    with central differences. A step can cross a ReLU or max-pool switch; then
    the central difference averages two linear pieces and is meaningless. Such
    elements are recognised by the analytic value agreeing with one of the
    one-sided differences; ``kinked`` flags them and ``unexplained`` counts
    mismatches that agree with neither side.
    """
    rng = np.random.default_rng(cfg)
    M = int(rng.integers(2, 6))
    C = int(rng.integers(1, 4))
    net = TinyNet(C, M, hue_hidden=0 if cfg % 2 == 0 else 5, seed=cfg)
    x = rng.normal(size=(batch, size, size, C))
    y = rng.integers(M, size=batch)
    labels = assign_labels(M, "random_permutation", cfg)

    def loss():
        lo, hu, _ = net.forward(x)
        return batch_loss(lo, hu, y, labels)[0]

    lo, hu, cache = net.forward(x)
    base, _, _, gl, gp = batch_loss(lo, hu, y, labels)
    grads = net.backward(cache, gl, gp)
    worst, kinked, unexplained = 0.0, 0, 0
    for name, p in net.params.items():
        g = grads[name]
        num = np.zeros_like(p)
        right = np.zeros_like(p)
        left = np.zeros_like(p)
        for i in range(p.size):
            orig = p.flat[i]
            p.flat[i] = orig + H
            a = loss()
            p.flat[i] = orig - H
            b = loss()
            p.flat[i] = orig
            num.flat[i] = (a - b) / (2 * H)
            right.flat[i] = (a - base) / H
            left.flat[i] = (base - b) / H
        scale = max(np.linalg.norm(num), np.linalg.norm(g), 1e-12)
        err = float(np.linalg.norm(num - g) / scale)
        worst = max(worst, err)
        if err >= tol:
            bad = np.abs(num - g) > tol * scale
            side_tol = 1e-4 * np.maximum(np.abs(g), 1e-3)
            one_sided = (np.abs(right - g) <= side_tol) | (np.abs(left - g) <= side_tol)
            kinked += int(np.sum(bad & one_sided))
            unexplained += int(np.sum(bad & ~one_sided))
    return {"error": worst, "kinked": kinked, "unexplained": unexplained}
