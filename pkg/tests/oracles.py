"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the package's numerics; each function transcribes the
defining formula directly with Python floats and ``math.fsum``.
"""

import math

import numpy as np


def dist(a, b):
    return math.sqrt(math.fsum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))


def unit(v):
    n = math.sqrt(math.fsum(float(x) ** 2 for x in v))
    return [float(x) / n for x in v]


def stored(v):
    """Unit-normalize in double precision, then round to float32 as stored."""
    return np.asarray(unit(v), dtype=np.float32)


def knn(q, vectors, k, skip=None):
    """Full scan; ties on distance go to the lower index."""
    scored = []
    for j, v in enumerate(vectors):
        if skip is not None and skip(j):
            continue
        scored.append((dist(q, v), j))
    scored.sort()
    return scored[:k]


def likelihood(pixels, memory, classes, k, eps, image_ids=None, exclude=None):
    """Kernel-density class scores, summed over pixels and their K neighbors.

    ``memory`` holds stored float32 unit vectors. Zero pixels are skipped.
    Denominators count the entries that were eligible as neighbors.
    """
    skip = None
    if exclude is not None:
        skip = lambda j: image_ids[j] == exclude  # noqa: E731
    num, den = {}, {}
    for j, c in enumerate(classes):
        if skip is None or not skip(j):
            den[int(c)] = den.get(int(c), 0) + 1
            num.setdefault(int(c), [])
    for p in pixels:
        if math.sqrt(math.fsum(float(x) ** 2 for x in p)) < 1e-12:
            continue
        q = unit(p)
        nn = knn(q, memory, k, skip)
        alpha = nn[0][0]
        for d, j in nn:
            num[int(classes[j])].append(math.exp(-(d * d) / (alpha * alpha + eps)))
    return {c: math.fsum(num[c]) / den[c] for c in den}


def decision(scores):
    best = max(scores.values())
    return min(c for c, s in scores.items() if s == best)


def circular(angles, weights=None):
    if weights is None:
        weights = [1.0] * len(angles)
    tw = math.fsum(weights)
    c = math.fsum(w * math.cos(a) for a, w in zip(angles, weights)) / tw
    s = math.fsum(w * math.sin(a) for a, w in zip(angles, weights)) / tw
    return math.atan2(s, c), math.hypot(c, s)


def hue_value(labels, pred, c):
    """Hue loss by direct evaluation: d_c + log(sum_i exp(-d_i))."""
    M = len(labels)
    d = [math.hypot(lx - pred[0], ly - pred[1]) / (2 * M) for lx, ly in labels]
    return d[c] + math.log(math.fsum(math.exp(-x) for x in d))
