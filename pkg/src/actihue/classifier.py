"""Kernel-density K-NN classification over pixel vectors.

For every non-zero query pixel the K nearest memory entries vote for their
class with weight ``exp(-d^2 / (alpha^2 + eps))``, where ``alpha`` is the
distance to that pixel's nearest entry. A class score is the sum of its votes
divided by the number of memory entries of that class. Scores are unnormalized;
only the argmax is meaningful.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activation import ActivationImage, normalize_rows, pool_descriptor
from .errors import EmptyQuery, NotFrozen
from .memory import DEFAULT_K, MemoryStore

DEFAULT_EPSILON = 1e-8


def kernel(d, alpha, epsilon=DEFAULT_EPSILON):
    """Adaptive-bandwidth Gaussian kernel, float64, vectorized over ``d``."""
    d = np.asarray(d, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    out = np.exp(-(d * d) / (alpha * alpha + epsilon))
    return float(out) if out.ndim == 0 else out


@dataclass
class PixelMatches:
    pixel: int
    indices: np.ndarray
    distances: np.ndarray
    kernel_values: np.ndarray


@dataclass
class ClassLikelihoodTable:
    scores: dict
    decision: int
    epsilon: float
    k: int
    skipped_pixels: int = 0
    capped: bool = False
    matches: Optional[list] = field(default=None, repr=False)

    def to_dict(self):
        return {
            "decision": self.decision,
            "scores": {str(c): s for c, s in self.scores.items()},
            "epsilon": self.epsilon,
            "k": self.k,
            "skipped_pixels": self.skipped_pixels,
            "capped": self.capped,
        }


def argmax_class(scores: dict) -> int:
    """Highest score, lowest class id on exact ties."""
    best = None
    for c in sorted(scores):
        if best is None or scores[c] > scores[best]:
            best = c
    return best


def score_vectors(
    vectors,
    store: MemoryStore,
    k=DEFAULT_K,
    epsilon=DEFAULT_EPSILON,
    mode=None,
    exclude_image=None,
    search_k=None,
    keep_matches=False,
) -> ClassLikelihoodTable:
    """Likelihood table for a set of raw pixel vectors (zero rows are skipped)."""
    if not store.frozen:
        raise NotFrozen("store must be frozen before classification")
    unit, keep = normalize_rows(vectors)
    if unit.shape[0] == 0:
        raise EmptyQuery("query has no non-zero pixels")
    counts = store.eligible_counts(exclude_image)
    classes = np.array(sorted(counts), dtype=np.int64)
    results = store.query_many(unit, k, mode=mode, exclude_image=exclude_image, search_k=search_k)

    pixel_ids = np.flatnonzero(keep)
    votes_cls, votes_w, matches = [], [], []
    for pix, res in zip(pixel_ids, results):
        w = kernel(res.distances, res.alpha, epsilon)
        votes_cls.append(store.class_ids[res.indices])
        votes_w.append(w)
        if keep_matches:
            matches.append(PixelMatches(int(pix), res.indices, res.distances, w))
    cls = np.concatenate(votes_cls).astype(np.int64)
    w = np.concatenate(votes_w)
    # bincount accumulates sequentially in vote order: pixel-major, rank-minor
    slot = np.searchsorted(classes, cls)
    sums = np.bincount(slot, weights=w, minlength=classes.shape[0])
    scores = {int(c): float(sums[i] / counts[int(c)]) for i, c in enumerate(classes)}
    return ClassLikelihoodTable(
        scores=scores,
        decision=argmax_class(scores),
        epsilon=float(epsilon),
        k=int(k),
        skipped_pixels=int((~keep).sum()),
        capped=any(r.capped for r in results),
        matches=matches if keep_matches else None,
    )


def likelihood(query: ActivationImage, store: MemoryStore, k=DEFAULT_K, epsilon=DEFAULT_EPSILON, **kw):
    return score_vectors(query.pixel_matrix(), store, k, epsilon, **kw)


def classify(query: ActivationImage, store: MemoryStore, k=DEFAULT_K, epsilon=DEFAULT_EPSILON, **kw) -> int:
    return likelihood(query, store, k, epsilon, **kw).decision


def classify_pooled(descriptor, store: MemoryStore, k=DEFAULT_K, epsilon=DEFAULT_EPSILON, **kw) -> int:
    """Classify one global descriptor against a store of one descriptor per image."""
    return score_vectors(np.atleast_2d(descriptor), store, k, epsilon, **kw).decision


def build_descriptor_store(images, labels, mode, image_ids=None) -> MemoryStore:
    """Frozen exact store of ``pool_descriptor(img, mode)``, one entry per image."""
    store = MemoryStore()
    if image_ids is None:
        image_ids = range(len(images))
    for img, c, iid in zip(images, labels, image_ids):
        store.insert_vectors(pool_descriptor(img, mode)[None, :], np.zeros((1, 2)), c, iid)
    return store.freeze()


def build_pixel_store(images, labels, image_ids=None, **freeze_kw) -> MemoryStore:
    store = MemoryStore()
    if image_ids is None:
        image_ids = range(len(images))
    for img, c, iid in zip(images, labels, image_ids):
        store.insert(img, c, iid)
    return store.freeze(**freeze_kw)


ENCODINGS = ("pixel", "avg", "max", "flatten")


def compare_descriptors(memory, queries, k=DEFAULT_K, epsilon=DEFAULT_EPSILON) -> dict:
    """Accuracy of each encoding on ``queries`` given labeled ``memory``.

    Both arguments are sequences of ``(ActivationImage, class_id)``.
    """
    mem_imgs = [m[0] for m in memory]
    mem_lbls = [m[1] for m in memory]
    table = {}
    for enc in ENCODINGS:
        if enc == "pixel":
            store = build_pixel_store(mem_imgs, mem_lbls)
            preds = [classify(img, store, k, epsilon) for img, _ in queries]
        else:
            store = build_descriptor_store(mem_imgs, mem_lbls, enc)
            preds = [classify_pooled(pool_descriptor(img, enc), store, k, epsilon) for img, _ in queries]
        correct = sum(int(p == c) for p, (_, c) in zip(preds, queries))
        table[enc] = correct / len(queries)
    return table
