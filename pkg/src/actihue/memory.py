"""Labeled memory of unit pixel vectors with exact and tree-based K-NN search.

Entries are stored as float32; all distances are computed in float64 from
explicit differences so that equal entries always produce equal distances.
Ties on distance are broken by the lower entry index.
"""

import heapq
import warnings
from dataclasses import dataclass

import numpy as np

from . import seeding
from .activation import ActivationImage, normalize_rows
from .errors import BadQueryNorm, EmptyStore, FrozenStore, NotFrozen

DEFAULT_K = 10
NORM_TOL = 1e-6
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True, eq=False)
class NNQueryResult:
    indices: np.ndarray
    distances: np.ndarray
    capped: bool = False

    @property
    def alpha(self) -> float:
        """Distance of the rank-1 neighbor (the adaptive kernel bandwidth)."""
        return float(self.distances[0])

    @property
    def neighbors(self):
        return list(zip(self.indices.tolist(), self.distances.tolist()))

    def __len__(self):
        return len(self.indices)


def topk_order(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest finite distances, ordered by (distance, index)."""
    finite = np.isfinite(dist)
    k = min(k, int(finite.sum()))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k < dist.shape[0]:
        kth = np.partition(dist, k - 1)[k - 1]
        cand = np.flatnonzero(dist <= kth)
    else:
        cand = np.flatnonzero(finite)
    order = np.lexsort((cand, dist[cand]))
    return cand[order[:k]]


def pairwise_distances(queries: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Euclidean distances ``(m, n)`` computed from explicit float64 differences."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    m, dim = queries.shape
    n = vectors.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    v64 = np.asarray(vectors, dtype=np.float64)
    rows = max(1, _CHUNK_ELEMS // max(1, n * dim))
    for start in range(0, m, rows):
        q = queries[start : start + rows]
        diff = v64[None, :, :] - q[:, None, :]
        out[start : start + rows] = np.sqrt((diff * diff).sum(axis=-1))
    return out


@dataclass(frozen=True, eq=False)
class RPForest:
    """Flat random-projection forest.

    Node ``i`` is a split when ``children[i, 0] >= 0``: points with
    ``hyperplanes[i] . v - offsets[i] > 0`` go right (``children[i, 1]``).
    Leaf nodes own ``leaf_indices[leaf_start[i] : leaf_start[i] + leaf_count[i]]``.
    """

    roots: np.ndarray
    hyperplanes: np.ndarray
    offsets: np.ndarray
    children: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    leaf_indices: np.ndarray
    leaf_size: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    @classmethod
    def build(cls, vectors, n_trees=32, leaf_size=16, seed=0):
        vecs = np.asarray(vectors, dtype=np.float64)
        dim = vecs.shape[1]
        planes, offsets, children, lstart, lcount, leaves = [], [], [], [], [], []
        n_leaf_points = [0]

        def new_node():
            planes.append(np.zeros(dim, dtype=np.float32))
            offsets.append(np.float32(0))
            children.append((-1, -1))
            lstart.append(0)
            lcount.append(0)
            return len(planes) - 1

        def grow(idx, rng):
            node = new_node()
            if idx.shape[0] <= leaf_size:
                lstart[node] = n_leaf_points[0]
                n_leaf_points[0] += idx.shape[0]
                lcount[node] = idx.shape[0]
                leaves.append(idx)
                return node
            side = None
            for _ in range(3):
                a, b = rng.choice(idx.shape[0], size=2, replace=False)
                normal = (vecs[idx[a]] - vecs[idx[b]]).astype(np.float32)
                if not np.any(normal):
                    continue
                mid = 0.5 * (vecs[idx[a]] + vecs[idx[b]])
                off = np.float32(normal.astype(np.float64) @ mid)
                right = vecs[idx] @ normal.astype(np.float64) - np.float64(off) > 0
                if 0 < right.sum() < idx.shape[0]:
                    side = right
                    break
            if side is None:
                # all candidate splits degenerate (duplicates): random halving
                normal = np.zeros(dim, dtype=np.float32)
                off = np.float32(0)
                side = np.zeros(idx.shape[0], dtype=bool)
                side[rng.permutation(idx.shape[0])[: idx.shape[0] // 2]] = True
                # a zero hyperplane sends every query left; the right child is
                # still reachable through the priority search
            planes[node] = normal
            offsets[node] = off
            left_child = grow(idx[~side], rng)
            right_child = grow(idx[side], rng)
            children[node] = (left_child, right_child)
            return node

        roots = []
        all_idx = np.arange(vecs.shape[0], dtype=np.int64)
        for t in range(n_trees):
            rng = seeding.stream(seed, seeding.TREES, t)
            roots.append(grow(all_idx, rng))
        return cls(
            roots=np.asarray(roots, dtype=np.int32),
            hyperplanes=np.asarray(planes, dtype=np.float32).reshape(-1, dim),
            offsets=np.asarray(offsets, dtype=np.float32),
            children=np.asarray(children, dtype=np.int32).reshape(-1, 2),
            leaf_start=np.asarray(lstart, dtype=np.uint32),
            leaf_count=np.asarray(lcount, dtype=np.uint32),
            leaf_indices=(np.concatenate(leaves) if leaves else np.empty(0)).astype(np.uint32),
            leaf_size=int(leaf_size),
            seed=int(seed),
        )

    def candidates(self, q: np.ndarray, search_k: int) -> np.ndarray:
        """Priority search across all trees until ``search_k`` points are gathered."""
        q = np.asarray(q, dtype=np.float64)
        heap = [(-np.inf, int(r)) for r in self.roots]
        heapq.heapify(heap)
        found = []
        total = 0
        while heap and total < search_k:
            neg_prio, node = heapq.heappop(heap)
            left, right = self.children[node]
            if left < 0:
                s = int(self.leaf_start[node])
                c = int(self.leaf_count[node])
                found.append(self.leaf_indices[s : s + c])
                total += c
                continue
            margin = float(self.hyperplanes[node].astype(np.float64) @ q) - float(self.offsets[node])
            prio = -neg_prio
            heapq.heappush(heap, (-min(prio, margin), int(right)))
            heapq.heappush(heap, (-min(prio, -margin), int(left)))
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found)).astype(np.int64)


class MemoryStore:
    """Append-only store of labeled unit pixel vectors; read-only once frozen."""

    def __init__(self, dim=None):
        self.dim = dim
        self._chunks = []
        self.class_counts = {}
        self.frozen = False
        self.mode = None
        self.forest = None
        self.search_k = None
        self.vectors = None
        self.positions = None
        self.class_ids = None
        self.image_ids = None

    def __len__(self):
        if self.vectors is not None:
            return self.vectors.shape[0]
        return sum(c[0].shape[0] for c in self._chunks)

    def insert(self, img: ActivationImage, class_id: int, image_id: int = 0) -> int:
        """Normalize and append every non-zero pixel of ``img``.

        Returns the number of skipped (all-zero) pixels.
        """
        return self.insert_vectors(img.pixel_matrix(), img.positions(), class_id, image_id)

    def insert_vectors(self, vectors, positions, class_id: int, image_id: int = 0) -> int:
        if self.frozen:
            raise FrozenStore("cannot insert into a frozen store")
        vectors = np.atleast_2d(np.asarray(vectors))
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        if self.dim is None:
            self.dim = vectors.shape[1]
        elif vectors.shape[1] != self.dim:
            raise ValueError(f"store holds {self.dim}-dim vectors, got {vectors.shape[1]}")
        if int(class_id) < 0:
            raise ValueError("class_id must be non-negative")
        unit, keep = normalize_rows(vectors)
        n = unit.shape[0]
        self._chunks.append(
            (
                unit.astype(np.float32),
                positions[keep].astype(np.float32),
                np.full(n, class_id, dtype=np.uint32),
                np.full(n, image_id, dtype=np.uint32),
            )
        )
        if n:
            self.class_counts[int(class_id)] = self.class_counts.get(int(class_id), 0) + n
        return int((~keep).sum())

    def _consolidate(self):
        if self._chunks:
            cols = list(zip(*self._chunks))
            self.vectors = np.concatenate(cols[0])
            self.positions = np.concatenate(cols[1])
            self.class_ids = np.concatenate(cols[2])
            self.image_ids = np.concatenate(cols[3])
        self._chunks = []

    def freeze(self, mode="exact", n_trees=32, leaf_size=16, seed=0, search_k=None):
        """Make the store immutable; ``mode='tree'`` also builds a seeded forest."""
        if self.frozen:
            raise FrozenStore("store is already frozen")
        if len(self) == 0:
            raise EmptyStore("cannot freeze an empty store")
        if mode not in ("exact", "tree"):
            raise ValueError(f"unknown index mode {mode!r}")
        self._consolidate()
        if mode == "tree":
            self.forest = RPForest.build(self.vectors, n_trees=n_trees, leaf_size=leaf_size, seed=seed)
            self.search_k = search_k
        self.mode = mode
        for arr in (self.vectors, self.positions, self.class_ids, self.image_ids):
            arr.setflags(write=False)
        self.frozen = True
        return self

    @classmethod
    def from_arrays(cls, vectors, positions, class_ids, image_ids, forest=None, search_k=None):
        """Rebuild a frozen store from stored arrays (used by the index loader)."""
        store = cls(dim=vectors.shape[1])
        store.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        store.positions = np.ascontiguousarray(positions, dtype=np.float32)
        store.class_ids = np.ascontiguousarray(class_ids, dtype=np.uint32)
        store.image_ids = np.ascontiguousarray(image_ids, dtype=np.uint32)
        ids, counts = np.unique(store.class_ids, return_counts=True)
        store.class_counts = {int(i): int(c) for i, c in zip(ids, counts)}
        store.forest = forest
        store.search_k = search_k
        store.mode = "tree" if forest is not None else "exact"
        for arr in (store.vectors, store.positions, store.class_ids, store.image_ids):
            arr.setflags(write=False)
        store.frozen = True
        return store

    def class_count(self, class_id) -> int:
        if not self.frozen:
            raise NotFrozen("store must be frozen before use")
        return self.class_counts.get(int(class_id), 0)

    def _check_query(self, q):
        if not self.frozen:
            raise NotFrozen("store must be frozen before querying")
        q = np.asarray(q, dtype=np.float64)
        if q.shape[-1] != self.dim:
            raise ValueError(f"query has {q.shape[-1]} dims, store has {self.dim}")
        norms = np.linalg.norm(np.atleast_2d(q), axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise BadQueryNorm("queries must have unit norm within 1e-6")
        return q

    def _resolve_mode(self, mode):
        mode = mode or self.mode
        if mode == "tree" and self.forest is None:
            raise ValueError("tree queries need a store frozen with mode='tree'")
        return mode

    def query_knn(self, q, k=DEFAULT_K, mode=None, exclude_image=None, search_k=None) -> NNQueryResult:
        """K nearest entries to unit vector ``q``.

        ``exclude_image`` drops entries from that image (leave-one-out). When
        fewer than ``k`` entries are eligible, ``k`` is capped and the result
        carries ``capped=True``.
        """
        q = self._check_query(q)
        if k < 1:
            raise ValueError("k must be >= 1")
        mode = self._resolve_mode(mode)
        if mode == "exact":
            cand = None
            dist = pairwise_distances(q, self.vectors)[0]
        else:
            sk = search_k or self.search_k or self.forest.n_trees * k * 8
            cand = self.forest.candidates(q, sk)
            dist = pairwise_distances(q, self.vectors[cand])[0]
        if exclude_image is not None:
            ids = self.image_ids if cand is None else self.image_ids[cand]
            dist = np.where(ids == exclude_image, np.inf, dist)
        order = topk_order(dist, k)
        if order.size == 0:
            raise EmptyStore("no eligible entries for this query")
        idx = order if cand is None else cand[order]
        capped = order.size < k
        if capped:
            warnings.warn(f"k={k} capped at {order.size} eligible entries", stacklevel=2)
        return NNQueryResult(idx.astype(np.int64), dist[order], capped)

    def query_many(self, queries, k=DEFAULT_K, mode=None, exclude_image=None, search_k=None):
        """Query a batch of unit vectors; exact mode shares one distance pass per chunk."""
        queries = self._check_query(np.atleast_2d(queries))
        mode = self._resolve_mode(mode)
        if mode == "tree":
            return [self.query_knn(q, k, mode, exclude_image, search_k) for q in queries]
        results = []
        rows = max(1, _CHUNK_ELEMS // max(1, len(self) * self.dim))
        for start in range(0, queries.shape[0], rows):
            block = pairwise_distances(queries[start : start + rows], self.vectors)
            if exclude_image is not None:
                block[:, self.image_ids == exclude_image] = np.inf
            for dist in block:
                order = topk_order(dist, k)
                if order.size == 0:
                    raise EmptyStore("no eligible entries for this query")
                capped = order.size < k
                if capped:
                    warnings.warn(f"k={k} capped at {order.size} eligible entries", stacklevel=2)
                results.append(NNQueryResult(order.astype(np.int64), dist[order], capped))
        return results

    def eligible_counts(self, exclude_image=None):
        """Per-class entry counts, minus entries of ``exclude_image`` if given."""
        if not self.frozen:
            raise NotFrozen("store must be frozen before use")
        counts = dict(self.class_counts)
        if exclude_image is not None:
            mask = self.image_ids == exclude_image
            ids, n = np.unique(self.class_ids[mask], return_counts=True)
            for c, m in zip(ids.tolist(), n.tolist()):
                counts[c] -= m
                if counts[c] == 0:
                    del counts[c]
        return counts
