import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

import oracles
from actihue.activation import ActivationImage
from actihue.errors import BadQueryNorm, EmptyStore, FrozenStore, NotFrozen
from actihue.formats import encode_index
from actihue.memory import MemoryStore, topk_order


def random_image(rng, h=7, w=7, n=4):
    return ActivationImage(rng.random((h, w, n)).astype(np.float32) + 0.01, post_relu=True)


def unit_rows(rng, n, dim, nonneg=False):
    v = rng.random((n, dim)) if nonneg else rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def store_of(vectors, classes=None, images=None, **freeze_kw):
    s = MemoryStore()
    n = len(vectors)
    classes = np.zeros(n, int) if classes is None else classes
    images = np.arange(n) if images is None else images
    for v, c, i in zip(vectors, classes, images):
        s.insert_vectors(v[None], np.zeros((1, 2)), int(c), int(i))
    return s.freeze(**freeze_kw)


class TestInsert:
    def test_one_entry_per_pixel(self):
        s = MemoryStore()
        assert s.insert(random_image(np.random.default_rng(0)), 3) == 0
        s.freeze()
        assert len(s) == 49 and s.class_counts == {3: 49}

    def test_zero_pixel_skipped(self):
        data = np.random.default_rng(1).random((7, 7, 4)) + 0.1
        data[2, 5] = 0
        s = MemoryStore()
        assert s.insert(ActivationImage(data, post_relu=True), 0) == 1
        assert len(s) == 48

    def test_two_classes(self):
        rng = np.random.default_rng(2)
        s = MemoryStore()
        s.insert(random_image(rng), 0, 0)
        s.insert(random_image(rng), 1, 1)
        s.freeze()
        assert s.class_counts == {0: 49, 1: 49}

    def test_class_count(self):
        rng = np.random.default_rng(3)
        s = MemoryStore()
        for i in range(3):
            s.insert(random_image(rng), 2, i)
        s.insert(random_image(rng), 5, 9)
        s.freeze()
        assert s.class_count(2) == 147
        assert s.class_count(4) == 0
        assert sum(s.class_count(c) for c in range(6)) == len(s)

    def test_stored_vectors_are_unit(self):
        rng = np.random.default_rng(4)
        s = MemoryStore()
        s.insert(random_image(rng, n=12), 0)
        s.freeze()
        assert np.all(np.abs(np.linalg.norm(s.vectors.astype(np.float64), axis=1) - 1) <= 1e-6)
        assert s.positions.tolist()[0] == [-3.0, 3.0]

    def test_no_insert_after_freeze(self):
        s = store_of(unit_rows(np.random.default_rng(5), 3, 4))
        with pytest.raises(FrozenStore):
            s.insert_vectors(np.ones((1, 4)), np.zeros((1, 2)), 0)
        with pytest.raises(FrozenStore):
            s.freeze()
        with pytest.raises(ValueError):
            s.vectors[0, 0] = 1

    def test_empty_store(self):
        with pytest.raises(EmptyStore):
            MemoryStore().freeze()

    def test_dimension_mismatch(self):
        s = MemoryStore()
        s.insert_vectors(np.ones((1, 3)), np.zeros((1, 2)), 0)
        with pytest.raises(ValueError):
            s.insert_vectors(np.ones((1, 4)), np.zeros((1, 2)), 0)


class TestQueryErrors:
    def test_not_frozen(self):
        s = MemoryStore()
        s.insert_vectors(np.ones((1, 2)), np.zeros((1, 2)), 0)
        with pytest.raises(NotFrozen):
            s.query_knn(np.array([1.0, 0.0]))
        with pytest.raises(NotFrozen):
            s.class_count(0)

    def test_bad_norm(self):
        s = store_of(unit_rows(np.random.default_rng(6), 5, 3))
        with pytest.raises(BadQueryNorm):
            s.query_knn(np.array([1.0, 1.0, 0.0]))
        s.query_knn(np.array([1.0 + 5e-7, 0, 0]), k=3)

    def test_k_capped_with_flag(self):
        s = store_of(unit_rows(np.random.default_rng(7), 4, 3))
        with pytest.warns(UserWarning):
            r = s.query_knn(s.vectors[0].astype(np.float64) / np.linalg.norm(s.vectors[0]), k=10)
        assert r.capped and len(r) == 4


class TestExactSearch:
    def test_identity_match(self):
        vecs = unit_rows(np.random.default_rng(8), 100, 6)
        s = store_of(vecs)
        q = s.vectors[37].astype(np.float64)
        q /= np.linalg.norm(q)
        r = s.query_knn(q, 5)
        # the stored float32 copy is at distance ~1e-8, far below any other entry
        assert r.indices[0] == 37 and r.alpha < 1e-6

    def test_exact_zero_distance(self):
        s = store_of(np.array([[1.0, 0.0], [0.0, 1.0]]))
        r = s.query_knn(np.array([1.0, 0.0]), 2)
        assert r.alpha == 0.0 and r.neighbors[0] == (0, 0.0)

    def test_matches_full_scan_oracle(self):
        rng = np.random.default_rng(9)
        for trial in range(150):
            n = int(rng.integers(1, 300))
            dim = int(rng.integers(1, 9))
            vecs = unit_rows(rng, n, dim)
            # plant exact duplicates so tie order is exercised
            dup = rng.integers(0, n, size=n // 4)
            vecs = np.concatenate([vecs, vecs[dup]])
            s = store_of(vecs)
            stored = s.vectors.astype(np.float64)
            k = int(rng.integers(1, 12))
            for _ in range(5):
                q = stored[rng.integers(len(stored))] if rng.random() < 0.3 else unit_rows(rng, 1, dim)[0]
                q = q / np.linalg.norm(q)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    r = s.query_knn(q, k)
                ref = oracles.knn(q, stored, k)
                assert r.indices.tolist() == [j for _, j in ref]
                assert np.allclose(r.distances, [d for d, _ in ref], rtol=0, atol=1e-14)
                assert r.alpha == pytest.approx(min(oracles.dist(q, v) for v in stored), abs=1e-14)

    def test_distances_sorted_and_bounded(self):
        rng = np.random.default_rng(10)
        vecs = unit_rows(rng, 400, 8, nonneg=True)
        s = store_of(vecs)
        for q in unit_rows(rng, 50, 8, nonneg=True):
            r = s.query_knn(q, 20)
            assert np.all(np.diff(r.distances) >= 0)
            assert r.distances.max() <= np.sqrt(2) * (1 + 1e-6)
            assert r.alpha == r.distances[0]

    def test_k_equal_to_size_returns_everything_sorted(self):
        rng = np.random.default_rng(11)
        s = store_of(unit_rows(rng, 30, 3))
        q = unit_rows(rng, 1, 3)[0]
        r = s.query_knn(q, 30)
        assert sorted(r.indices.tolist()) == list(range(30))
        assert not r.capped

    def test_query_many_equals_single(self):
        rng = np.random.default_rng(12)
        s = store_of(unit_rows(rng, 200, 5))
        qs = unit_rows(rng, 40, 5)
        many = s.query_many(qs, 7)
        for q, r in zip(qs, many):
            one = s.query_knn(q, 7)
            assert np.array_equal(one.indices, r.indices) and np.array_equal(one.distances, r.distances)

    def test_leave_one_out(self):
        rng = np.random.default_rng(13)
        vecs = unit_rows(rng, 60, 4)
        images = np.repeat(np.arange(6), 10)
        s = store_of(vecs, images=images)
        q = s.vectors[3].astype(np.float64)
        q /= np.linalg.norm(q)
        r = s.query_knn(q, 10, exclude_image=0)
        assert not np.any(s.image_ids[r.indices] == 0)
        ref = oracles.knn(q, s.vectors.astype(np.float64), 10, skip=lambda j: images[j] == 0)
        assert r.indices.tolist() == [j for _, j in ref]
        counts = s.eligible_counts(exclude_image=0)
        assert counts == {0: 50}

    def test_topk_ignores_excluded_entries(self):
        d = np.array([0.3, np.inf, 0.1, 0.3, np.inf])
        assert topk_order(d, 10).tolist() == [2, 0, 3]


class TestTreeSearch:
    def test_recall_at_10(self):
        rng = np.random.default_rng(14)
        vecs = unit_rows(rng, 10_000, 16)
        s = store_of(vecs, n_trees=32, mode="tree", seed=3)
        recall = []
        for q in unit_rows(rng, 100, 16):
            exact = set(s.query_knn(q, 10, mode="exact").indices.tolist())
            approx = s.query_knn(q, 10, mode="tree")
            assert np.all(np.diff(approx.distances) >= 0)
            recall.append(len(exact & set(approx.indices.tolist())) / 10)
        assert np.mean(recall) >= 0.95

    def test_full_budget_is_exact(self):
        rng = np.random.default_rng(15)
        s = store_of(unit_rows(rng, 500, 6), mode="tree", n_trees=4, seed=1)
        for q in unit_rows(rng, 20, 6):
            a = s.query_knn(q, 10, mode="exact")
            b = s.query_knn(q, 10, mode="tree", search_k=10_000)
            assert np.array_equal(a.indices, b.indices)

    def test_rebuild_is_byte_identical(self):
        vecs = unit_rows(np.random.default_rng(16), 100, 8)
        a = encode_index(store_of(vecs, mode="tree", seed=7))
        b = encode_index(store_of(vecs, mode="tree", seed=7))
        c = encode_index(store_of(vecs, mode="tree", seed=8))
        assert a == b and a != c

    def test_leaves_partition_entries(self):
        vecs = unit_rows(np.random.default_rng(17), 333, 5)
        s = store_of(vecs, mode="tree", n_trees=3, leaf_size=8)
        f = s.forest
        for t in range(f.n_trees):
            seen = []
            stack = [int(f.roots[t])]
            while stack:
                node = stack.pop()
                if f.children[node, 0] < 0:
                    assert f.leaf_count[node] <= 8
                    seen.extend(f.leaf_indices[f.leaf_start[node] : f.leaf_start[node] + f.leaf_count[node]])
                else:
                    stack.extend(int(x) for x in f.children[node])
            assert sorted(seen) == list(range(333))

    def test_duplicates_do_not_hang(self):
        vecs = np.tile(unit_rows(np.random.default_rng(18), 1, 4), (200, 1))
        s = store_of(vecs, mode="tree", leaf_size=4)
        r = s.query_knn(vecs[0], 5)
        assert len(r) == 5


def test_concurrent_queries_match_serial():
    rng = np.random.default_rng(19)
    s = store_of(unit_rows(rng, 2000, 8), mode="tree", seed=2)
    qs = unit_rows(rng, 64, 8)
    serial = [(r.indices.tolist(), r.distances.tolist()) for r in (s.query_knn(q, 10) for q in qs)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        threaded = list(pool.map(lambda q: s.query_knn(q, 10), qs))
    assert serial == [(r.indices.tolist(), r.distances.tolist()) for r in threaded]
