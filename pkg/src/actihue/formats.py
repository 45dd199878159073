"""Binary activation (AHUE) and index (AHIX) files, plus JSON-lines manifests.

AHUE v1::

    b"AHUE" | u32 version=1 | u32 N | u32 W | u32 H | u8 post_relu
    | W*H*N float32, row-major (row, col, channel)

AHIX v1::

    b"AHIX" | u32 version=1 | u32 N | u64 count | u8 mode (0 exact, 1 tree, 255 unfrozen)
    | count * (N float32 vector, f32 x, f32 y, u32 class_id, u32 image_id)
    | tree block (mode 1 only):
        u32 n_trees | u32 leaf_size | u64 seed | u32 search_k (0 = default)
        | u64 n_nodes | i32 roots[n_trees]
        | n_nodes * (i32 left, i32 right, f32 offset, u32 leaf_start, u32 leaf_count, N f32 hyperplane)
        | u64 n_leaf | u32 leaf_indices[n_leaf]

All integers and floats are little-endian.
"""

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .activation import ActivationImage
from .errors import BadMagic, BadVersion, FormatError, InvalidDims, IoFailure, ManifestError, NotFrozen, Truncated
from .memory import MemoryStore, RPForest

AHUE_MAGIC = b"AHUE"
AHIX_MAGIC = b"AHIX"
VERSION = 1
_AHUE_HEADER = struct.Struct("<4sIIIIB")
_AHIX_HEADER = struct.Struct("<4sIIQB")
_TREE_HEADER = struct.Struct("<IIQIQ")
MODE_CODES = {"exact": 0, "tree": 1, None: 255}


def encode_ahue(img: ActivationImage) -> bytes:
    h, w, n = img.data.shape
    if min(h, w, n) < 1:
        raise InvalidDims(f"cannot encode image with shape {img.data.shape}")
    header = _AHUE_HEADER.pack(AHUE_MAGIC, VERSION, n, w, h, 1 if img.post_relu else 0)
    return header + img.data.astype("<f4").tobytes(order="C")


def decode_ahue(buf: bytes) -> ActivationImage:
    if len(buf) < 4 or buf[:4] != AHUE_MAGIC:
        raise BadMagic(f"expected magic {AHUE_MAGIC!r}, found {bytes(buf[:4])!r}", 0)
    if len(buf) < _AHUE_HEADER.size:
        raise Truncated("file ends inside the header", len(buf))
    _, version, n, w, h, relu = _AHUE_HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise BadVersion(f"unsupported AHUE version {version}", 4)
    if min(n, w, h) < 1:
        raise InvalidDims(f"header declares N={n}, W={w}, H={h}")
    if relu not in (0, 1):
        raise FormatError(f"post_relu flag must be 0 or 1, found {relu}", _AHUE_HEADER.size - 1)
    need = _AHUE_HEADER.size + 4 * n * w * h
    if len(buf) < need:
        raise Truncated(f"payload needs {need} bytes, file has {len(buf)}", len(buf))
    if len(buf) > need:
        raise Truncated(f"{len(buf) - need} trailing bytes after payload", need)
    data = np.frombuffer(buf, dtype="<f4", count=n * w * h, offset=_AHUE_HEADER.size)
    return ActivationImage(data.reshape(h, w, n).astype(np.float32), post_relu=bool(relu))


def write_ahue(img: ActivationImage, path) -> None:
    payload = encode_ahue(img)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_ahue(path) -> ActivationImage:
    return decode_ahue(Path(path).read_bytes())


def _entry_dtype(dim):
    return np.dtype(
        [("v", "<f4", (dim,)), ("x", "<f4"), ("y", "<f4"), ("cls", "<u4"), ("img", "<u4")]
    )


def _node_dtype(dim):
    return np.dtype(
        [
            ("left", "<i4"),
            ("right", "<i4"),
            ("offset", "<f4"),
            ("leaf_start", "<u4"),
            ("leaf_count", "<u4"),
            ("plane", "<f4", (dim,)),
        ]
    )


def _store_arrays(store):
    if store.vectors is not None:
        return store.vectors, store.positions, store.class_ids, store.image_ids
    cols = list(zip(*store._chunks))
    return tuple(np.concatenate(c) for c in cols)


def encode_index(store: MemoryStore) -> bytes:
    dim = store.dim
    vectors, positions, class_ids, image_ids = _store_arrays(store)
    mode = store.mode if store.frozen else None
    parts = [_AHIX_HEADER.pack(AHIX_MAGIC, VERSION, dim, vectors.shape[0], MODE_CODES[mode])]
    entries = np.zeros(vectors.shape[0], dtype=_entry_dtype(dim))
    entries["v"] = vectors
    entries["x"] = positions[:, 0]
    entries["y"] = positions[:, 1]
    entries["cls"] = class_ids
    entries["img"] = image_ids
    parts.append(entries.tobytes())
    if mode == "tree":
        f = store.forest
        nodes = np.zeros(f.hyperplanes.shape[0], dtype=_node_dtype(dim))
        nodes["left"] = f.children[:, 0]
        nodes["right"] = f.children[:, 1]
        nodes["offset"] = f.offsets
        nodes["leaf_start"] = f.leaf_start
        nodes["leaf_count"] = f.leaf_count
        nodes["plane"] = f.hyperplanes
        parts.append(_TREE_HEADER.pack(f.n_trees, f.leaf_size, f.seed, store.search_k or 0, nodes.shape[0]))
        parts.append(f.roots.astype("<i4").tobytes())
        parts.append(nodes.tobytes())
        parts.append(struct.pack("<Q", f.leaf_indices.shape[0]))
        parts.append(f.leaf_indices.astype("<u4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes, what):
        if self.pos + nbytes > len(self.buf):
            raise Truncated(f"file ends inside {what}", len(self.buf))
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def unpack(self, st, what):
        return st.unpack(self.take(st.size, what))

    def array(self, dtype, count, what):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count, what), dtype=dtype, count=count)


def decode_index(buf: bytes) -> MemoryStore:
    if len(buf) < 4 or buf[:4] != AHIX_MAGIC:
        raise BadMagic(f"expected magic {AHIX_MAGIC!r}, found {bytes(buf[:4])!r}", 0)
    r = _Reader(buf)
    _, version, dim, count, mode_code = r.unpack(_AHIX_HEADER, "the header")
    if version != VERSION:
        raise BadVersion(f"unsupported AHIX version {version}", 4)
    if dim < 1:
        raise InvalidDims("index declares zero channels")
    modes = {v: k for k, v in MODE_CODES.items()}
    if mode_code not in modes:
        raise BadVersion(f"unknown index mode byte {mode_code}", _AHIX_HEADER.size - 1)
    mode = modes[mode_code]
    entries = r.array(_entry_dtype(dim), count, "the entry table")
    vectors = np.array(entries["v"], dtype=np.float32).reshape(count, dim)
    positions = np.stack([entries["x"], entries["y"]], axis=1).astype(np.float32)
    class_ids = entries["cls"].astype(np.uint32)
    image_ids = entries["img"].astype(np.uint32)
    forest = None
    search_k = None
    if mode == "tree":
        n_trees, leaf_size, seed, sk, n_nodes = r.unpack(_TREE_HEADER, "the tree header")
        roots = r.array("<i4", n_trees, "the tree roots").astype(np.int32)
        nodes = r.array(_node_dtype(dim), n_nodes, "the tree nodes")
        (n_leaf,) = r.unpack(struct.Struct("<Q"), "the leaf count")
        leaf_indices = r.array("<u4", n_leaf, "the leaf indices").astype(np.uint32)
        forest = RPForest(
            roots=roots,
            hyperplanes=np.array(nodes["plane"], dtype=np.float32).reshape(n_nodes, dim),
            offsets=nodes["offset"].astype(np.float32),
            children=np.stack([nodes["left"], nodes["right"]], axis=1).astype(np.int32),
            leaf_start=nodes["leaf_start"].astype(np.uint32),
            leaf_count=nodes["leaf_count"].astype(np.uint32),
            leaf_indices=leaf_indices,
            leaf_size=int(leaf_size),
            seed=int(seed),
        )
        search_k = int(sk) or None
    if r.pos != len(buf):
        raise Truncated(f"{len(buf) - r.pos} trailing bytes after index", r.pos)
    if mode is None:
        store = MemoryStore(dim=dim)
        if count:
            store._chunks.append((vectors, positions, class_ids, image_ids))
            ids, counts = np.unique(class_ids, return_counts=True)
            store.class_counts = {int(i): int(c) for i, c in zip(ids, counts)}
        return store
    return MemoryStore.from_arrays(vectors, positions, class_ids, image_ids, forest, search_k)


def write_index(store: MemoryStore, path) -> None:
    payload = encode_index(store)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_index(path, require_frozen=True) -> MemoryStore:
    """Load an AHIX file. A missing or unfrozen index raises :class:`NotFrozen`
    when ``require_frozen`` is set."""
    p = Path(path)
    if not p.exists():
        raise NotFrozen(f"no frozen index at {path}")
    store = decode_index(p.read_bytes())
    if require_frozen and not store.frozen:
        raise NotFrozen(f"index at {path} was saved before freeze")
    return store


@dataclass(frozen=True)
class ManifestRecord:
    path: Path
    class_id: int
    image_id: int


def read_manifest(path) -> list:
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    root = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rec = ManifestRecord(root / obj["path"], int(obj["class_id"]), int(obj["image_id"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: malformed record ({exc})") from exc
        if rec.class_id < 0:
            raise ManifestError(f"{path}:{lineno}: negative class_id")
        if rec.image_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate image_id {rec.image_id}")
        if not rec.path.exists():
            raise ManifestError(f"{path}:{lineno}: missing file {rec.path}")
        seen.add(rec.image_id)
        records.append(rec)
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    lines = []
    for rec in records:
        rel = os.path.relpath(rec.path, path.parent)
        lines.append(json.dumps({"path": rel, "class_id": rec.class_id, "image_id": rec.image_id}))
    path.write_text("\n".join(lines) + "\n")
