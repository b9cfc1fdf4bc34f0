"""Bit-packed binary-code index with exhaustive Hamming top-n search.

Codes are packed little-endian: bit i lives in byte i // 8 at position
i % 8, and bits past the code length are zero. Search scans every entry
with a per-byte popcount, orders by (distance, id) ascending, and is
immutable after build. The float-vector oracle ranks by squared Euclidean
distance with the same tie rule; for sign codes of +-1 vectors the two
rankings coincide because the squared distance is exactly four times the
Hamming distance.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels as _k
from .errors import FormatError, ShapeError

INDEX_MAGIC = b"ATHX"
INDEX_VERSION = 1


@dataclass(frozen=True)
class HashCode:
    bits: bytes
    k: int

    def __post_init__(self):
        nbytes = (self.k + 7) // 8
        if len(self.bits) != nbytes:
            raise ShapeError(f"code of {self.k} bits needs {nbytes} bytes, got {len(self.bits)}")
        if self.k % 8:
            tail = self.bits[-1] >> (self.k % 8)
            if tail:
                raise ShapeError(f"bits beyond position {self.k} must be zero")


def pack_bits(bits) -> HashCode:
    """Pack an array of 0/1 values into a HashCode (bit i at byte i//8, LSB first)."""
    arr = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if arr.size == 0:
        raise ShapeError("cannot pack an empty bit vector")
    return HashCode(bits=np.packbits(arr, bitorder="little").tobytes(), k=int(arr.size))


def unpack_bits(code: HashCode) -> np.ndarray:
    buf = np.frombuffer(code.bits, dtype=np.uint8)
    return np.unpackbits(buf, bitorder="little")[: code.k]


def hamming_distance(a: HashCode, b: HashCode) -> int:
    if a.k != b.k:
        raise ShapeError(f"code lengths differ: {a.k} vs {b.k}")
    return int(
        _k.hamming_distances(
            np.frombuffer(a.bits, dtype=np.uint8)[None, :],
            np.frombuffer(b.bits, dtype=np.uint8),
        )[0]
    )


class HashIndex:
    """Immutable array of (id, code, label) records searchable by Hamming distance."""

    def __init__(self, k, ids, labels, codes):
        self.k = int(k)
        self.ids = ids
        self.labels = labels
        self.codes = codes  # (n, ceil(k/8)) uint8, row i belongs to ids[i]

    @property
    def size(self):
        return int(self.ids.size)

    def label_of(self, idx):
        return int(self.labels[idx])


def build(codes, ids, labels) -> HashIndex:
    """Seal codes with their ids and labels into an index.

    Rejects duplicate ids and mixed code lengths.
    """
    codes = list(codes)
    ids = list(ids)
    labels = list(labels)
    if not (len(codes) == len(ids) == len(labels)):
        raise ShapeError(
            f"codes ({len(codes)}), ids ({len(ids)}) and labels ({len(labels)}) must align"
        )
    if not codes:
        return HashIndex(0, np.empty(0, np.uint32), np.empty(0, np.uint16), np.empty((0, 0), np.uint8))
    k = codes[0].k
    for c in codes:
        if c.k != k:
            raise ShapeError(f"mixed code lengths in build: {c.k} vs {k}")
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise ShapeError(f"duplicate id {dup} in build")
    id_arr = np.array(ids, dtype=np.uint32)
    label_arr = np.array(labels, dtype=np.uint16)
    code_mat = np.vstack([np.frombuffer(c.bits, dtype=np.uint8) for c in codes])
    return HashIndex(k, id_arr, label_arr, np.ascontiguousarray(code_mat))


def search(index: HashIndex, query: HashCode, topn: int):
    """Exhaustive scan: the topn nearest entries as (id, distance, label) tuples.

    Ascending Hamming distance, ties by ascending id.
    """
    if topn < 1:
        raise ShapeError(f"topn must be >= 1, got {topn}")
    if index.size == 0:
        return []
    if query.k != index.k:
        raise ShapeError(f"query has {query.k} bits, index holds {index.k}-bit codes")
    q = np.frombuffer(query.bits, dtype=np.uint8)
    dist = _k.hamming_distances(index.codes, q)
    order = np.lexsort((index.ids, dist))[: min(topn, index.size)]
    return [(int(index.ids[i]), int(dist[i]), int(index.labels[i])) for i in order]


def float_search_oracle(vectors, query, topn: int):
    """Rank float vectors by squared Euclidean distance to the query.

    Ids are the list positions; ties break by ascending id. This is the
    reference ranking that sign-code Hamming search must reproduce on
    +-1 vectors.
    """
    if topn < 1:
        raise ShapeError(f"topn must be >= 1, got {topn}")
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.size == 0:
        return []
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if mat.shape[1] != q.size:
        raise ShapeError(f"query length {q.size} does not match vectors of {mat.shape[1]}")
    diff = mat - q[None, :]
    dist = (diff * diff).sum(axis=1)
    ids = np.arange(mat.shape[0])
    order = np.lexsort((ids, dist))[: min(topn, mat.shape[0])]
    return [(int(i), float(dist[i])) for i in order]


def save(index: HashIndex, path):
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<B", INDEX_VERSION))
        fh.write(struct.pack("<H", index.k))
        fh.write(struct.pack("<Q", index.size))
        nbytes = (index.k + 7) // 8
        for i in range(index.size):
            fh.write(struct.pack("<IH", int(index.ids[i]), int(index.labels[i])))
            fh.write(index.codes[i, :nbytes].tobytes())


def _read_exact(fh, count, path, what):
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"{path}: truncated index while reading {what}")
    return data


def load(path) -> HashIndex:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, path, "magic")
        if magic != INDEX_MAGIC:
            raise FormatError(f"{path}: not a hash index (bad magic {magic!r})")
        (version,) = struct.unpack("<B", _read_exact(fh, 1, path, "version"))
        if version != INDEX_VERSION:
            raise FormatError(f"{path}: unsupported index version {version}")
        (k,) = struct.unpack("<H", _read_exact(fh, 2, path, "code length"))
        if k < 1:
            raise FormatError(f"{path}: invalid code length {k}")
        (n,) = struct.unpack("<Q", _read_exact(fh, 8, path, "entry count"))
        nbytes = (k + 7) // 8
        ids = np.empty(n, dtype=np.uint32)
        labels = np.empty(n, dtype=np.uint16)
        codes = np.empty((n, nbytes), dtype=np.uint8)
        for i in range(n):
            ids[i], labels[i] = struct.unpack("<IH", _read_exact(fh, 6, path, f"record {i}"))
            codes[i] = np.frombuffer(_read_exact(fh, nbytes, path, f"record {i} code"), np.uint8)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after index payload")
    if len(set(ids.tolist())) != len(ids):
        raise FormatError(f"{path}: duplicate ids in index file")
    return HashIndex(k, ids, labels, codes)
