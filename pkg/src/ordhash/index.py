"""Code database and exact nearest-neighbor search over K-ary codes.

Codes are stored packed: each symbol occupies ceil(log2 K) bits; a 64-bit
word holds floor(64 / bits) symbols, slot i sitting at bit offset i*bits
from the least-significant end (symbols never straddle words). Distances
are computed on the packed form via XOR folding.

Two distances are available:

* ``symbol`` (default): number of positions whose symbols differ
* ``binary-expansion``: Hamming distance between the concatenated
  fixed-width binary expansions of the symbols
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio

CODES_MAGIC = b"DOHC"
CODES_VERSION = 0x01
DISTANCE_KINDS = ("symbol", "binary-expansion")


def bits_per_symbol(k: int) -> int:
    if k < 2:
        raise ValueError(f"need at least 2 symbols, got K={k}")
    return (k - 1).bit_length()


def _layout(k: int, r: int) -> tuple[int, int, int]:
    """(bits per symbol, symbols per word, words per code)."""
    bits = bits_per_symbol(k)
    per_word = 64 // bits
    words = (r + per_word - 1) // per_word
    return bits, per_word, words


def bit_budget(n_c: int, k: int) -> int:
    """Code length R giving an n_c-binary-bit budget at K symbols: n_c / log2(K).

    K must be a power of two and log2(K) must divide n_c; otherwise the
    error names the nearest budgets that would work.
    """
    if n_c < 1:
        raise ValueError("bit budget must be positive")
    if k < 2 or (k & (k - 1)) != 0:
        raise ValueError(f"K must be a power of two >= 2, got {k}")
    bits = k.bit_length() - 1
    if n_c % bits != 0:
        lo = (n_c // bits) * bits
        hi = lo + bits
        near = f"{hi}" if lo == 0 else f"{lo} or {hi}"
        raise ValueError(
            f"bit budget {n_c} is not a multiple of log2({k})={bits}; "
            f"nearest valid budgets: {near}"
        )
    return n_c // bits


def pack_codes(codes, k: int) -> np.ndarray:
    """Pack integer codes (N, R) into (N, words) uint64."""
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.size and int(codes.max()) >= k:
        raise ValueError(f"code symbol {int(codes.max())} out of range for K={k}")
    n, r = codes.shape
    bits, per_word, words = _layout(k, r)
    packed = np.zeros((n, words), dtype=np.uint64)
    for pos in range(r):
        word, slot = divmod(pos, per_word)
        packed[:, word] |= codes[:, pos] << np.uint64(slot * bits)
    return packed


def unpack_codes(packed, k: int, r: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`: (N, words) uint64 -> (N, R) int64."""
    packed = np.asarray(packed, dtype=np.uint64)
    bits, per_word, words = _layout(k, r)
    if packed.shape[1] != words:
        raise ValueError(f"expected {words} words per code, got {packed.shape[1]}")
    mask = np.uint64((1 << bits) - 1)
    out = np.empty((packed.shape[0], r), dtype=np.int64)
    for pos in range(r):
        word, slot = divmod(pos, per_word)
        out[:, pos] = ((packed[:, word] >> np.uint64(slot * bits)) & mask).astype(np.int64)
    return out


def distance(a, b) -> int:
    """Number of positions at which two equal-length codes differ."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"code shape mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


@dataclass
class CodeDatabase:
    """Parallel id / label / packed-code storage for one split."""

    ids: list[str]
    labels: list[frozenset[int]]
    packed: np.ndarray  # (N, words) uint64
    k: int
    r: int

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, ids, labels, codes, k: int, r: int) -> "CodeDatabase":
        codes = np.asarray(codes, dtype=np.int64)
        if codes.shape != (len(ids), r):
            raise ValueError(
                f"expected codes of shape ({len(ids)}, {r}), got {codes.shape}"
            )
        if len(labels) != len(ids):
            raise ValueError("ids and labels must be parallel")
        return cls(ids=list(ids), labels=[frozenset(ls) for ls in labels],
                   packed=pack_codes(codes, k), k=k, r=r)

    def codes(self) -> np.ndarray:
        return unpack_codes(self.packed, self.k, self.r)


@dataclass(frozen=True)
class RankedResult:
    """Database entries ordered by ascending distance, ties by insertion order."""

    ids: list[str]
    indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _slot_lsb_mask(bits: int, used_in_word: np.ndarray) -> np.ndarray:
    """Per-word mask with a 1 at the lowest bit of each occupied slot."""
    masks = np.zeros_like(used_in_word, dtype=np.uint64)
    for w, used in enumerate(used_in_word):
        m = 0
        for slot in range(int(used)):
            m |= 1 << (slot * bits)
        masks[w] = m
    return masks


def _packed_distances(db: CodeDatabase, q_packed: np.ndarray, kind: str) -> np.ndarray:
    bits, per_word, words = _layout(db.k, db.r)
    xor = db.packed ^ q_packed[None, :]
    used = np.array([min(per_word, db.r - w * per_word) for w in range(words)])
    if kind == "binary-expansion":
        full = np.zeros(words, dtype=np.uint64)
        for w in range(words):
            full[w] = ((1 << (int(used[w]) * bits)) - 1) if used[w] else 0
        return np.bitwise_count(xor & full[None, :]).sum(axis=1).astype(np.int64)
    # symbol mismatch: OR-fold each slot's bits down to the slot's lowest bit
    folded = xor.copy()
    for t in range(1, bits):
        folded |= xor >> np.uint64(t)
    folded &= _slot_lsb_mask(bits, used)[None, :]
    return np.bitwise_count(folded).sum(axis=1).astype(np.int64)


def search(db: CodeDatabase, query_code, top_n: int, kind: str = "symbol"
           ) -> RankedResult:
    """Exact linear scan: the top_n entries by ascending distance."""
    if len(db) == 0:
        raise ValueError("empty code database")
    if top_n < 1:
        raise ValueError("top_n must be positive")
    if kind not in DISTANCE_KINDS:
        raise ValueError(f"distance kind must be one of {DISTANCE_KINDS}")
    query_code = np.asarray(query_code, dtype=np.int64)
    if query_code.shape != (db.r,):
        raise ValueError(f"query code has shape {query_code.shape}, expected ({db.r},)")
    if int(query_code.max()) >= db.k or int(query_code.min()) < 0:
        raise ValueError(f"query symbols out of range for K={db.k}")
    dists = _packed_distances(db, pack_codes(query_code, db.k)[0], kind)
    top_n = min(top_n, len(db))
    order = np.argsort(dists, kind="stable")[:top_n]
    return RankedResult(ids=[db.ids[i] for i in order], indices=order,
                        distances=dists[order])


def save_codes(db: CodeDatabase, path):
    w = binio.ByteWriter()
    w.raw(CODES_MAGIC)
    w.u8(CODES_VERSION)
    w.u32(db.k)
    w.u32(db.r)
    w.u32(len(db))
    w.raw(np.ascontiguousarray(db.packed, dtype="<u8").tobytes())
    for rid, labels in zip(db.ids, db.labels):
        w.string_u16(rid)
        w.u16(len(labels))
        for lab in sorted(labels):
            w.u16(lab)
    Path(path).write_bytes(w.getvalue())


def load_codes(path) -> CodeDatabase:
    rd = binio.ByteReader(Path(path).read_bytes(), context=str(path))
    rd.expect_magic(CODES_MAGIC)
    rd.expect_version(CODES_VERSION)
    k = rd.u32("K")
    r = rd.u32("R")
    count = rd.u32("record count")
    _, _, words = _layout(k, r)
    packed = np.frombuffer(
        rd.take(8 * count * words, "packed codes"), dtype="<u8"
    ).reshape(count, words).astype(np.uint64)
    ids = []
    labels = []
    for idx in range(count):
        ids.append(rd.string_u16(f"entry {idx} id"))
        n_labels = rd.u16(f"entry {idx} label count")
        labels.append(frozenset(rd.u16(f"entry {idx} label") for _ in range(n_labels)))
    rd.expect_end()
    return CodeDatabase(ids=ids, labels=labels, packed=packed, k=k, r=r)
