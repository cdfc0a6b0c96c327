"""Feature dataset: on-disk format, loading, similarity labels, pair sampling,
and synthetic desk-scale generation.

A dataset is a pair of files sharing a path prefix:

``<prefix>.manifest``
    Text. First line is the magic ``DOHDATA1``, followed by ``key=value``
    lines: M, X, Y, C, count, split, checksum.

``<prefix>.feat``
    Binary. Magic ``DOHF``, version byte 0x01, then one entry per record,
    concatenated in id order. Per record: id (u16 length + UTF-8 bytes),
    label count (u16), labels (u16 each), the global feature vector as M
    little-endian float32, then the spatial feature map as M*X*Y float32 in
    (channel, row, col) order. ``checksum`` in the manifest is the FNV-1a
    64-bit hash of everything after the version byte.

Values are stored at 32-bit precision and widened to float64 on load, so a
dataset round-trips bit-exactly iff its in-memory values are float32
representable (everything written by :func:`synth_generate` is).
"""
from __future__ import annotations

from dataclasses import dataclass

from pathlib import Path

import numpy as np

from . import binio
from .numerics import as_f64

MANIFEST_MAGIC = "DOHDATA1"
FEAT_MAGIC = b"DOHF"
FEAT_VERSION = 0x01
SPLITS = ("train", "database", "query")

# gain of the prototype signal inside a record's spatial block, relative to
# the unit prototype carried by the global vector; calibrated so the default
# trainer settings converge on generated data
BLOCK_GAIN = 4.0


class DatasetError(Exception):
    """Base class for dataset load/save failures."""


class DimensionError(DatasetError):
    """A record's array shapes disagree with the manifest dimensions."""


class NonFiniteError(DatasetError):
    """A record contains NaN or Inf."""


class ChecksumError(DatasetError):
    """The .feat payload hash does not match the manifest checksum."""


class SamplingError(Exception):
    """The requested pair batch cannot be drawn from the given records."""


@dataclass(frozen=True)
class DatasetManifest:
    m: int
    x: int
    y: int
    c: int
    record_count: int
    split: str
    checksum: int

    def __post_init__(self):
        if min(self.m, self.x, self.y) < 1:
            raise ValueError("manifest dimensions must be positive")
        if self.c < 2:
            raise ValueError("manifest must declare at least 2 categories")
        if self.record_count < 0:
            raise ValueError("record count must be non-negative")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class FeatureRecord:
    """One item's ingested features: spatial map, global vector, labels."""

    id: str
    labels: frozenset[int]
    fmap: np.ndarray  # (M, Y, X) float64
    gvec: np.ndarray  # (M,) float64


@dataclass(frozen=True)
class PairBatch:
    """Index pairs (i, j) with similarity labels s in {0, 1}."""

    i: np.ndarray
    j: np.ndarray
    s: np.ndarray

    def __len__(self) -> int:
        return len(self.s)


def validate_record(rec: FeatureRecord, manifest: DatasetManifest):
    if not rec.labels:
        raise DatasetError(f"record {rec.id!r} has no labels")
    if any(lab < 0 or lab >= manifest.c for lab in rec.labels):
        raise DatasetError(f"record {rec.id!r} has a label outside [0, {manifest.c})")
    if rec.gvec.shape != (manifest.m,):
        raise DimensionError(
            f"record {rec.id!r}: global vector has shape {rec.gvec.shape}, "
            f"manifest says ({manifest.m},)"
        )
    expect = (manifest.m, manifest.y, manifest.x)
    if rec.fmap.shape != expect:
        raise DimensionError(
            f"record {rec.id!r}: feature map has shape {rec.fmap.shape}, "
            f"manifest says {expect}"
        )
    if not (np.all(np.isfinite(rec.gvec)) and np.all(np.isfinite(rec.fmap))):
        raise NonFiniteError(f"record {rec.id!r} contains NaN or Inf")


def _manifest_path(prefix) -> Path:
    return Path(str(prefix) + ".manifest")


def _feat_path(prefix) -> Path:
    return Path(str(prefix) + ".feat")


def save_dataset(prefix, records: list[FeatureRecord], *, m: int, x: int, y: int,
                 c: int, split: str) -> DatasetManifest:
    """Write ``<prefix>.manifest`` + ``<prefix>.feat``; returns the manifest.

    Records are written in id order. Every record is validated against the
    declared dimensions before anything touches disk.
    """
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate record ids")
    probe = DatasetManifest(m=m, x=x, y=y, c=c, record_count=len(records),
                            split=split, checksum=0)
    ordered = sorted(records, key=lambda r: r.id)
    for rec in ordered:
        validate_record(rec, probe)

    w = binio.ByteWriter()
    for rec in ordered:
        w.string_u16(rec.id)
        labels = sorted(rec.labels)
        w.u16(len(labels))
        for lab in labels:
            w.u16(lab)
        w.raw(np.ascontiguousarray(rec.gvec, dtype="<f4").tobytes())
        w.raw(np.ascontiguousarray(rec.fmap, dtype="<f4").tobytes())
    payload = w.getvalue()
    checksum = binio.fnv1a64(payload)

    manifest = DatasetManifest(m=m, x=x, y=y, c=c, record_count=len(records),
                               split=split, checksum=checksum)
    _feat_path(prefix).write_bytes(FEAT_MAGIC + bytes([FEAT_VERSION]) + payload)
    _manifest_path(prefix).write_text(
        f"{MANIFEST_MAGIC}\n"
        f"M={m}\nX={x}\nY={y}\nC={c}\n"
        f"count={len(records)}\nsplit={split}\nchecksum={checksum}\n"
    )
    return manifest


def load_manifest(prefix) -> DatasetManifest:
    path = _manifest_path(prefix)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MANIFEST_MAGIC:
        raise binio.FileFormatError(f"{path}: missing manifest magic {MANIFEST_MAGIC}")
    fields = {}
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise binio.FileFormatError(f"{path}: malformed line {line!r}")
        fields[key] = value
    try:
        return DatasetManifest(
            m=int(fields["M"]), x=int(fields["X"]), y=int(fields["Y"]),
            c=int(fields["C"]), record_count=int(fields["count"]),
            split=fields["split"], checksum=int(fields["checksum"]),
        )
    except KeyError as exc:
        raise binio.FileFormatError(f"{path}: missing manifest key {exc}") from None


def load_dataset(prefix) -> tuple[DatasetManifest, list[FeatureRecord]]:
    """Load and validate a dataset written by :func:`save_dataset`."""
    manifest = load_manifest(prefix)
    raw = _feat_path(prefix).read_bytes()
    r = binio.ByteReader(raw, context=str(_feat_path(prefix)))
    r.expect_magic(FEAT_MAGIC)
    r.expect_version(FEAT_VERSION)
    # checked after parsing: a truncated record is the more specific diagnosis
    checksum_ok = binio.fnv1a64(raw[r.offset:]) == manifest.checksum

    m, x, y = manifest.m, manifest.x, manifest.y
    records = []
    for idx in range(manifest.record_count):
        what = f"record {idx}"
        rid = r.string_u16(f"{what} id")
        n_labels = r.u16(f"{what} label count")
        labels = frozenset(r.u16(f"{what} label") for _ in range(n_labels))
        gvec = np.frombuffer(r.take(4 * m, f"{what} global vector"), dtype="<f4")
        fmap = np.frombuffer(r.take(4 * m * y * x, f"{what} feature map"), dtype="<f4")
        rec = FeatureRecord(
            id=rid,
            labels=labels,
            fmap=as_f64(fmap).reshape(m, y, x),
            gvec=as_f64(gvec),
        )
        validate_record(rec, manifest)
        records.append(rec)
    if not checksum_ok:
        raise ChecksumError(f"{_feat_path(prefix)}: payload checksum mismatch")
    try:
        r.expect_end()
    except binio.FileFormatError as exc:
        raise DimensionError(
            f"{_feat_path(prefix)}: payload larger than the manifest dimensions "
            f"imply ({exc})"
        ) from None
    return manifest, records


def labels_similar(a: frozenset[int] | set[int], b: frozenset[int] | set[int]) -> int:
    """1 iff the two label sets share at least one category, else 0."""
    return 1 if a & b else 0


def similarity_label(a: FeatureRecord, b: FeatureRecord) -> int:
    return labels_similar(a.labels, b.labels)


def sample_pairs(records: list[FeatureRecord], n_batch: int, rng,
                 balance: float = 0.5) -> PairBatch:
    """Draw ``n_batch`` distinct-index pairs with round(balance*n_batch) of
    them similar; deterministic for a given seed or Generator.

    Raises :class:`SamplingError` when a requested pair kind cannot be found
    (e.g. a single-category dataset has no dissimilar pairs).
    """
    if not 0.0 <= balance <= 1.0:
        raise ValueError(f"balance must lie in [0, 1], got {balance}")
    if n_batch < 1:
        raise ValueError("n_batch must be positive")
    n = len(records)
    if n < 2:
        raise SamplingError("need at least 2 records to form pairs")
    rng = np.random.default_rng(rng)

    n_sim = int(round(balance * n_batch))
    n_dis = n_batch - n_sim
    labels = [r.labels for r in records]

    if n_sim > 0:
        seen: set[int] = set()
        dupes = False
        for ls in labels:
            if seen & ls:
                dupes = True
                break
            seen |= ls
        if not dupes:
            raise SamplingError("no similar pairs exist: no category is shared "
                                "by two records")
    if n_dis > 0:
        common = frozenset.intersection(*[frozenset(ls) for ls in labels])
        if common:
            raise SamplingError("no dissimilar pairs exist: every record shares "
                                f"category {min(common)}")

    sim: list[tuple[int, int]] = []
    dis: list[tuple[int, int]] = []
    attempts = 0
    cap = 1000 * n_batch + 10000
    while len(sim) < n_sim or len(dis) < n_dis:
        if attempts >= cap:
            missing = "similar" if len(sim) < n_sim else "dissimilar"
            raise SamplingError(
                f"could not draw enough {missing} pairs after {attempts} attempts"
            )
        draw = rng.integers(0, n, size=(256, 2))
        attempts += len(draw)
        for i, j in draw:
            if i == j:
                continue
            if labels_similar(labels[i], labels[j]):
                if len(sim) < n_sim:
                    sim.append((i, j))
            elif len(dis) < n_dis:
                dis.append((i, j))
            if len(sim) == n_sim and len(dis) == n_dis:
                break

    pairs = np.array(sim + dis, dtype=np.int64).reshape(n_batch, 2)
    s = np.concatenate([np.ones(n_sim), np.zeros(n_dis)])
    order = rng.permutation(n_batch)
    return PairBatch(i=pairs[order, 0], j=pairs[order, 1], s=s[order])


def synth_generate(prefix, *, n_per_class: int, c: int, m: int, x: int, y: int,
                   noise_sigma: float, seed: int, split: str = "train",
                   ) -> tuple[DatasetManifest, list[FeatureRecord]]:
    """Generate a synthetic dataset on disk and return it.

    Each category gets a random unit prototype in R^M; class prototypes
    depend only on (seed, c, m), so splits generated with the same seed
    share them while drawing independent record noise. A record's global
    vector is its prototype plus Gaussian noise, and its feature map carries
    the prototype across a contiguous spatial block (noise elsewhere), so
    the attention classifier has a recoverable localized signal.
    """
    if min(n_per_class, c, m, x, y) < 1:
        raise ValueError("all synthetic dimensions must be positive")
    if c < 2:
        raise ValueError("need at least 2 categories")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")

    proto_rng = np.random.default_rng([int(seed), 0])
    protos = proto_rng.standard_normal((c, m))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    rng = np.random.default_rng([int(seed), 1 + SPLITS.index(split)])
    bh = max(1, y // 2)
    bw = max(1, x // 2)
    records = []
    for cat in range(c):
        for ordinal in range(n_per_class):
            gvec = protos[cat] + noise_sigma * rng.standard_normal(m)
            top = int(rng.integers(0, y - bh + 1))
            left = int(rng.integers(0, x - bw + 1))
            fmap = noise_sigma * rng.standard_normal((m, y, x))
            fmap[:, top : top + bh, left : left + bw] += \
                BLOCK_GAIN * protos[cat][:, None, None]
            records.append(FeatureRecord(
                id=f"{split}-{cat:03d}-{ordinal:05d}",
                labels=frozenset({cat}),
                # quantize to storage precision so the dataset round-trips
                fmap=as_f64(fmap.astype(np.float32)),
                gvec=as_f64(gvec.astype(np.float32)),
            ))
    manifest = save_dataset(prefix, records, m=m, x=x, y=y, c=c, split=split)
    return manifest, records
