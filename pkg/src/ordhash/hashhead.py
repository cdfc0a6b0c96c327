"""Forward path of the ranking-based hash head.

Per code position r (of R) and candidate symbol k (of K):

* spatial score of latent pattern k at each location: w_sk . z_yx + b_sk
* location probability: softmax of those scores over the grid
* local awareness:   l_k = sum_yx attention_yx * location_prob_yx
* global awareness:  g_k = w_gk . v + b_gk
* fused confidence:  d_k = l_k * g_k
* symbol r of the code = argmax_k d_k; its softmax relaxation h^r is the
  per-symbol winner probability used during training.

All R blocks are independent: no parameters are shared across positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .numerics import argmax_first, as_f64, hadamard, matvec, require_finite, softmax_stable

HEAD_MAGIC = b"DOHH"
HEAD_VERSION = 0x01


@dataclass
class HashHeadParams:
    """Per-position transformation blocks, stacked over r.

    spatial_w: (R, M, K); spatial_b: (R, K); global_w: (R, M, K); global_b: (R, K)
    """

    spatial_w: np.ndarray
    spatial_b: np.ndarray
    global_w: np.ndarray
    global_b: np.ndarray

    def __post_init__(self):
        r, m, k = self.spatial_w.shape
        if k < 2:
            raise ValueError(f"need at least 2 symbols per position, got K={k}")
        if self.spatial_b.shape != (r, k) or self.global_b.shape != (r, k) \
                or self.global_w.shape != (r, m, k):
            raise ValueError("hash head parameter blocks have inconsistent shapes")
        for name in ("spatial_w", "spatial_b", "global_w", "global_b"):
            require_finite(getattr(self, name), name)

    @property
    def r(self) -> int:
        return self.spatial_w.shape[0]

    @property
    def m(self) -> int:
        return self.spatial_w.shape[1]

    @property
    def k(self) -> int:
        return self.spatial_w.shape[2]

    def blocks(self):
        return (self.spatial_w, self.spatial_b, self.global_w, self.global_b)

    def copy(self) -> "HashHeadParams":
        return HashHeadParams(*(b.copy() for b in self.blocks()))


@dataclass
class HeadIntermediates:
    """Forward quantities retained for gradient computation, stacked over r."""

    scores: np.ndarray     # (R, K, Y, X) spatial scores
    loc_prob: np.ndarray   # (R, K, Y, X) location probabilities, sum to 1 per (r, k)
    local_aw: np.ndarray   # (R, K)
    global_aw: np.ndarray  # (R, K)
    fused: np.ndarray      # (R, K)


def init_params(m: int, k: int, r: int, rng) -> HashHeadParams:
    """Uniform init with half-width sqrt(6/(M+K)) for weights, zero biases."""
    if m < 1 or k < 2 or r < 1:
        raise ValueError("need M >= 1, K >= 2, R >= 1")
    rng = np.random.default_rng(rng)
    half = math.sqrt(6.0 / (m + k))
    spatial_w = rng.uniform(-half, half, size=(r, m, k))
    global_w = rng.uniform(-half, half, size=(r, m, k))
    return HashHeadParams(
        spatial_w=spatial_w,
        spatial_b=np.zeros((r, k)),
        global_w=global_w,
        global_b=np.zeros((r, k)),
    )


def spatial_scores(w_s, b_s, fmap) -> np.ndarray:
    """Per-symbol score of each spatial location: (K, Y, X)."""
    w_s = as_f64(w_s)
    b_s = as_f64(b_s)
    fmap = as_f64(fmap)
    if fmap.ndim != 3 or w_s.ndim != 2 or w_s.shape[0] != fmap.shape[0] \
            or b_s.shape != (w_s.shape[1],):
        raise ValueError(
            f"spatial_scores dimension mismatch: weights {w_s.shape}, "
            f"bias {b_s.shape}, feature map {fmap.shape}"
        )
    return np.tensordot(w_s, fmap, axes=(0, 0)) + b_s[:, None, None]


def location_softmax(scores) -> np.ndarray:
    """Softmax over all grid locations, independently per symbol."""
    scores = as_f64(scores)
    k, y, x = scores.shape
    flat = softmax_stable(scores.reshape(k, y * x))
    return flat.reshape(k, y, x)


def local_awareness(attn, loc_prob) -> np.ndarray:
    """Attention-weighted mass of each symbol's location distribution: (K,)."""
    attn = as_f64(attn)
    loc_prob = as_f64(loc_prob)
    if loc_prob.ndim != 3 or attn.shape != loc_prob.shape[1:]:
        raise ValueError(
            f"grid shape mismatch: attention {attn.shape} vs "
            f"location probabilities {loc_prob.shape}"
        )
    return np.tensordot(loc_prob, attn, axes=([1, 2], [0, 1]))


def global_awareness(w_g, b_g, gvec) -> np.ndarray:
    """Affine response of each symbol against the global vector: (K,)."""
    b_g = as_f64(b_g)
    out = matvec(w_g, gvec)
    if b_g.shape != out.shape:
        raise ValueError(f"bias shape {b_g.shape} does not match K={out.shape[0]}")
    return out + b_g


def fuse(local_aw, global_aw) -> np.ndarray:
    """Element-wise product of local and global awareness."""
    return hadamard(local_aw, global_aw)


def ordinal_representation(params: HashHeadParams, fmap, gvec, attn
                           ) -> tuple[np.ndarray, HeadIntermediates]:
    """Winner-probability matrix (R, K) plus the retained intermediates.

    Row r is the softmax of the fused confidences of position r; each row
    sums to 1.
    """
    fmap = as_f64(fmap)
    gvec = as_f64(gvec)
    attn = as_f64(attn)
    r, k = params.r, params.k
    y, x = fmap.shape[1:]
    scores = np.empty((r, k, y, x))
    loc_prob = np.empty((r, k, y, x))
    local_aw = np.empty((r, k))
    global_aw = np.empty((r, k))
    for ri in range(r):
        scores[ri] = spatial_scores(params.spatial_w[ri], params.spatial_b[ri], fmap)
        loc_prob[ri] = location_softmax(scores[ri])
        local_aw[ri] = local_awareness(attn, loc_prob[ri])
        global_aw[ri] = global_awareness(params.global_w[ri], params.global_b[ri], gvec)
    fused = local_aw * global_aw
    rep = softmax_stable(fused)
    inter = HeadIntermediates(scores=scores, loc_prob=loc_prob,
                              local_aw=local_aw, global_aw=global_aw, fused=fused)
    return rep, inter


def encode(params: HashHeadParams, fmap, gvec, attn) -> np.ndarray:
    """K-ary code of one record: symbol r is the first argmax of the fused
    confidences (0-based), ties resolving to the lowest symbol."""
    _, inter = ordinal_representation(params, fmap, gvec, attn)
    return np.array([argmax_first(row) for row in inter.fused], dtype=np.int64)


@dataclass
class BatchForward:
    """Vectorized forward pass over a stack of records.

    Inputs are retained because the gradient of the fused confidences needs
    them: fmaps (B, M, Y, X), gvecs (B, M), attns (B, Y, X). Derived arrays
    are (B, R, K, Y, X) for loc_prob and (B, R, K) for the rest.
    """

    fmaps: np.ndarray
    gvecs: np.ndarray
    attns: np.ndarray
    loc_prob: np.ndarray
    local_aw: np.ndarray
    global_aw: np.ndarray
    fused: np.ndarray
    rep: np.ndarray

    def __len__(self) -> int:
        return self.fmaps.shape[0]


def forward_batch(params: HashHeadParams, fmaps, gvecs, attns) -> BatchForward:
    """Forward a stack of records through all R blocks at once.

    Produces exactly the quantities of :func:`ordinal_representation`, record
    by record (verified in tests); the einsum formulation just avoids Python
    loops inside the training iteration.
    """
    fmaps = as_f64(fmaps)
    gvecs = as_f64(gvecs)
    attns = as_f64(attns)
    b, m, y, x = fmaps.shape
    if gvecs.shape != (b, m) or attns.shape != (b, y, x):
        raise ValueError(
            f"batch shape mismatch: fmaps {fmaps.shape}, gvecs {gvecs.shape}, "
            f"attns {attns.shape}"
        )
    if m != params.m:
        raise ValueError(f"feature dim {m} does not match head M={params.m}")
    scores = np.einsum("rmk,bmyx->brkyx", params.spatial_w, fmaps, optimize=True)
    scores += params.spatial_b[None, :, :, None, None]
    r, k = params.r, params.k
    loc_prob = softmax_stable(scores.reshape(b, r, k, y * x)).reshape(b, r, k, y, x)
    local_aw = np.einsum("brkyx,byx->brk", loc_prob, attns, optimize=True)
    global_aw = np.einsum("rmk,bm->brk", params.global_w, gvecs, optimize=True)
    global_aw += params.global_b[None]
    fused = local_aw * global_aw
    rep = softmax_stable(fused)
    return BatchForward(fmaps=fmaps, gvecs=gvecs, attns=attns, loc_prob=loc_prob,
                        local_aw=local_aw, global_aw=global_aw, fused=fused, rep=rep)


def encode_batch(params: HashHeadParams, fmaps, gvecs, attns) -> np.ndarray:
    """Codes for a stack of records: (B, R) int64."""
    fwd = forward_batch(params, fmaps, gvecs, attns)
    return np.argmax(fwd.fused, axis=2).astype(np.int64)


def save_head(params: HashHeadParams, path):
    w = binio.ByteWriter()
    w.raw(HEAD_MAGIC)
    w.u8(HEAD_VERSION)
    w.u32(params.m)
    w.u32(params.k)
    w.u32(params.r)
    for ri in range(params.r):
        for block in (params.spatial_w[ri], params.spatial_b[ri],
                      params.global_w[ri], params.global_b[ri]):
            w.raw(np.ascontiguousarray(block, dtype="<f8").tobytes())
    Path(path).write_bytes(w.getvalue())


def load_head(path) -> HashHeadParams:
    rd = binio.ByteReader(Path(path).read_bytes(), context=str(path))
    rd.expect_magic(HEAD_MAGIC)
    rd.expect_version(HEAD_VERSION)
    m = rd.u32("M")
    k = rd.u32("K")
    r = rd.u32("R")
    spatial_w = np.empty((r, m, k))
    spatial_b = np.empty((r, k))
    global_w = np.empty((r, m, k))
    global_b = np.empty((r, k))
    for ri in range(r):
        spatial_w[ri] = np.frombuffer(
            rd.take(8 * m * k, f"block {ri} spatial weights"), dtype="<f8"
        ).reshape(m, k)
        spatial_b[ri] = np.frombuffer(
            rd.take(8 * k, f"block {ri} spatial bias"), dtype="<f8")
        global_w[ri] = np.frombuffer(
            rd.take(8 * m * k, f"block {ri} global weights"), dtype="<f8"
        ).reshape(m, k)
        global_b[ri] = np.frombuffer(
            rd.take(8 * k, f"block {ri} global bias"), dtype="<f8")
    rd.expect_end()
    return HashHeadParams(spatial_w=spatial_w, spatial_b=spatial_b,
                          global_w=global_w, global_b=global_b)
