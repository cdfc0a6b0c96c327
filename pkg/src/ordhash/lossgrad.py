"""Pairwise agreement loss and its exact gradients for the hash head.

For a record pair (i, j) with similarity s in {0, 1}:

* per-position agreement:  phi_r = h^r(i) . h^r(j), the probability that both
  records pick the same winning symbol at position r
* sequence agreement:      eps = (1/R) sum_r phi_r
* pair loss:               0.5 * (eps - s)^2
* batch loss:              mean pair loss over the batch

The gradient chains (eps - s) through (1/R), the softmax Jacobian of each
h^r, and the derivatives of the fused confidences d = l * g:

    dphi_r/dd^r(i) = h^r(i) * h^r(j) - phi_r * h^r(i)     (and symmetrically j)
    dd_k/dw_sk     = g_k * sum_yx  xi_yx^k (pi_yx - l_k) z_yx
    dd_k/db_sk     = g_k * sum_yx  xi_yx^k (pi_yx - l_k)
    dd_k/dw_gk     = l_k * v
    dd_k/db_gk     = l_k

where xi is the per-symbol location distribution and pi the attention map.
The spatial-branch derivative carries the attention weights and the sum over
locations that the definition of l_k induces; every term is gated by the
central-finite-difference oracle in this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hashhead import BatchForward, HashHeadParams, forward_batch
from .numerics import as_f64

BLOCK_NAMES = ("spatial_w", "spatial_b", "global_w", "global_b")


@dataclass(frozen=True)
class PairInputs:
    """Stacked raw head inputs for P pairs; endpoint arrays are parallel."""

    fmaps_i: np.ndarray  # (P, M, Y, X)
    gvecs_i: np.ndarray  # (P, M)
    attns_i: np.ndarray  # (P, Y, X)
    fmaps_j: np.ndarray
    gvecs_j: np.ndarray
    attns_j: np.ndarray
    s: np.ndarray        # (P,) in {0, 1}

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class PairForward:
    """Forward state of a pair batch: both endpoints plus agreement terms."""

    fi: BatchForward
    fj: BatchForward
    s: np.ndarray
    phi: np.ndarray  # (P, R) per-position agreement
    eps: np.ndarray  # (P,) sequence agreement

    def __len__(self) -> int:
        return len(self.s)


@dataclass
class HeadGradients:
    """Gradient blocks mirroring the shapes of HashHeadParams."""

    spatial_w: np.ndarray
    spatial_b: np.ndarray
    global_w: np.ndarray
    global_b: np.ndarray

    def blocks(self):
        return (self.spatial_w, self.spatial_b, self.global_w, self.global_b)

    def norm(self) -> float:
        return math.sqrt(sum(float((b * b).sum()) for b in self.blocks()))


def pair_agreement(rep_i, rep_j, r: int) -> float:
    """Probability both records pick the same symbol at position r."""
    rep_i = as_f64(rep_i)
    rep_j = as_f64(rep_j)
    if rep_i.shape != rep_j.shape or rep_i.ndim != 2:
        raise ValueError(
            f"representation shape mismatch: {rep_i.shape} vs {rep_j.shape}"
        )
    return float(rep_i[r] @ rep_j[r])


def sequence_agreement(rep_i, rep_j) -> float:
    """Mean per-position agreement; the normalizer equals the number of
    positions because every representation row sums to 1."""
    rep_i = as_f64(rep_i)
    rep_j = as_f64(rep_j)
    if rep_i.shape != rep_j.shape or rep_i.ndim != 2:
        raise ValueError(
            f"representation shape mismatch: {rep_i.shape} vs {rep_j.shape}"
        )
    return float((rep_i * rep_j).sum() / rep_i.shape[0])


def pair_loss(eps: float, s) -> float:
    """Squared deviation of the sequence agreement from the similarity label."""
    return 0.5 * float(eps - s) ** 2


def forward_pairs(params: HashHeadParams, inputs: PairInputs) -> PairForward:
    fi = forward_batch(params, inputs.fmaps_i, inputs.gvecs_i, inputs.attns_i)
    fj = forward_batch(params, inputs.fmaps_j, inputs.gvecs_j, inputs.attns_j)
    phi = (fi.rep * fj.rep).sum(axis=2)
    eps = phi.mean(axis=1)
    return PairForward(fi=fi, fj=fj, s=as_f64(inputs.s), phi=phi, eps=eps)


def batch_loss(pf: PairForward) -> float:
    """Mean pair loss over the batch."""
    if len(pf) == 0:
        raise ValueError("empty pair batch")
    return float(0.5 * ((pf.eps - pf.s) ** 2).mean())


def loss_from_params(params: HashHeadParams, inputs: PairInputs) -> float:
    return batch_loss(forward_pairs(params, inputs))


def _endpoint_terms(coef, u, fwd: BatchForward, grads: HeadGradients):
    """Accumulate one endpoint's contribution to every gradient block.

    coef is (P,) holding (eps - s)/(R*P); u is (P, R, K), the softmax-Jacobian
    contraction of the agreement against this endpoint's confidences.
    """
    cu = coef[:, None, None] * u
    cl = cu * fwd.local_aw
    grads.global_w += np.einsum("prk,pm->rmk", cl, fwd.gvecs, optimize=True)
    grads.global_b += cl.sum(axis=0)

    cg = cu * fwd.global_aw
    spread = fwd.loc_prob * (
        fwd.attns[:, None, None, :, :] - fwd.local_aw[:, :, :, None, None]
    )
    grads.spatial_b += np.einsum("prk,prkyx->rk", cg, spread, optimize=True)
    grads.spatial_w += np.einsum(
        "prk,prkyx,pmyx->rmk", cg, spread, fwd.fmaps, optimize=True
    )


def analytic_gradients(params: HashHeadParams, pf: PairForward) -> HeadGradients:
    """Exact gradient of the batch loss w.r.t. every head parameter block."""
    r, k = params.r, params.k
    if pf.fi.rep.shape[1:] != (r, k) or pf.fi.fmaps.shape[1] != params.m:
        raise ValueError(
            f"stale forward state: batch was computed for shape "
            f"{pf.fi.rep.shape[1:]} / M={pf.fi.fmaps.shape[1]}, parameters are "
            f"(R, K)=({r}, {k}) / M={params.m}"
        )
    p = len(pf)
    coef = (pf.eps - pf.s) / (r * p)
    u_i = pf.fi.rep * pf.fj.rep - pf.phi[:, :, None] * pf.fi.rep
    u_j = pf.fj.rep * pf.fi.rep - pf.phi[:, :, None] * pf.fj.rep
    grads = HeadGradients(
        spatial_w=np.zeros_like(params.spatial_w),
        spatial_b=np.zeros_like(params.spatial_b),
        global_w=np.zeros_like(params.global_w),
        global_b=np.zeros_like(params.global_b),
    )
    _endpoint_terms(coef, u_i, pf.fi, grads)
    _endpoint_terms(coef, u_j, pf.fj, grads)
    return grads


def central_difference(fn: Callable[[list[np.ndarray]], float],
                       arrays: list[np.ndarray], step: float) -> list[np.ndarray]:
    """Central finite differences of a scalar function of several arrays,
    one coordinate at a time. Intended for tiny problems only."""
    if step <= 0:
        raise ValueError("step must be positive")
    work = [a.astype(np.float64).copy() for a in arrays]
    out = [np.zeros_like(a) for a in work]
    for a, g in zip(work, out):
        flat_a = a.ravel()
        flat_g = g.ravel()
        for idx in range(flat_a.size):
            orig = flat_a[idx]
            flat_a[idx] = orig + step
            hi = fn(work)
            flat_a[idx] = orig - step
            lo = fn(work)
            flat_a[idx] = orig
            flat_g[idx] = (hi - lo) / (2.0 * step)
    return out


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_extended(blocks: list[np.ndarray], inputs: PairInputs) -> np.longdouble:
    """Batch loss recomputed in extended precision on its own forward path.

    The oracle differentiates this function instead of the float64 library
    path: differencing at step 1e-5 amplifies rounding of the loss by 5e4,
    and the extra mantissa bits keep that noise far below the comparison
    tolerance (which matters most for the spatial bias, whose true gradient
    is exactly zero because the location softmax is shift-invariant).
    """
    ld = np.longdouble
    sw, sb, gw, gb = (np.asarray(b, dtype=ld) for b in blocks)

    def rep_of(fmaps, gvecs, attns):
        scores = np.einsum("rmk,bmyx->brkyx", sw, fmaps.astype(ld))
        scores += sb[None, :, :, None, None]
        b_, r_, k_, y_, x_ = scores.shape
        loc = _softmax_rows(scores.reshape(b_, r_, k_, y_ * x_))
        flat_attn = attns.reshape(b_, y_ * x_).astype(ld)
        local = np.einsum("brkl,bl->brk", loc, flat_attn)
        glob = np.einsum("rmk,bm->brk", gw, gvecs.astype(ld)) + gb[None]
        return _softmax_rows(local * glob)

    rep_i = rep_of(inputs.fmaps_i, inputs.gvecs_i, inputs.attns_i)
    rep_j = rep_of(inputs.fmaps_j, inputs.gvecs_j, inputs.attns_j)
    eps = (rep_i * rep_j).sum(axis=2).mean(axis=1)
    diff = eps - inputs.s.astype(ld)
    return (ld(0.5) * diff * diff).mean()


def finite_difference_oracle(params: HashHeadParams, inputs: PairInputs,
                             step: float) -> HeadGradients:
    """Numerical gradient of the batch loss, one scalar parameter at a time."""

    def loss_of(arrays: list[np.ndarray]):
        return _loss_extended(arrays, inputs)

    blocks = central_difference(loss_of, list(params.blocks()), step)
    return HeadGradients(*blocks)


def relative_errors(analytic: HeadGradients, numeric: HeadGradients) -> dict[str, float]:
    """Per-block max of |a - f| / max(|a|, |f|, 1e-8) over coordinates."""
    out = {}
    for name, a, f in zip(BLOCK_NAMES, analytic.blocks(), numeric.blocks()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
        out[name] = float((np.abs(a - f) / denom).max())
    return out


def random_pair_inputs(rng, *, n_pairs: int, m: int, x: int, y: int) -> PairInputs:
    """Generic random inputs: normal features, non-negative attention grids."""
    rng = np.random.default_rng(rng)

    def end():
        return (rng.standard_normal((n_pairs, m, y, x)),
                rng.standard_normal((n_pairs, m)),
                rng.uniform(0.0, 1.0, size=(n_pairs, y, x)))

    fm_i, gv_i, at_i = end()
    fm_j, gv_j, at_j = end()
    s = rng.integers(0, 2, size=n_pairs).astype(np.float64)
    return PairInputs(fmaps_i=fm_i, gvecs_i=gv_i, attns_i=at_i,
                      fmaps_j=fm_j, gvecs_j=gv_j, attns_j=at_j, s=s)


def attention_pair_inputs(rng, *, n_pairs: int, m: int, x: int, y: int,
                          c: int) -> PairInputs:
    """Random pair inputs whose attention grids come from a random c-category
    classifier head, matching how the pipeline produces them."""
    from .attention import AttentionModel, attention_map

    rng = np.random.default_rng(rng)
    model = AttentionModel(weights=rng.normal(size=(m, c)),
                           bias=rng.normal(size=c))

    def end():
        fmaps = rng.standard_normal((n_pairs, m, y, x))
        attns = np.stack([attention_map(model, fm) for fm in fmaps])
        return fmaps, rng.standard_normal((n_pairs, m)), attns

    fm_i, gv_i, at_i = end()
    fm_j, gv_j, at_j = end()
    s = rng.integers(0, 2, size=n_pairs).astype(np.float64)
    return PairInputs(fmaps_i=fm_i, gvecs_i=gv_i, attns_i=at_i,
                      fmaps_j=fm_j, gvecs_j=gv_j, attns_j=at_j, s=s)


def random_params(rng, *, m: int, k: int, r: int, scale: float = 0.8) -> HashHeadParams:
    """Generic random parameters (non-zero biases, unlike the training init)."""
    rng = np.random.default_rng(rng)
    return HashHeadParams(
        spatial_w=rng.uniform(-scale, scale, size=(r, m, k)),
        spatial_b=rng.uniform(-scale, scale, size=(r, k)),
        global_w=rng.uniform(-scale, scale, size=(r, m, k)),
        global_b=rng.uniform(-scale, scale, size=(r, k)),
    )


@dataclass(frozen=True)
class GradCheckRow:
    k: int
    r: int
    block: str
    max_rel_err: float


def run_gradient_check(*, m: int = 3, x: int = 2, y: int = 2, c: int = 2,
                       k_values=(2, 3, 4), r_values=(1, 2, 3),
                       draws: int = 20, n_pairs: int = 4,
                       step: float = 1e-5, seed: int = 20240901
                       ) -> list[GradCheckRow]:
    """Compare analytic gradients against the finite-difference oracle on
    random draws at tiny dimensions; one row per (K, R, parameter block)
    holding the worst per-coordinate relative error seen."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in k_values:
        for r in r_values:
            worst = {name: 0.0 for name in BLOCK_NAMES}
            for _ in range(draws):
                params = random_params(rng, m=m, k=k, r=r)
                inputs = attention_pair_inputs(rng, n_pairs=n_pairs, m=m,
                                               x=x, y=y, c=c)
                grads = analytic_gradients(params, forward_pairs(params, inputs))
                oracle = finite_difference_oracle(params, inputs, step)
                for name, err in relative_errors(grads, oracle).items():
                    worst[name] = max(worst[name], err)
            for name in BLOCK_NAMES:
                rows.append(GradCheckRow(k=k, r=r, block=name,
                                         max_rel_err=worst[name]))
    return rows
