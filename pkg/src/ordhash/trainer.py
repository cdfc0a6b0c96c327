"""Mini-batch SGD over the hash-head parameters.

Every iteration samples a balanced pair batch, runs the forward pass with
the frozen attention maps, applies the exact analytic gradients to all R
blocks jointly (the blocks are independent, so the joint step equals R
sequential per-block steps on the same batch), and logs loss and gradient
norm. Plain SGD, constant learning rate.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, hashhead
from .attention import AttentionModel, attention_map
from .dataio import FeatureRecord
from .hashhead import HashHeadParams
from .lossgrad import PairInputs, analytic_gradients, batch_loss, forward_pairs

GRAD_NORM_LIMIT = 1e6


class TrainingDivergedError(Exception):
    """Loss went non-finite or the gradient norm exploded."""


@dataclass(frozen=True)
class TrainConfig:
    """Experiment descriptor for one head-training run."""

    k: int
    r: int
    n_iter: int
    n_batch: int
    lr: float
    seed: int
    balance: float = 0.5
    log_every: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"need at least 2 symbols per position, got K={self.k}")
        if self.r < 1:
            raise ValueError("code length must be positive")
        if self.n_iter < 0:
            raise ValueError("iteration count must be non-negative")
        if self.n_batch < 1:
            raise ValueError("batch size must be positive")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.balance <= 1.0:
            raise ValueError("balance must lie in [0, 1]")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")


@dataclass(frozen=True)
class TrainLogEntry:
    iter: int
    loss: float
    grad_norm: float
    wall_ms: int


def precompute_attention(model: AttentionModel, records: list[FeatureRecord]
                         ) -> np.ndarray:
    """Attention map per record, (N, Y, X); constant during head training."""
    return np.stack([attention_map(model, rec.fmap) for rec in records])


def _check_divergence(loss: float, grad_norm: float, iteration: int):
    if not np.isfinite(loss) or not np.isfinite(grad_norm):
        raise TrainingDivergedError(
            f"non-finite loss/gradient at iteration {iteration}: "
            f"loss={loss}, grad_norm={grad_norm}"
        )
    if grad_norm > GRAD_NORM_LIMIT:
        raise TrainingDivergedError(
            f"gradient norm {grad_norm:.3e} exceeded {GRAD_NORM_LIMIT:.0e} "
            f"at iteration {iteration}"
        )


def train(records: list[FeatureRecord], model: AttentionModel,
          config: TrainConfig) -> tuple[HashHeadParams, list[TrainLogEntry]]:
    """Run the training loop; returns final parameters and the loss log.

    Deterministic given the config seed: the same seed initializes the
    parameters and drives the pair sampler. Only the 4R head blocks are
    mutated; records and the attention model are read-only inputs.
    """
    if not records:
        raise ValueError("no training records")
    m = records[0].gvec.shape[0]
    rng = np.random.default_rng(config.seed)
    params = hashhead.init_params(m, config.k, config.r, rng)

    fmaps = np.stack([rec.fmap for rec in records])
    gvecs = np.stack([rec.gvec for rec in records])
    attns = precompute_attention(model, records)

    log: list[TrainLogEntry] = []
    started = time.monotonic()
    for it in range(1, config.n_iter + 1):
        batch = dataio.sample_pairs(records, config.n_batch, rng, config.balance)
        inputs = PairInputs(
            fmaps_i=fmaps[batch.i], gvecs_i=gvecs[batch.i], attns_i=attns[batch.i],
            fmaps_j=fmaps[batch.j], gvecs_j=gvecs[batch.j], attns_j=attns[batch.j],
            s=batch.s,
        )
        pf = forward_pairs(params, inputs)
        loss = batch_loss(pf)
        grads = analytic_gradients(params, pf)
        grad_norm = grads.norm()
        _check_divergence(loss, grad_norm, it)
        for p_block, g_block in zip(params.blocks(), grads.blocks()):
            p_block -= config.lr * g_block
        if it == 1 or it == config.n_iter or it % config.log_every == 0:
            log.append(TrainLogEntry(
                iter=it, loss=loss, grad_norm=grad_norm,
                wall_ms=int((time.monotonic() - started) * 1000),
            ))
    return params, log


def write_log(log: list[TrainLogEntry], path):
    lines = ["iter,loss,grad_norm,wall_ms"]
    lines += [f"{e.iter},{e.loss!r},{e.grad_norm!r},{e.wall_ms}" for e in log]
    Path(path).write_text("\n".join(lines) + "\n")


def read_log(path) -> list[TrainLogEntry]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "iter,loss,grad_norm,wall_ms":
        raise ValueError(f"{path}: not a training log")
    out = []
    for line in lines[1:]:
        it, loss, gn, ms = line.split(",")
        out.append(TrainLogEntry(iter=int(it), loss=float(loss),
                                 grad_norm=float(gn), wall_ms=int(ms)))
    return out


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".config")


def checkpoint_save(params: HashHeadParams, path, config: TrainConfig | None = None):
    """Write the head checkpoint plus a sidecar recording the run config."""
    hashhead.save_head(params, path)
    if config is not None:
        fields = (f"k={config.k}\nr={config.r}\nn_iter={config.n_iter}\n"
                  f"n_batch={config.n_batch}\nlr={config.lr!r}\n"
                  f"seed={config.seed}\nbalance={config.balance!r}\n"
                  f"log_every={config.log_every}\n")
        _sidecar_path(path).write_text(fields)


def checkpoint_load(path) -> HashHeadParams:
    return hashhead.load_head(path)


def read_config_sidecar(path) -> TrainConfig | None:
    side = _sidecar_path(path)
    if not side.exists():
        return None
    fields = dict(line.split("=", 1) for line in side.read_text().splitlines() if line)
    return TrainConfig(
        k=int(fields["k"]), r=int(fields["r"]), n_iter=int(fields["n_iter"]),
        n_batch=int(fields["n_batch"]), lr=float(fields["lr"]),
        seed=int(fields["seed"]), balance=float(fields["balance"]),
        log_every=int(fields["log_every"]),
    )
