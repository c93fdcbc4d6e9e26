"""Pretraining losses: contrastive alignment, image-text matching with
mined in-batch negatives, grounded language modeling, and their weighted
joint objective. Distillation lives in ops.kd_loss and is re-exported here.

Everything consumes tape tensors and returns scalar tape tensors, so any
mix of these losses can be backpropagated through one backward call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import errors, ops, vocab
from .ops import kd_loss  # noqa: F401  (part of this module's public api)
from .tensor import Tensor

Label = bool  # True = matched pair


@dataclass
class BatchEmbeddings:
    """Aligned unit-norm projection rows; row i of each side is a positive
    pair. temperature divides the similarity logits and may be a learnable
    scalar tensor."""

    image_proj: Tensor
    text_proj: Tensor
    temperature: Union[Tensor, float]

    def __post_init__(self):
        a, b = self.image_proj, self.text_proj
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape != b.shape:
            raise errors.ShapeMismatch(
                f"projection shapes {a.shape} vs {b.shape}")
        if a.shape[0] < 1:
            raise errors.ShapeMismatch("empty embedding batch")
        for name, t in (("image_proj", a), ("text_proj", b)):
            norms = np.linalg.norm(t.data, axis=-1)
            if not np.allclose(norms, 1.0, atol=1e-5):
                raise errors.ConfigError(f"{name} rows are not unit norm")
        tau = self.temperature
        value = float(tau.data) if isinstance(tau, Tensor) else float(tau)
        if value <= 0:
            raise errors.ConfigError("temperature must be positive")

    @property
    def n(self) -> int:
        return self.image_proj.shape[0]


def itc_loss(batch: BatchEmbeddings) -> tuple[Tensor, np.ndarray]:
    """Symmetric InfoNCE over S/tau with the diagonal as the positive
    class. Returns the scalar loss and a detached copy of S for negative
    mining."""
    sim = ops.matmul(batch.image_proj,
                     ops.transpose(batch.text_proj, (1, 0)))
    tau = batch.temperature
    if isinstance(tau, Tensor):
        scaled = ops.mul(sim, ops.reciprocal(tau))
    else:
        scaled = ops.scale(sim, 1.0 / tau)
    targets = np.arange(batch.n)
    rows = ops.cross_entropy_logits(scaled, targets)
    cols = ops.cross_entropy_logits(ops.transpose(scaled, (1, 0)), targets)
    loss = ops.scale(ops.add(rows, cols), 0.5)
    return loss, sim.data.copy()


def select_hard_negatives(sim: np.ndarray) -> list[tuple[int, int, Label]]:
    """For each pair i: keep the match, pair image i with its most
    confusable other text, and text i with its most confusable other
    image. Ties go to the lowest index; an item is never its own
    negative."""
    sim = np.asarray(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise errors.ShapeMismatch(f"similarity must be square, "
                                   f"got {sim.shape}")
    n = sim.shape[0]
    if n < 2:
        raise errors.ShapeMismatch("need at least 2 pairs to mine negatives")
    masked = sim.astype(np.float64).copy()
    np.fill_diagonal(masked, -np.inf)
    hard_text = masked.argmax(axis=1)   # per image row
    hard_image = masked.argmax(axis=0)  # per text column
    out: list[tuple[int, int, Label]] = []
    for i in range(n):
        out.append((i, i, True))
        out.append((i, int(hard_text[i]), False))
        out.append((int(hard_image[i]), i, False))
    return out


def itm_loss(fused_rows: Tensor, labels, p: dict,
             head: str = "itm") -> Tensor:
    """Binary cross-entropy of a single-logit head over fused [ENC] rows.
    head selects the parameter pair (the statement-verification head
    reuses this shape under another name)."""
    if fused_rows.data.ndim != 2 or fused_rows.shape[0] == 0:
        raise errors.ShapeMismatch(
            f"fused rows must be (M, d) with M >= 1, got {fused_rows.shape}")
    labels = np.asarray(labels, dtype=fused_rows.data.dtype)
    if labels.shape != (fused_rows.shape[0],):
        raise errors.ShapeMismatch(
            f"labels {labels.shape} do not match {fused_rows.shape[0]} rows")
    logits = ops.add(ops.matmul(fused_rows, p[f"{head}_w"]), p[f"{head}_b"])
    logits = ops.reshape(logits, (fused_rows.shape[0],))
    return ops.binary_cross_entropy_logits(logits, labels)


def _shifted_targets(tokens: np.ndarray,
                     supervise_from: np.ndarray) -> np.ndarray:
    """Target at position t is token t+1; targets before supervise_from
    (a token index per row) and [PAD] targets are ignored."""
    b, length = tokens.shape
    tgt = np.full((b, length), vocab.PAD, dtype=np.int64)
    tgt[:, : length - 1] = tokens[:, 1:]
    cut = (supervise_from - 1)[:, None]
    tgt[np.arange(length)[None, :] < cut] = vocab.PAD
    return tgt


def lm_loss(logits: Tensor, tokens, supervise_from: int = 1) -> Tensor:
    """Shifted cross-entropy for one sequence: logits row t is scored
    against token t+1. supervise_from is the first token index that
    counts as a target (question prompts score nothing in VQA)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 2:
        raise errors.ShapeMismatch("need at least 2 tokens for a shift")
    if logits.data.ndim != 2 or logits.shape[0] != tokens.size:
        raise errors.ShapeMismatch(
            f"logits {logits.shape} do not cover {tokens.size} positions")
    tgt = _shifted_targets(tokens[None, :],
                           np.array([supervise_from]))[0]
    return ops.cross_entropy_logits(logits, tgt, ignore_id=vocab.PAD)


def lm_loss_batch(logits: Tensor, tokens,
                  supervise_from=None) -> Tensor:
    """Batched shift loss, mean over every live target position in the
    batch. supervise_from: scalar or per-row array of first target
    indexes."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise errors.ShapeMismatch(
            f"tokens must be (batch, len>=2), got {tokens.shape}")
    b, length = tokens.shape
    if logits.shape[:2] != (b, length):
        raise errors.ShapeMismatch(
            f"logits {logits.shape} do not cover tokens {tokens.shape}")
    if supervise_from is None:
        sf = np.ones(b, dtype=np.int64)
    else:
        sf = np.broadcast_to(np.asarray(supervise_from, dtype=np.int64),
                             (b,)).copy()
    tgt = _shifted_targets(tokens, sf)
    flat = ops.reshape(logits, (b * length, logits.shape[2]))
    return ops.cross_entropy_logits(flat, tgt.reshape(-1),
                                    ignore_id=vocab.PAD)


def joint_loss(itc: Tensor, itm: Tensor, lm: Tensor,
               weights: Sequence[float] = (1.0, 1.0, 1.0)) -> Tensor:
    """Weighted sum of the three scalar pretraining losses."""
    parts = (itc, itm, lm)
    for t in parts:
        if t.size != 1:
            raise errors.NotScalar(f"joint component has shape {t.shape}")
    if len(weights) != 3:
        raise errors.ConfigError("joint_loss takes exactly 3 weights")
    total = ops.scale(itc, float(weights[0]))
    total = ops.add(total, ops.scale(itm, float(weights[1])))
    return ops.add(total, ops.scale(lm, float(weights[2])))
