"""Inference over a loaded checkpoint: captioning, question answering,
statement verification, and text-to-image retrieval.

Decoding is deterministic. Greedy takes the argmax token each step; beam
search ranks complete hypotheses by mean log-probability per generated
token with ties broken by token-id sequence, and the greedy hypothesis
always competes in the final pool, so the returned score never falls
below greedy's. No attention cache: prefixes are re-encoded per step,
which at this scale is cheaper than carrying state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import errors, model, ops, vocab
from .checkpoint import Checkpoint
from .tensor import Tensor

_WORST = -1e30  # sentinel mean score for empty hypotheses


@dataclass
class DecodeOptions:
    strategy: str = "greedy"
    beam_width: int = 3
    max_new_tokens: Optional[int] = None  # None: whatever max_len allows

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise errors.ConfigError(f"unknown strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise errors.ConfigError("beam_width must be >= 1")
        if self.max_new_tokens is not None and self.max_new_tokens < 1:
            raise errors.ConfigError("max_new_tokens must be >= 1")


def _leaves(ckpt: Checkpoint) -> dict:
    return {k: Tensor(v) for k, v in ckpt.params.items()}


def _log_probs(p: dict, config, prefix: list, states) -> np.ndarray:
    logits = model.decode_step(prefix, states, p, config).data[-1]
    x = logits.astype(np.float64)
    x = x - x.max()
    return x - np.log(np.exp(x).sum())


def _budget(config, prefix_len: int, opts: DecodeOptions) -> int:
    room = config.max_len - prefix_len
    if opts.max_new_tokens is None:
        return room
    return min(opts.max_new_tokens, room)


def _greedy(p, config, states, prefix: list,
            budget: int) -> tuple[list, float]:
    out: list[int] = []
    total = 0.0
    for _ in range(budget):
        lp = _log_probs(p, config, prefix + out, states)
        nxt = int(lp.argmax())
        out.append(nxt)
        total += float(lp[nxt])
        if nxt == vocab.EOS:
            break
    return out, (total / len(out) if out else _WORST)


def _beam(p, config, states, prefix: list, budget: int,
          width: int) -> list:
    alive: list[tuple[list, float]] = [([], 0.0)]  # (tokens, summed lp)
    done: list[tuple[list, float]] = []            # (tokens, mean lp)
    for _ in range(budget):
        if not alive:
            break
        candidates: list[tuple[float, list, float]] = []
        for toks, total in alive:
            lp = _log_probs(p, config, prefix + toks, states)
            for t in range(lp.size):
                s = total + float(lp[t])
                candidates.append((s / (len(toks) + 1), toks + [t], s))
        candidates.sort(key=lambda c: (-c[0], tuple(c[1])))
        alive = []
        for mean, toks, total in candidates[:width]:
            if toks[-1] == vocab.EOS or len(toks) == budget:
                done.append((toks, mean))
            else:
                alive.append((toks, total))
    # greedy always competes, so the winner never scores below it
    done.append(_greedy(p, config, states, prefix, budget))
    done.sort(key=lambda d: (-d[1], tuple(d[0])))
    return done[0][0]


def _decode(ckpt: Checkpoint, states, prefix: list,
            opts: Optional[DecodeOptions]) -> list:
    opts = opts or DecodeOptions()
    p = _leaves(ckpt)
    budget = _budget(ckpt.config, len(prefix), opts)
    if budget < 1:
        raise errors.TooLong(
            f"prefix of {len(prefix)} leaves no room under max_len "
            f"{ckpt.config.max_len}")
    if opts.strategy == "greedy" or opts.beam_width == 1:
        out, _ = _greedy(p, ckpt.config, states, prefix, budget)
    else:
        out = _beam(p, ckpt.config, states, prefix, budget,
                    opts.beam_width)
    return [t for t in out if t != vocab.EOS]


def caption_image(image: np.ndarray, ckpt: Checkpoint,
                  opts: Optional[DecodeOptions] = None) -> str:
    """Describe an image, decoding from a bare [DEC]."""
    p = _leaves(ckpt)
    states = model.encode_image(image, p, ckpt.config)
    toks = _decode(ckpt, states, [vocab.DEC], opts)
    return vocab.detokenize(toks, vocab.Vocab.default())


def answer_question(image: np.ndarray, question: str, ckpt: Checkpoint,
                    opts: Optional[DecodeOptions] = None) -> str:
    """Decode the continuation of [DEC] question [SEP]."""
    v = vocab.Vocab.default()
    q = vocab.tokenize(question, v)
    if not q:
        raise errors.EmptyQuestion("question has no tokens")
    p = _leaves(ckpt)
    states = model.encode_image(image, p, ckpt.config)
    prefix = [vocab.DEC] + q + [vocab.SEP]
    toks = _decode(ckpt, states, prefix, opts)
    return vocab.detokenize(toks, v)


def verify_statement(image: np.ndarray, statement: str,
                     ckpt: Checkpoint) -> tuple[bool, float]:
    """Statement-head confidence on the fused [ENC] row; true at >= 0.5."""
    if not ckpt.flags.get("nlvr_head_trained"):
        raise errors.MissingHead(
            "checkpoint has no fine-tuned statement head")
    v = vocab.Vocab.default()
    toks = vocab.tokenize(statement, v)
    p = _leaves(ckpt)
    states = model.encode_image(image, p, ckpt.config)
    fused = model.encode_multimodal([vocab.ENC] + toks, states, p,
                                    ckpt.config)
    h = fused.data[0]
    logit = float(h @ ckpt.params["nlvr_w"][:, 0] + ckpt.params["nlvr_b"][0])
    confidence = float(ops.sigmoid(np.asarray(logit)))
    return confidence >= 0.5, confidence


def retrieve_best_match(text: str, images: list, ckpt: Checkpoint) -> int:
    """Index of the image whose contrastive embedding best matches the
    text's; cosine ties go to the lowest index."""
    if not images:
        raise errors.EmptyCandidates("no candidate images")
    v = vocab.Vocab.default()
    toks = vocab.tokenize(text, v)
    p = _leaves(ckpt)
    txt_states = model.encode_text_batch(
        p, np.asarray([[vocab.CLS] + toks]), ckpt.config)
    txt = model.project_text(p, txt_states).data[0]
    img_states = model.encode_image_batch(p, np.stack(images), ckpt.config)
    img = model.project_image(p, img_states).data
    return int((img @ txt).argmax())
