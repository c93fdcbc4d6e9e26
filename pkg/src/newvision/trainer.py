"""Training stages over the scene corpus, AdamW, and evaluation.

Five stages share one loop: pretraining jointly optimizes the contrastive,
matching, and decoding losses on caption pairs; the three fine-tunes
specialize (caption decoding, prompt-masked question answering, the
statement head); distillation fits a smaller student to a frozen teacher's
decoder logits. Every run is deterministic given (seed, config, corpus):
epoch order comes from a seeded permutation and all math is on the pinned
kernels.

The metric log is one JSON object per step with fixed keys
{step, itc, itm, lm, total}; stages that do not produce a component log it
as 0.0, and the nlvr/distill stage losses are reported under itm/lm
respectively (the closest-shaped slot) as well as total.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import errors, model, objectives, ops, scenegen, vocab
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import MEDConfig
from .tensor import Tape, Tensor, backward

STAGES = ("pretrain", "finetune-caption", "finetune-vqa",
          "finetune-nlvr", "distill")

TEMP_MIN, TEMP_MAX = 0.01, 1.0


@dataclass
class TrainConfig:
    stage: str
    steps: int
    corpus: str
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_weights: tuple = (1.0, 1.0, 1.0)
    seed: int = 0
    init_from: Optional[str] = None
    teacher: Optional[str] = None
    out: Optional[str] = None
    log_path: Optional[str] = None
    kd_temperature: float = 2.0
    student: Optional[MEDConfig] = None  # distill only; None picks a default

    def __post_init__(self):
        if self.stage not in STAGES:
            raise errors.ConfigError(f"unknown stage {self.stage!r}")
        if self.steps < 1:
            raise errors.ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise errors.ConfigError("batch_size must be >= 1")
        if self.stage == "pretrain" and self.batch_size < 2:
            raise errors.ConfigError(
                "pretraining needs batch_size >= 2 to mine negatives")
        if self.kd_temperature <= 0:
            raise errors.ConfigError("kd_temperature must be positive")


def corpus_fingerprint(corpus_dir) -> str:
    path = Path(corpus_dir) / "scenes.jsonl"
    if not path.exists():
        raise errors.MissingCorpus(f"no scenes.jsonl under {corpus_dir}")
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- optimizer ---

def init_moments(params: dict) -> dict:
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
            "t": 0}


def adamw_step(params: dict, grads: dict, moments: dict,
               config: TrainConfig) -> None:
    """In-place AdamW with decoupled weight decay applied first and
    bias-corrected moment estimates. Aborts on any non-finite gradient."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise errors.NanGradient(
                f"{name}: {bad} non-finite gradient entries at "
                f"step {moments['t'] + 1}")
    moments["t"] += 1
    t = moments["t"]
    c1 = 1.0 - config.beta1 ** t
    c2 = 1.0 - config.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        decay = p.dtype.type(1.0 - config.lr * config.weight_decay)
        np.multiply(p, decay, out=p)
        m = moments["m"][name]
        v = moments["v"][name]
        m[...] = config.beta1 * m + (1.0 - config.beta1) * g
        v[...] = config.beta2 * v + (1.0 - config.beta2) * (g * g)
        p -= (config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(
            p.dtype)


# --- batch assembly ---

def _pack(rows: list, pad: int = vocab.PAD) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), pad, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def _gather_states(states: Tensor, idxs) -> Tensor:
    return ops.concat([ops.slice_axis(states, 0, i, i + 1) for i in idxs],
                      axis=0)


class _Corpus:
    """Train-split records with decoded images and tokenized text."""

    def __init__(self, corpus_dir):
        records = [r for r in scenegen.load_corpus(corpus_dir)
                   if r.split == "train"]
        if not records:
            raise errors.EmptySplit("corpus has no train records")
        self.records = records
        self.vocab = vocab.Vocab.default()
        self.images = np.stack([scenegen.load_image(corpus_dir, r)
                                for r in records])
        self.captions = [vocab.tokenize(r.caption, self.vocab)
                         for r in records]

    def caption_rows(self, idxs):
        images = self.images[idxs]
        cls_ids = _pack([[vocab.CLS] + self.captions[i] for i in idxs])
        dec_ids = _pack([[vocab.DEC] + self.captions[i] + [vocab.EOS]
                         for i in idxs])
        return images, cls_ids, dec_ids

    def qa_examples(self):
        out = []
        for ri, rec in enumerate(self.records):
            for pair in rec.qa:
                q = vocab.tokenize(pair.question, self.vocab)
                a = vocab.tokenize(pair.answer, self.vocab)
                ids = [vocab.DEC] + q + [vocab.SEP] + a + [vocab.EOS]
                out.append((ri, ids, len(q) + 2))  # first answer index
        return out

    def statement_examples(self):
        out = []
        for ri, rec in enumerate(self.records):
            for st in rec.statements:
                ids = [vocab.ENC] + vocab.tokenize(st.text, self.vocab)
                out.append((ri, ids, float(st.truth)))
        return out


# --- per-stage losses ---

def _pretrain_loss(p, corpus, idxs, config, train_cfg):
    images, cls_ids, dec_ids = corpus.caption_rows(idxs)
    img_states = model.encode_image_batch(p, images, config)
    txt_states = model.encode_text_batch(p, cls_ids, config)
    be = objectives.BatchEmbeddings(model.project_image(p, img_states),
                                    model.project_text(p, txt_states),
                                    p["temperature"])
    itc, sim = objectives.itc_loss(be)

    triples = objectives.select_hard_negatives(sim)
    enc_ids = _pack([[vocab.ENC] + list(cls_ids[t, 1:][cls_ids[t, 1:] > 0])
                     for _, t, _ in triples])
    picked = _gather_states(img_states, [i for i, _, _ in triples])
    fused = model.encode_multimodal_batch(p, enc_ids, picked, config)
    rows = ops.reshape(ops.slice_axis(fused, 1, 0, 1),
                       (len(triples), config.d_model))
    itm = objectives.itm_loss(rows, [m for _, _, m in triples], p)

    logits = model.decode_batch(p, dec_ids, img_states, config)
    lm = objectives.lm_loss_batch(logits, dec_ids)
    total = objectives.joint_loss(itc, itm, lm, train_cfg.loss_weights)
    return total, {"itc": float(itc.data), "itm": float(itm.data),
                   "lm": float(lm.data)}


def _caption_loss(p, corpus, idxs, config):
    images, _, dec_ids = corpus.caption_rows(idxs)
    img_states = model.encode_image_batch(p, images, config)
    logits = model.decode_batch(p, dec_ids, img_states, config)
    lm = objectives.lm_loss_batch(logits, dec_ids)
    return lm, {"itc": 0.0, "itm": 0.0, "lm": float(lm.data)}


def _vqa_loss(p, corpus, examples, config):
    ridx = [e[0] for e in examples]
    dec_ids = _pack([e[1] for e in examples])
    sfrom = np.array([e[2] for e in examples])
    img_states = model.encode_image_batch(p, corpus.images[ridx], config)
    logits = model.decode_batch(p, dec_ids, img_states, config)
    lm = objectives.lm_loss_batch(logits, dec_ids, supervise_from=sfrom)
    return lm, {"itc": 0.0, "itm": 0.0, "lm": float(lm.data)}


def _nlvr_loss(p, corpus, examples, config):
    ridx = [e[0] for e in examples]
    enc_ids = _pack([e[1] for e in examples])
    labels = [e[2] for e in examples]
    img_states = model.encode_image_batch(p, corpus.images[ridx], config)
    fused = model.encode_multimodal_batch(p, enc_ids, img_states, config)
    rows = ops.reshape(ops.slice_axis(fused, 1, 0, 1),
                       (len(examples), config.d_model))
    bce = objectives.itm_loss(rows, labels, p, head="nlvr")
    return bce, {"itc": 0.0, "itm": float(bce.data), "lm": 0.0}


def _distill_loss(p, corpus, idxs, config, teacher, train_cfg):
    images, _, dec_ids = corpus.caption_rows(idxs)
    img_states = model.encode_image_batch(p, images, config)
    logits = model.decode_batch(p, dec_ids, img_states, config)
    b, length, width = logits.shape
    student_rows = ops.reshape(logits, (b * length, width))

    t_p, t_cfg = teacher
    t_states = model.encode_image_batch(t_p, images, t_cfg)
    t_logits = model.decode_batch(t_p, dec_ids, t_states, t_cfg)
    teacher_rows = ops.reshape(t_logits, (b * length, width))

    kd = objectives.kd_loss(student_rows, teacher_rows,
                            train_cfg.kd_temperature)
    return kd, {"itc": 0.0, "itm": 0.0, "lm": float(kd.data)}


_DEFAULT_STUDENT = dict(d_model=32, n_heads=2, n_layers=2, ffn_dim=128,
                        proj_dim=16)


def train(config: TrainConfig) -> tuple[Checkpoint, list]:
    """Run one stage; returns the resulting checkpoint and metric log."""
    corpus = _Corpus(config.corpus)
    fingerprint = corpus_fingerprint(config.corpus)

    flags = {"nlvr_head_trained": False}
    teacher = None
    if config.stage == "distill":
        if not config.teacher:
            raise errors.MissingTeacher("distillation needs a teacher "
                                        "checkpoint path")
        try:
            t_ckpt = load_checkpoint(config.teacher)
        except FileNotFoundError as e:
            raise errors.MissingTeacher(str(e)) from e
        t_leaves = {k: Tensor(v) for k, v in t_ckpt.params.items()}
        teacher = (t_leaves, t_ckpt.config)
        med_config = config.student or MEDConfig(
            vocab_size=len(corpus.vocab), seed=config.seed,
            **_DEFAULT_STUDENT)
        if med_config.vocab_size != t_ckpt.config.vocab_size:
            raise errors.ConfigError("student and teacher vocab differ")
        params = model.init_params(med_config)
        start_step = 0
    elif config.stage == "pretrain":
        if config.init_from:
            ckpt = load_checkpoint(config.init_from)
            med_config, params = ckpt.config, ckpt.params
            flags = dict(ckpt.flags)
            start_step = ckpt.step
        else:
            med_config = MEDConfig(vocab_size=len(corpus.vocab),
                                   seed=config.seed)
            params = model.init_params(med_config)
            start_step = 0
    else:
        if not config.init_from:
            raise errors.ConfigError(
                f"{config.stage} needs init_from (a pretrained checkpoint)")
        ckpt = load_checkpoint(config.init_from)
        med_config, params = ckpt.config, ckpt.params
        flags = dict(ckpt.flags)
        start_step = ckpt.step

    if config.stage == "finetune-vqa":
        pool = corpus.qa_examples()
    elif config.stage == "finetune-nlvr":
        pool = corpus.statement_examples()
    else:
        pool = list(range(len(corpus.records)))

    moments = init_moments(params)
    log: list[dict] = []
    epoch = 0
    cursor = 0
    order = np.random.default_rng([config.seed, epoch]).permutation(
        len(pool))

    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > len(order):
            keep_tail = (config.stage != "pretrain"
                         and cursor < len(order))
            if keep_tail:
                batch_ids = order[cursor:]
                cursor = len(order)
            else:
                epoch += 1
                order = np.random.default_rng(
                    [config.seed, epoch]).permutation(len(pool))
                cursor = 0
                batch_ids = order[: config.batch_size]
                cursor = config.batch_size
        else:
            batch_ids = order[cursor: cursor + config.batch_size]
            cursor += config.batch_size
        batch = [pool[i] for i in batch_ids]

        tape = Tape()
        p = {k: tape.leaf(v, requires_grad=True) for k, v in params.items()}
        if config.stage == "pretrain":
            loss, parts = _pretrain_loss(p, corpus, [int(i) for i in batch],
                                         med_config, config)
        elif config.stage == "finetune-caption":
            loss, parts = _caption_loss(p, corpus, [int(i) for i in batch],
                                        med_config)
        elif config.stage == "finetune-vqa":
            loss, parts = _vqa_loss(p, corpus, batch, med_config)
        elif config.stage == "finetune-nlvr":
            loss, parts = _nlvr_loss(p, corpus, batch, med_config)
        else:
            loss, parts = _distill_loss(p, corpus, [int(i) for i in batch],
                                        med_config, teacher, config)

        grad_map = backward(tape, loss)
        grads = {k: grad_map[p[k].node_id].data for k in params}
        adamw_step(params, grads, moments, config)
        params["temperature"] = np.asarray(  # clip scalarizes 0-d input
            np.clip(params["temperature"], TEMP_MIN, TEMP_MAX),
            dtype=np.float32)

        log.append({"step": start_step + step, **parts,
                    "total": float(loss.data)})

    if config.stage == "finetune-nlvr":
        flags["nlvr_head_trained"] = True

    ckpt = Checkpoint(config=med_config, params=params,
                      step=start_step + config.steps,
                      adam_t=moments["t"],
                      moments={"m": moments["m"], "v": moments["v"]},
                      fingerprint=fingerprint, flags=flags)
    if config.out:
        save_checkpoint(ckpt, config.out)
    if config.log_path:
        with open(config.log_path, "w", encoding="utf-8") as f:
            for row in log:
                f.write(json.dumps(row) + "\n")
    return ckpt, log


# --- evaluation ---

METRICS = ("caption_exact_match", "caption_unigram_precision",
           "vqa_answer_exact_match", "nlvr_statement_accuracy",
           "itm_accuracy", "retrieval_recall_at_1")


def _itm_logit(p, config, image_states_row, ids) -> float:
    fused = model.encode_multimodal_batch(
        p, np.asarray([ids]), image_states_row, config)
    h = fused.data[0, 0]
    return float(h @ p["itm_w"].data[:, 0] + p["itm_b"].data[0])


def evaluate(ckpt: Checkpoint, corpus_dir, split: str = "train",
             metrics=None, opts=None) -> dict:
    """Compute the requested metrics (all six by default) over one corpus
    split. Read-only: the checkpoint is never modified."""
    from . import inference  # circular at module load otherwise

    wanted = list(metrics) if metrics is not None else list(METRICS)
    for name in wanted:
        if name not in METRICS:
            raise errors.ConfigError(f"unknown metric {name!r}")

    records = [r for r in scenegen.load_corpus(corpus_dir)
               if r.split == split]
    if not records:
        raise errors.EmptySplit(f"no records in split {split!r}")
    if ("nlvr_statement_accuracy" in wanted
            and not ckpt.flags.get("nlvr_head_trained")):
        raise errors.MissingHead(
            "nlvr_statement_accuracy needs a fine-tuned statement head")
    images = [scenegen.load_image(corpus_dir, r) for r in records]
    v = vocab.Vocab.default()
    p = {k: Tensor(arr) for k, arr in ckpt.params.items()}
    config = ckpt.config
    out: dict[str, float] = {}

    if ("caption_exact_match" in wanted
            or "caption_unigram_precision" in wanted):
        exact = 0
        precisions = []
        for rec, img in zip(records, images):
            got = inference.caption_image(img, ckpt, opts)
            gold = vocab.normalize(rec.caption)
            exact += int(got == gold)
            got_words = got.split()
            gold_words = gold.split()
            if got_words:
                hits = 0
                budget = dict()
                for w in gold_words:
                    budget[w] = budget.get(w, 0) + 1
                for w in got_words:
                    if budget.get(w, 0) > 0:
                        budget[w] -= 1
                        hits += 1
                precisions.append(hits / len(got_words))
            else:
                precisions.append(0.0)
        out["caption_exact_match"] = exact / len(records)
        out["caption_unigram_precision"] = float(np.mean(precisions))

    if "vqa_answer_exact_match" in wanted:
        hits, total = 0, 0
        for rec, img in zip(records, images):
            for pair in rec.qa:
                got = inference.answer_question(img, pair.question, ckpt,
                                                opts)
                hits += int(got == vocab.normalize(pair.answer))
                total += 1
        out["vqa_answer_exact_match"] = hits / max(total, 1)

    if "nlvr_statement_accuracy" in wanted:
        hits, total = 0, 0
        for rec, img in zip(records, images):
            for st in rec.statements:
                truth, _ = inference.verify_statement(img, st.text, ckpt)
                hits += int(truth == st.truth)
                total += 1
        out["nlvr_statement_accuracy"] = hits / max(total, 1)

    if "itm_accuracy" in wanted or "retrieval_recall_at_1" in wanted:
        img_states = model.encode_image_batch(p, np.stack(images), config)
        cls_ids = _pack([[vocab.CLS] + vocab.tokenize(r.caption, v)
                         for r in records])

    if "itm_accuracy" in wanted:
        n = len(records)
        hits = 0
        for i in range(n):
            ids = [vocab.ENC] + vocab.tokenize(records[i].caption, v)
            own = _gather_states(img_states, [i])
            other = _gather_states(img_states, [(i + 1) % n])
            hits += int(_itm_logit(p, config, own, ids) >= 0.0)
            if n > 1:
                hits += int(_itm_logit(p, config, other, ids) < 0.0)
        out["itm_accuracy"] = hits / (2 * n if n > 1 else n)

    if "retrieval_recall_at_1" in wanted:
        txt_states = model.encode_text_batch(p, cls_ids, config)
        txt = model.project_text(p, txt_states).data
        img = model.project_image(p, img_states).data
        sims = txt @ img.T
        out["retrieval_recall_at_1"] = float(
            (sims.argmax(axis=1) == np.arange(len(records))).mean())

    return out
