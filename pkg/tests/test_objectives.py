"""Loss tests: closed-form cases, numpy oracles, a brute-force negative
mining scan, and finite-difference checks through the full 2-layer
pipeline."""

import math

import numpy as np
import pytest

from newvision import errors, gradcheck, model, objectives, ops, vocab
from newvision.model import MED, MEDConfig
from newvision.objectives import (BatchEmbeddings, itc_loss, itm_loss,
                                  joint_loss, lm_loss, lm_loss_batch,
                                  select_hard_negatives)
from newvision.tensor import Tape, Tensor, backward


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)


def embeddings(rng, n, d=8, tau=1.0):
    return BatchEmbeddings(Tensor(unit_rows(rng, n, d)),
                           Tensor(unit_rows(rng, n, d)), tau)


# --- batch embeddings type ---

def test_batch_embeddings_validation():
    rng = np.random.default_rng(0)
    good = unit_rows(rng, 3, 8)
    with pytest.raises(errors.ShapeMismatch):
        BatchEmbeddings(Tensor(good), Tensor(unit_rows(rng, 4, 8)), 1.0)
    with pytest.raises(errors.ShapeMismatch):
        BatchEmbeddings(Tensor(np.zeros((0, 8), dtype=np.float32)),
                        Tensor(np.zeros((0, 8), dtype=np.float32)), 1.0)
    with pytest.raises(errors.ConfigError):
        BatchEmbeddings(Tensor(good * 2.0), Tensor(good), 1.0)
    with pytest.raises(errors.ConfigError):
        BatchEmbeddings(Tensor(good), Tensor(good), 0.0)


# --- itc ---

def test_itc_single_pair_is_zero():
    rng = np.random.default_rng(1)
    loss, sim = itc_loss(embeddings(rng, 1))
    assert loss.data == pytest.approx(0.0, abs=1e-7)
    assert sim.shape == (1, 1)


def test_itc_identical_rows_gives_ln_n():
    rng = np.random.default_rng(2)
    img = np.tile(unit_rows(rng, 1, 8), (5, 1))
    txt = np.tile(unit_rows(rng, 1, 8), (5, 1))
    loss, _ = itc_loss(BatchEmbeddings(Tensor(img), Tensor(txt), 0.5))
    assert float(loss.data) == pytest.approx(math.log(5), rel=1e-5)


def test_itc_against_numpy_oracle():
    rng = np.random.default_rng(3)
    img = unit_rows(rng, 5, 8).astype(np.float64)
    txt = unit_rows(rng, 5, 8).astype(np.float64)
    tau = 0.3
    loss, sim = itc_loss(BatchEmbeddings(Tensor(img), Tensor(txt), tau))

    s = img @ txt.T / tau
    def ce(m):
        e = np.exp(m - m.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        return -np.log(np.diag(p)).mean()
    want = 0.5 * (ce(s) + ce(s.T))
    assert float(loss.data) == pytest.approx(want, rel=1e-9)
    np.testing.assert_allclose(sim, img @ txt.T, rtol=1e-12)


def test_itc_monte_carlo_sits_at_ln_n():
    # random unit vectors are nearly orthogonal: chance-level loss
    values = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        loss, _ = itc_loss(embeddings(rng, 16, d=32, tau=1.0))
        values.append(float(loss.data))
    mean = np.mean(values)
    assert abs(mean - math.log(16)) < 0.1 * math.log(16)


def test_itc_permutation_invariance():
    rng = np.random.default_rng(4)
    img, txt = unit_rows(rng, 6, 8), unit_rows(rng, 6, 8)
    perm = rng.permutation(6)
    a, _ = itc_loss(BatchEmbeddings(Tensor(img), Tensor(txt), 0.7))
    b, _ = itc_loss(BatchEmbeddings(Tensor(img[perm]), Tensor(txt[perm]),
                                    0.7))
    assert float(a.data) == pytest.approx(float(b.data), rel=1e-5)


def test_itc_nonnegative():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        loss, _ = itc_loss(embeddings(rng, 4, tau=0.2))
        assert float(loss.data) >= -1e-7


def test_itc_gradient_reaches_learnable_temperature():
    rng = np.random.default_rng(5)
    tape = Tape()
    tau = tape.leaf(np.asarray(0.5, dtype=np.float32), requires_grad=True)
    be = BatchEmbeddings(Tensor(unit_rows(rng, 4, 8)),
                         Tensor(unit_rows(rng, 4, 8)), tau)
    loss, _ = itc_loss(be)
    grads = backward(tape, loss)
    assert grads[tau.node_id].data != 0.0


def test_itc_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    raw_i = rng.normal(size=(4, 6))
    raw_t = rng.normal(size=(4, 6))
    tau0 = np.asarray(0.4)

    def build(tape, leaves):
        ri, rt, tau = leaves
        be = BatchEmbeddings(ops.l2_normalize(ri, axis=-1),
                             ops.l2_normalize(rt, axis=-1), tau)
        loss, _ = itc_loss(be)
        return loss

    err = gradcheck.check_full(build, [raw_i, raw_t, tau0])
    assert err < 1e-3


# --- hard negative mining ---

def scan_triples(sim):
    """Exhaustive argmax scan; strict > keeps the lowest tied index."""
    n = sim.shape[0]
    out = []
    for i in range(n):
        out.append((i, i, True))
        bt, bv = None, -np.inf
        for j in range(n):
            if j != i and sim[i, j] > bv:
                bt, bv = j, sim[i, j]
        out.append((i, bt, False))
        bi, bv = None, -np.inf
        for j in range(n):
            if j != i and sim[j, i] > bv:
                bi, bv = j, sim[j, i]
        out.append((bi, i, False))
    return out


@pytest.mark.parametrize("seed", range(20))
def test_mining_matches_brute_force_scan(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    # small integer grid invites ties, exercising the lowest-index rule
    sim = rng.integers(0, 4, size=(n, n)).astype(np.float32)
    assert select_hard_negatives(sim) == scan_triples(sim)


def test_mining_two_pairs_forced():
    sim = np.array([[0.9, 0.1], [0.2, 0.8]], dtype=np.float32)
    triples = select_hard_negatives(sim)
    assert (0, 1, False) in triples
    assert (1, 0, False) in triples
    assert triples.count((0, 0, True)) == 1


def test_mining_tie_takes_lowest_index():
    sim = np.zeros((4, 4), dtype=np.float32)
    sim[0] = [0.0, 5.0, 3.0, 5.0]
    triples = select_hard_negatives(sim)
    # triple 1 is the hard-text pick for image 0: tie between 1 and 3
    assert triples[1] == (0, 1, False)


def test_mining_never_pairs_self_as_negative():
    for seed in range(25):
        rng = np.random.default_rng(100 + seed)
        sim = rng.normal(size=(5, 5)).astype(np.float32)
        np.fill_diagonal(sim, 10.0)  # worst case: self is the max
        for a, b, label in select_hard_negatives(sim):
            if not label:
                assert a != b


def test_mining_rejects_degenerate_input():
    with pytest.raises(errors.ShapeMismatch):
        select_hard_negatives(np.ones((1, 1), dtype=np.float32))
    with pytest.raises(errors.ShapeMismatch):
        select_hard_negatives(np.ones((2, 3), dtype=np.float32))


# --- itm ---

def head(w, b):
    return {"itm_w": Tensor(np.asarray(w, dtype=np.float32)),
            "itm_b": Tensor(np.asarray(b, dtype=np.float32))}


def test_itm_zero_head_is_ln2():
    rng = np.random.default_rng(7)
    fused = Tensor(rng.normal(size=(6, 4)).astype(np.float32))
    p = head(np.zeros((4, 1)), np.zeros(1))
    loss = itm_loss(fused, [1, 0, 1, 0, 1, 0], p)
    assert float(loss.data) == pytest.approx(math.log(2), rel=1e-6)


def test_itm_saturated_head_is_near_zero():
    fused = Tensor(np.array([[1.0], [-1.0]], dtype=np.float32))
    p = head([[30.0]], [0.0])
    loss = itm_loss(fused, [1, 0], p)
    assert float(loss.data) < 1e-9


def test_itm_hand_example():
    fused = Tensor(np.array([[1.0], [-1.0]], dtype=np.float32))
    p = head([[1.0]], [0.0])
    loss = itm_loss(fused, [1, 0], p)
    # softplus(-1) both times
    assert float(loss.data) == pytest.approx(0.31326168751822286, rel=1e-6)


def test_itm_rejects_empty_or_mismatched():
    p = head(np.zeros((4, 1)), np.zeros(1))
    with pytest.raises(errors.ShapeMismatch):
        itm_loss(Tensor(np.zeros((0, 4), dtype=np.float32)), [], p)
    with pytest.raises(errors.ShapeMismatch):
        itm_loss(Tensor(np.zeros((2, 4), dtype=np.float32)), [1], p)


def test_itm_alternate_head_name():
    fused = Tensor(np.array([[2.0]], dtype=np.float32))
    p = {"nlvr_w": Tensor(np.array([[1.0]], dtype=np.float32)),
         "nlvr_b": Tensor(np.array([0.0], dtype=np.float32))}
    loss = itm_loss(fused, [1], p, head="nlvr")
    assert float(loss.data) == pytest.approx(math.log1p(math.exp(-2.0)),
                                             rel=1e-6)


# --- lm ---

def test_lm_uniform_logits_give_ln_vocab():
    logits = Tensor(np.zeros((4, 10), dtype=np.float32))
    loss = lm_loss(logits, [vocab.DEC, 7, 8, 9])
    assert float(loss.data) == pytest.approx(math.log(10), rel=1e-6)


def test_lm_targets_are_next_tokens():
    v = 12
    tokens = [vocab.DEC, 7, 9]
    right = np.full((3, v), -20.0, dtype=np.float32)
    right[0, 7] = 20.0   # predicts token 1
    right[1, 9] = 20.0   # predicts token 2
    assert float(lm_loss(Tensor(right), tokens).data) < 1e-6

    wrong = right.copy()
    wrong[0, 7], wrong[0, 9] = -20.0, 20.0
    assert float(lm_loss(Tensor(wrong), tokens).data) > 5.0


def test_lm_pad_target_is_ignored():
    rng = np.random.default_rng(8)
    raw = rng.normal(size=(3, 9)).astype(np.float32)
    tokens = [vocab.DEC, 7, vocab.PAD]
    loss = lm_loss(Tensor(raw), tokens)

    row = raw[0].astype(np.float64)
    want = np.log(np.exp(row - row.max()).sum()) - (row[7] - row.max())
    assert float(loss.data) == pytest.approx(want, rel=1e-5)


def test_lm_prompt_region_not_supervised():
    rng = np.random.default_rng(9)
    raw = rng.normal(size=(5, 11)).astype(np.float32)
    tokens = [vocab.DEC, 8, vocab.SEP, 9, vocab.EOS]
    loss = lm_loss(Tensor(raw), tokens, supervise_from=3)

    def row_ce(row, t):
        row = row.astype(np.float64)
        return np.log(np.exp(row - row.max()).sum()) - (row[t] - row.max())
    want = (row_ce(raw[2], 9) + row_ce(raw[3], vocab.EOS)) / 2
    assert float(loss.data) == pytest.approx(want, rel=1e-5)


def test_lm_too_short_or_mismatched():
    with pytest.raises(errors.ShapeMismatch):
        lm_loss(Tensor(np.zeros((1, 5), dtype=np.float32)), [vocab.DEC])
    with pytest.raises(errors.ShapeMismatch):
        lm_loss(Tensor(np.zeros((3, 5), dtype=np.float32)), [vocab.DEC, 2])


def test_lm_all_prompt_raises():
    with pytest.raises(errors.AllIgnored):
        lm_loss(Tensor(np.zeros((3, 8), dtype=np.float32)),
                [vocab.DEC, 7, 8], supervise_from=9)


def test_lm_batch_pools_live_positions():
    rng = np.random.default_rng(10)
    raw = rng.normal(size=(2, 4, 12)).astype(np.float32)
    tokens = np.array([[vocab.DEC, 7, 8, vocab.EOS],
                       [vocab.DEC, 9, vocab.PAD, vocab.PAD]])
    loss = lm_loss_batch(Tensor(raw), tokens)

    def row_ce(row, t):
        row = row.astype(np.float64)
        return np.log(np.exp(row - row.max()).sum()) - (row[t] - row.max())
    rows = [row_ce(raw[0, 0], 7), row_ce(raw[0, 1], 8),
            row_ce(raw[0, 2], vocab.EOS), row_ce(raw[1, 0], 9)]
    assert float(loss.data) == pytest.approx(np.mean(rows), rel=1e-5)


def test_lm_batch_per_row_prompt_cut():
    rng = np.random.default_rng(11)
    raw = rng.normal(size=(2, 4, 9)).astype(np.float32)
    tokens = np.array([[vocab.DEC, 7, vocab.SEP, 8],
                       [vocab.DEC, 7, 8, vocab.EOS]])
    loss = lm_loss_batch(Tensor(raw), tokens, supervise_from=[3, 1])

    def row_ce(row, t):
        row = row.astype(np.float64)
        return np.log(np.exp(row - row.max()).sum()) - (row[t] - row.max())
    rows = [row_ce(raw[0, 2], 8), row_ce(raw[1, 0], 7),
            row_ce(raw[1, 1], 8), row_ce(raw[1, 2], vocab.EOS)]
    assert float(loss.data) == pytest.approx(np.mean(rows), rel=1e-5)


# --- joint ---

def scalar_leaf(tape, v):
    return tape.leaf(np.asarray(v, dtype=np.float32), requires_grad=True)


def test_joint_is_weighted_sum():
    tape = Tape()
    a, b, c = (scalar_leaf(tape, v) for v in (1.5, 2.0, 0.25))
    total = joint_loss(a, b, c)
    assert float(total.data) == pytest.approx(3.75, rel=1e-6)
    zero = joint_loss(a, b, c, weights=(0, 0, 0))
    assert float(zero.data) == 0.0
    mixed = joint_loss(a, b, c, weights=(2, 0, 4))
    assert float(mixed.data) == pytest.approx(4.0, rel=1e-6)


def test_joint_gradient_is_sum_of_component_gradients():
    rng = np.random.default_rng(12)
    raw_i = rng.normal(size=(3, 5))
    raw_t = rng.normal(size=(3, 5))
    fused = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 1))
    bias = np.zeros(1)
    logits = rng.normal(size=(3, 7))

    def build(tape, leaves):
        ri, rt, fu, hw, hb, lg = leaves
        be = BatchEmbeddings(ops.l2_normalize(ri, axis=-1),
                             ops.l2_normalize(rt, axis=-1), 0.5)
        itc, _ = itc_loss(be)
        itm = itm_loss(fu, [1, 0, 1], {"itm_w": hw, "itm_b": hb})
        lm = lm_loss(lg, [vocab.DEC, 3, 4])
        return joint_loss(itc, itm, lm, weights=(1.0, 2.0, 0.5))

    err = gradcheck.check_full(build, [raw_i, raw_t, fused, w, bias, logits])
    assert err < 1e-3


def test_joint_rejects_non_scalars():
    tape = Tape()
    a = scalar_leaf(tape, 1.0)
    vec = tape.leaf(np.zeros(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(errors.NotScalar):
        joint_loss(a, vec, a)
    with pytest.raises(errors.ConfigError):
        joint_loss(a, a, a, weights=(1.0, 1.0))


# --- the full pipeline, differentiated end to end ---

def test_two_layer_pipeline_gradients():
    cfg = MEDConfig(vocab_size=20, d_model=8, n_heads=2, n_layers=2,
                    ffn_dim=16, max_len=8, proj_dim=4, seed=5)
    params = model.init_params(cfg)
    names = list(params)
    arrays = [params[n].astype(np.float64) for n in names]

    rng = np.random.default_rng(13)
    images = rng.uniform(0, 1, size=(2, 32, 32, 3))
    cap_ids = np.array([[vocab.CLS, 8, 9, 10], [vocab.CLS, 11, 12, 13]])
    dec_ids = np.array([[vocab.DEC, 8, 9, vocab.EOS],
                        [vocab.DEC, 11, 12, vocab.EOS]])

    def build(tape, leaves):
        p = dict(zip(names, leaves))
        img_states = model.encode_image_batch(p, images, cfg)
        txt_states = model.encode_text_batch(p, cap_ids, cfg)
        be = BatchEmbeddings(model.project_image(p, img_states),
                             model.project_text(p, txt_states),
                             p["temperature"])
        itc, sim = itc_loss(be)

        triples = select_hard_negatives(sim)
        enc_ids = np.stack([
            np.concatenate(([vocab.ENC], cap_ids[t, 1:]))
            for _, t, _ in triples])
        picked = ops.concat([ops.slice_axis(img_states, 0, i, i + 1)
                             for i, _, _ in triples], axis=0)
        fused = model.encode_multimodal_batch(p, enc_ids, picked, cfg)
        rows = ops.reshape(ops.slice_axis(fused, 1, 0, 1),
                           (len(triples), cfg.d_model))
        itm = itm_loss(rows, [float(m) for _, _, m in triples], p)

        logits = model.decode_batch(p, dec_ids, img_states, cfg)
        lm = lm_loss_batch(logits, dec_ids)
        return joint_loss(itc, itm, lm)

    err = gradcheck.check_sampled(build, arrays, per_leaf=1, step=2e-4,
                                  seed=21)
    assert err < 1e-3
