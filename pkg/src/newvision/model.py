"""Multimodal encoder-decoder over the tensor ops.

One parameter set drives four transformer stacks: an image encoder over
8x8 patches, a bidirectional text encoder, an image-grounded text encoder
(self-attention, then cross-attention to patch states, then feed-forward),
and an image-grounded causal decoder. Blocks are pre-layer-norm residual
with learned absolute positions. The leading token selects the pathway:
[CLS] for the text encoder, [ENC] for the grounded encoder, [DEC] for the
decoder.

All forwards are batched; the single-example functions near the bottom wrap
them for callers holding one image or one sentence. Constants (patches,
masks, positions) are cast to the parameter dtype so whole-model gradient
checks can run in float64.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import errors, ops, vocab
from .tensor import Tape, Tensor

NEG_MASK = -1e9  # additive score for forbidden attention positions


@dataclass
class MEDConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn_dim: int = 256
    max_len: int = 24
    image_size: int = 32
    patch_size: int = 8
    proj_dim: int = 32
    # contrastive temperature; training clamps it to [0.01, 1.0]
    temperature_init: float = 0.07
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise errors.ConfigError(
                f"d_model {self.d_model} not divisible by "
                f"n_heads {self.n_heads}")
        if self.image_size % self.patch_size:
            raise errors.ConfigError(
                f"image_size {self.image_size} not divisible by "
                f"patch_size {self.patch_size}")
        for name in ("vocab_size", "d_model", "n_heads", "n_layers",
                     "ffn_dim", "max_len", "proj_dim"):
            if getattr(self, name) < 1:
                raise errors.ConfigError(f"{name} must be positive")
        if self.temperature_init <= 0:
            raise errors.ConfigError("temperature_init must be positive")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def image_seq(self) -> int:
        return self.n_patches + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MEDConfig":
        return cls(**d)


STACKS = ("img_enc", "txt_enc", "gnd_enc", "gnd_dec")
_CROSS_STACKS = ("gnd_enc", "gnd_dec")


def param_shapes(config: MEDConfig) -> dict[str, tuple]:
    """Ordered name -> shape map; this order is the checkpoint layout."""
    d, f, v = config.d_model, config.ffn_dim, config.vocab_size
    shapes: dict[str, tuple] = {
        "token_emb": (v, d),
        "pos_text": (config.max_len, d),
        "patch_proj_w": (config.patch_dim, d),
        "patch_proj_b": (d,),
        "pos_image": (config.image_seq, d),
        "image_cls": (1, d),
    }

    def attn(prefix):
        for m in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{m}"] = (d, d)
        for m in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}.{m}"] = (d,)

    for stack in STACKS:
        for i in range(config.n_layers):
            base = f"{stack}.{i}"
            shapes[f"{base}.ln1.g"] = (d,)
            shapes[f"{base}.ln1.b"] = (d,)
            attn(f"{base}.attn")
            if stack in _CROSS_STACKS:
                shapes[f"{base}.lnx.g"] = (d,)
                shapes[f"{base}.lnx.b"] = (d,)
                attn(f"{base}.xattn")
            shapes[f"{base}.ln2.g"] = (d,)
            shapes[f"{base}.ln2.b"] = (d,)
            shapes[f"{base}.ffn.w1"] = (d, f)
            shapes[f"{base}.ffn.b1"] = (f,)
            shapes[f"{base}.ffn.w2"] = (f, d)
            shapes[f"{base}.ffn.b2"] = (d,)
        shapes[f"{stack}.lnf.g"] = (d,)
        shapes[f"{stack}.lnf.b"] = (d,)

    shapes["proj_img_w"] = (d, config.proj_dim)
    shapes["proj_img_b"] = (config.proj_dim,)
    shapes["proj_txt_w"] = (d, config.proj_dim)
    shapes["proj_txt_b"] = (config.proj_dim,)
    shapes["itm_w"] = (d, 1)
    shapes["itm_b"] = (1,)
    shapes["nlvr_w"] = (d, 1)
    shapes["nlvr_b"] = (1,)
    shapes["lm_head_w"] = (d, v)
    shapes["lm_head_b"] = (v,)
    shapes["temperature"] = ()
    return shapes


def param_count(config: MEDConfig) -> int:
    return sum(int(np.prod(s, dtype=np.int64)) for s in
               param_shapes(config).values())


def init_params(config: MEDConfig) -> dict[str, np.ndarray]:
    """normal(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "temperature":
            arr = np.asarray(config.temperature_init, dtype=np.float32)
        elif leaf.endswith("g") and ".ln" in name:
            arr = np.ones(shape, dtype=np.float32)
        elif leaf.startswith("b") or (".ln" in name and leaf.endswith("b")):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            arr = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        params[name] = arr
    return params


class MED:
    """Config plus a named parameter map. Forward passes borrow the params
    as tape leaves (training) or as constants (inference)."""

    def __init__(self, config: MEDConfig,
                 params: Optional[dict] = None):
        self.config = config
        self.params = init_params(config) if params is None else params
        shapes = param_shapes(config)
        if list(self.params) != list(shapes):
            raise errors.ConfigError("parameter map does not match config")
        for name, arr in self.params.items():
            if tuple(arr.shape) != shapes[name]:
                raise errors.ShapeMismatch(
                    f"{name}: have {arr.shape}, config wants {shapes[name]}")

    def leaves(self, tape: Optional[Tape]) -> dict[str, Tensor]:
        if tape is None:
            return {k: Tensor(v) for k, v in self.params.items()}
        return {k: tape.leaf(v, requires_grad=True)
                for k, v in self.params.items()}


# --- forward pieces ---

def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    batch_shape = x.shape[:-1]
    flat = ops.reshape(x, (-1, x.shape[-1]))
    out = ops.add(ops.matmul(flat, w), b)
    return ops.reshape(out, (*batch_shape, w.shape[-1]))


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    x = ops.reshape(x, (b, length, n_heads, d // n_heads))
    x = ops.transpose(x, (0, 2, 1, 3))
    return ops.reshape(x, (b * n_heads, length, d // n_heads))


def _join_heads(x: Tensor, batch: int, n_heads: int) -> Tensor:
    _, length, d_head = x.shape
    x = ops.reshape(x, (batch, n_heads, length, d_head))
    x = ops.transpose(x, (0, 2, 1, 3))
    return ops.reshape(x, (batch, length, n_heads * d_head))


def attention(p: dict, prefix: str, x: Tensor, kv: Tensor,
              mask: Optional[np.ndarray], config: MEDConfig) -> Tensor:
    """Multi-head scaled dot-product attention with an optional additive
    mask broadcastable to (batch*heads, len_q, len_k)."""
    batch = x.shape[0]
    if kv.shape[0] != batch or kv.shape[-1] != config.d_model:
        raise errors.ShapeMismatch(
            f"attention kv shape {kv.shape} does not fit x {x.shape}")
    q = _split_heads(_linear(x, p[f"{prefix}.wq"], p[f"{prefix}.bq"]),
                     config.n_heads)
    k = _split_heads(_linear(kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]),
                     config.n_heads)
    v = _split_heads(_linear(kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]),
                     config.n_heads)
    scores = ops.scale(ops.bmm(q, ops.transpose(k, (0, 2, 1))),
                       1.0 / math.sqrt(config.d_head))
    if mask is not None:
        scores = ops.add(scores, Tensor(mask))
    weights = ops.softmax(scores, axis=-1)
    fused = _join_heads(ops.bmm(weights, v), batch, config.n_heads)
    return _linear(fused, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _block(p: dict, base: str, x: Tensor, image_states: Optional[Tensor],
           mask: Optional[np.ndarray], config: MEDConfig) -> Tensor:
    h = ops.layer_norm(x, p[f"{base}.ln1.g"], p[f"{base}.ln1.b"])
    x = ops.add(x, attention(p, f"{base}.attn", h, h, mask, config))
    if image_states is not None:
        h = ops.layer_norm(x, p[f"{base}.lnx.g"], p[f"{base}.lnx.b"])
        x = ops.add(x, attention(p, f"{base}.xattn", h, image_states,
                                 None, config))
    h = ops.layer_norm(x, p[f"{base}.ln2.g"], p[f"{base}.ln2.b"])
    h = _linear(h, p[f"{base}.ffn.w1"], p[f"{base}.ffn.b1"])
    h = ops.gelu(h)
    h = _linear(h, p[f"{base}.ffn.w2"], p[f"{base}.ffn.b2"])
    return ops.add(x, h)


def _run_stack(p: dict, stack: str, x: Tensor,
               image_states: Optional[Tensor],
               mask: Optional[np.ndarray], config: MEDConfig) -> Tensor:
    cross = image_states if stack in _CROSS_STACKS else None
    for i in range(config.n_layers):
        x = _block(p, f"{stack}.{i}", x, cross, mask, config)
    return ops.layer_norm(x, p[f"{stack}.lnf.g"], p[f"{stack}.lnf.b"])


def _dtype_of(p: dict) -> np.dtype:
    return p["token_emb"].data.dtype


def _check_ids(ids: np.ndarray, role: int, config: MEDConfig) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise errors.ShapeMismatch(
            f"token ids must be (batch, len), got {ids.shape}")
    if ids.shape[1] > config.max_len:
        raise errors.TooLong(
            f"sequence length {ids.shape[1]} exceeds max_len "
            f"{config.max_len}")
    if ids.shape[1] == 0 or not (ids[:, 0] == role).all():
        raise errors.MissingRoleToken(
            f"every sequence must start with token id {role}")
    return ids


def _pad_mask(ids: np.ndarray, n_heads: int, dtype) -> Optional[np.ndarray]:
    """Additive key mask hiding [PAD] columns, or None when nothing is
    padded."""
    if not (ids == vocab.PAD).any():
        return None
    add = np.where(ids == vocab.PAD, NEG_MASK, 0.0).astype(dtype)
    return np.repeat(add[:, None, :], n_heads, axis=0)


def _causal_mask(length: int, dtype) -> np.ndarray:
    return np.triu(np.full((1, length, length), NEG_MASK, dtype=dtype), k=1)


def _positions(p: dict, name: str, length: int) -> Tensor:
    pos = ops.slice_axis(p[name], 0, 0, length)
    return ops.reshape(pos, (1, length, pos.shape[-1]))


# --- batched pathways ---

def encode_image_batch(p: dict, images: np.ndarray,
                       config: MEDConfig) -> Tensor:
    """(B, S, S, 3) images in [0,1] -> (B, n_patches+1, d_model); row 0 of
    each output is the image summary used by the contrastive head."""
    images = np.asarray(images)
    want = (config.image_size, config.image_size, 3)
    if images.ndim != 4 or images.shape[1:] != want:
        raise errors.BadImageShape(
            f"expected (batch, {want[0]}, {want[1]}, 3), "
            f"got {images.shape}")
    dt = _dtype_of(p)
    b = images.shape[0]
    g = config.image_size // config.patch_size
    patches = (images.reshape(b, g, config.patch_size, g,
                              config.patch_size, 3)
               .transpose(0, 1, 3, 2, 4, 5)
               .reshape(b, config.n_patches, config.patch_dim)
               .astype(dt))
    x = _linear(Tensor(patches), p["patch_proj_w"], p["patch_proj_b"])
    cls_rows = ops.add(Tensor(np.zeros((b, 1, config.d_model), dtype=dt)),
                       ops.reshape(p["image_cls"], (1, 1, config.d_model)))
    x = ops.concat([cls_rows, x], axis=1)
    x = ops.add(x, _positions(p, "pos_image", config.image_seq))
    return _run_stack(p, "img_enc", x, None, None, config)


def encode_text_batch(p: dict, ids, config: MEDConfig) -> Tensor:
    """[CLS]-led token rows -> (B, L, d_model), bidirectional, no image."""
    ids = _check_ids(ids, vocab.CLS, config)
    dt = _dtype_of(p)
    x = ops.embedding(p["token_emb"], ids)
    x = ops.add(x, _positions(p, "pos_text", ids.shape[1]))
    return _run_stack(p, "txt_enc", x, None,
                      _pad_mask(ids, config.n_heads, dt), config)


def encode_multimodal_batch(p: dict, ids, image_states: Optional[Tensor],
                            config: MEDConfig) -> Tensor:
    """[ENC]-led token rows fused with image states; row 0 feeds the
    matching and statement heads."""
    if image_states is None:
        raise errors.MissingImage("grounded encoding requires image states")
    ids = _check_ids(ids, vocab.ENC, config)
    dt = _dtype_of(p)
    x = ops.embedding(p["token_emb"], ids)
    x = ops.add(x, _positions(p, "pos_text", ids.shape[1]))
    return _run_stack(p, "gnd_enc", x, image_states,
                      _pad_mask(ids, config.n_heads, dt), config)


def decode_batch(p: dict, ids, image_states: Optional[Tensor],
                 config: MEDConfig) -> Tensor:
    """[DEC]-led prefixes -> next-token logits (B, L, vocab). Causal: row t
    sees prefix positions 0..t and the image only."""
    if image_states is None:
        raise errors.MissingImage("decoding requires image states")
    ids = _check_ids(ids, vocab.DEC, config)
    dt = _dtype_of(p)
    x = ops.embedding(p["token_emb"], ids)
    x = ops.add(x, _positions(p, "pos_text", ids.shape[1]))
    # right-padded batches need no key mask here: the causal mask already
    # hides every later position, and pad rows supervise nothing
    x = _run_stack(p, "gnd_dec", x, image_states,
                   _causal_mask(ids.shape[1], dt), config)
    return _linear(x, p["lm_head_w"], p["lm_head_b"])


# --- contrastive projection heads ---

def _cls_rows(states: Tensor) -> Tensor:
    rows = ops.slice_axis(states, 1, 0, 1)
    return ops.reshape(rows, (states.shape[0], states.shape[2]))


def project_image(p: dict, image_states: Tensor) -> Tensor:
    """(B, n_patches+1, D) -> unit-norm (B, proj_dim) from the summary row."""
    flat = _cls_rows(image_states)
    out = ops.add(ops.matmul(flat, p["proj_img_w"]), p["proj_img_b"])
    return ops.l2_normalize(out, axis=-1)


def project_text(p: dict, text_states: Tensor) -> Tensor:
    """(B, L, D) -> unit-norm (B, proj_dim) from the [CLS] row."""
    flat = _cls_rows(text_states)
    out = ops.add(ops.matmul(flat, p["proj_txt_w"]), p["proj_txt_b"])
    return ops.l2_normalize(out, axis=-1)


# --- single-example wrappers ---

def encode_image(image: np.ndarray, p: dict, config: MEDConfig) -> Tensor:
    image = np.asarray(image)
    if image.shape != (config.image_size, config.image_size, 3):
        raise errors.BadImageShape(
            f"expected ({config.image_size}, {config.image_size}, 3), "
            f"got {image.shape}")
    return ops.take(encode_image_batch(p, image[None], config), 0, axis=0)


def _one(ids) -> np.ndarray:
    return np.asarray(ids)[None, :]


def encode_text(tokens, p: dict, config: MEDConfig) -> Tensor:
    return ops.take(encode_text_batch(p, _one(tokens), config), 0, axis=0)


def encode_multimodal(tokens, image_states: Optional[Tensor], p: dict,
                      config: MEDConfig) -> Tensor:
    if image_states is not None and image_states.data.ndim == 2:
        image_states = ops.reshape(image_states, (1, *image_states.shape))
    out = encode_multimodal_batch(p, _one(tokens), image_states, config)
    return ops.take(out, 0, axis=0)


def decode_step(prefix, image_states: Optional[Tensor], p: dict,
                config: MEDConfig) -> Tensor:
    if image_states is not None and image_states.data.ndim == 2:
        image_states = ops.reshape(image_states, (1, *image_states.shape))
    return ops.take(decode_batch(p, _one(prefix), image_states, config),
                    0, axis=0)
