"""Shared transformer encoder plus MLM, replacement-detection, and QA heads.

Post-LN encoder in the BERT/RoBERTa lineage: learned absolute position
embeddings, embedding LayerNorm, then per layer attention -> add&norm ->
GeLU FFN -> add&norm. The generator and discriminator are views over the
same parameter dict when sharing is on; only the encoder body is ever
shared, never the heads.

The MLM projection is weight-tied to the token embedding (logits =
h @ E^T + bias). The detection head is sigmoid(w . GeLU(W h)) with no
bias terms. The QA head is two hidden->1 projections for start/end.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


@dataclass
class EncoderConfig:
    layers: int = 4
    hidden: int = 128
    heads: int = 4
    ffn_dim: int = 512
    max_len: int = 128
    vocab_size: int = 4096
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")

    def to_json_dict(self) -> dict:
        return {
            "layers": self.layers,
            "hidden": self.hidden,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "max_len": self.max_len,
            "vocab_size": self.vocab_size,
            "dropout": self.dropout,
        }


INIT_STD = 0.02


def _normal(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {
        "tok_emb": _normal(rng, cfg.vocab_size, cfg.hidden),
        "pos_emb": _normal(rng, cfg.max_len, cfg.hidden),
        "emb_ln_g": _ones(cfg.hidden),
        "emb_ln_b": _zeros(cfg.hidden),
    }
    for i in range(cfg.layers):
        pre = f"layers.{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + name] = _normal(rng, cfg.hidden, cfg.hidden)
            p[pre + "attn.b" + name[1]] = _zeros(cfg.hidden)
        p[pre + "ln1_g"] = _ones(cfg.hidden)
        p[pre + "ln1_b"] = _zeros(cfg.hidden)
        p[pre + "ffn.w1"] = _normal(rng, cfg.hidden, cfg.ffn_dim)
        p[pre + "ffn.b1"] = _zeros(cfg.ffn_dim)
        p[pre + "ffn.w2"] = _normal(rng, cfg.ffn_dim, cfg.hidden)
        p[pre + "ffn.b2"] = _zeros(cfg.hidden)
        p[pre + "ln2_g"] = _ones(cfg.hidden)
        p[pre + "ln2_b"] = _zeros(cfg.hidden)
    return p


def init_head_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "mlm_bias": _zeros(cfg.vocab_size),
        "disc_W": _normal(rng, cfg.hidden, cfg.hidden),
        "disc_w": _normal(rng, cfg.hidden),
        "qa_start_w": _normal(rng, cfg.hidden),
        "qa_start_b": _zeros(1),
        "qa_end_w": _normal(rng, cfg.hidden),
        "qa_end_b": _zeros(1),
    }


class KgModel:
    """Parameter bundle: shared (or twinned) encoder plus the three heads."""

    def __init__(self, config: EncoderConfig, seed: int = 0, share_params: bool = True):
        rng = np.random.default_rng(seed)
        self.config = config
        self.share_params = share_params
        self.encoder_g = init_encoder_params(config, rng)
        if share_params:
            self.encoder_d = self.encoder_g
        else:
            self.encoder_d = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.encoder_g.items()}
        self.heads = init_head_params(config, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"enc_g.{k}": v for k, v in self.encoder_g.items()}
        if not self.share_params:
            out.update({f"enc_d.{k}": v for k, v in self.encoder_d.items()})
        out.update({f"head.{k}": v for k, v in self.heads.items()})
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        missing = set(named) - set(tensors)
        if missing:
            raise ShapeError(f"checkpoint missing tensors: {sorted(missing)[:4]}...")
        for name, p in named.items():
            arr = tensors[name]
            if arr.shape != p.data.shape:
                raise ShapeError(f"tensor {name}: checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)


def encode(
    ids: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    pad_mask: np.ndarray | None = None,
    dropout_seed: int | None = None,
) -> Tensor:
    """Per-token hidden states, shape (batch, seq, hidden).

    ``pad_mask`` is 1.0 at real positions, 0.0 at padding; padded keys are
    excluded from attention. Dropout applies only when the config asks for
    it and a seed is provided.
    """
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, T = ids.shape
    if T > cfg.max_len:
        raise ShapeError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    if T == 0:
        raise ShapeError("empty sequence")
    nh = cfg.heads
    dh = cfg.hidden // nh

    drop_p = cfg.dropout if dropout_seed is not None else 0.0
    drop_i = 0

    def drop(t: Tensor) -> Tensor:
        nonlocal drop_i
        if drop_p == 0.0:
            return t
        drop_i += 1
        return ad.dropout(t, drop_p, seed=(dropout_seed or 0) + drop_i)

    positions = np.broadcast_to(np.arange(T), (B, T))
    h = ad.add(ad.embedding_lookup(params["tok_emb"], ids), ad.embedding_lookup(params["pos_emb"], positions))
    h = ad.layer_norm(h, params["emb_ln_g"], params["emb_ln_b"])
    h = drop(h)

    if pad_mask is None:
        attn_bias = np.zeros((B, 1, 1, T), dtype=h.data.dtype)
    else:
        attn_bias = ((1.0 - np.asarray(pad_mask, dtype=h.data.dtype)) * -1e9).reshape(B, 1, 1, T)

    inv_sqrt_dh = 1.0 / math.sqrt(dh)
    for i in range(cfg.layers):
        pre = f"layers.{i}."

        def heads_view(t: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(t, (B, T, nh, dh)), (0, 2, 1, 3))

        q = heads_view(ad.add(ad.matmul(h, params[pre + "attn.wq"]), params[pre + "attn.bq"]))
        k = heads_view(ad.add(ad.matmul(h, params[pre + "attn.wk"]), params[pre + "attn.bk"]))
        v = heads_view(ad.add(ad.matmul(h, params[pre + "attn.wv"]), params[pre + "attn.bv"]))
        scores = ad.add_const(ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt_dh), attn_bias)
        probs = drop(ad.softmax(scores, axis=-1))
        ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (B, T, cfg.hidden))
        attn_out = drop(ad.add(ad.matmul(ctx, params[pre + "attn.wo"]), params[pre + "attn.bo"]))
        h = ad.layer_norm(ad.add(h, attn_out), params[pre + "ln1_g"], params[pre + "ln1_b"])

        inner = ad.gelu(ad.add(ad.matmul(h, params[pre + "ffn.w1"]), params[pre + "ffn.b1"]))
        ffn_out = drop(ad.add(ad.matmul(inner, params[pre + "ffn.w2"]), params[pre + "ffn.b2"]))
        h = ad.layer_norm(ad.add(h, ffn_out), params[pre + "ln2_g"], params[pre + "ln2_b"])
    return h


def mlm_logits(hidden_rows: Tensor, tok_emb: Tensor, mlm_bias: Tensor) -> Tensor:
    """Vocab logits for a (rows, hidden) gather of positions; tied to tok_emb."""
    return ad.add(ad.matmul(hidden_rows, ad.transpose(tok_emb)), mlm_bias)


def disc_prob(hidden: Tensor, disc_W: Tensor, disc_w: Tensor) -> Tensor:
    """Per-position replacement probability, strictly inside (0, 1)."""
    B, T, H = hidden.shape
    flat = ad.reshape(hidden, (B * T, H))
    scores = ad.matmul(ad.gelu(ad.matmul(flat, disc_W)), ad.reshape(disc_w, (H, 1)))
    return ad.reshape(ad.sigmoid(scores), (B, T))


def qa_logits(hidden: Tensor, heads: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    B, T, H = hidden.shape
    flat = ad.reshape(hidden, (B * T, H))

    def proj(w: Tensor, b: Tensor) -> Tensor:
        return ad.reshape(ad.add(ad.matmul(flat, ad.reshape(w, (H, 1))), b), (B, T))

    return proj(heads["qa_start_w"], heads["qa_start_b"]), proj(heads["qa_end_w"], heads["qa_end_b"])
