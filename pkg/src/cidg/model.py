"""Small pre-norm encoder-decoder with exact hand-derived gradients.

Architecture, fixed so checkpoints and parameter counts are portable:
shared token embedding, learned positional tables (one for the encoder, one
for the decoder), pre-norm residual blocks, scaled dot-product attention
(1/sqrt(head_dim), no projection biases), ReLU feed-forward with biases, a
final layer norm on the decoder only, and an output projection tied to the
token embedding. Parameters are stored float32; the compute dtype is a knob
so the finite-difference oracle can run everything in float64.

Init order (one rng, weights only; gains start at one, biases/offsets at zero):
tok_emb, enc_pos, dec_pos, then per encoder layer wq wk wv wo w1 w2, then per
decoder layer self wq wk wv wo, cross wq wk wv wo, w1 w2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tokenizer import BOS, PAD

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    max_positions: int = 512
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]  # insertion order is the canonical tensor order


def _tensor_inventory(cfg: ModelConfig):
    """(name, shape, kind) in canonical order; kind is weight|gain|zero."""
    D, F, V, P = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_positions
    inv: list[tuple[str, tuple[int, ...], str]] = [
        ("tok_emb", (V, D), "weight"),
        ("enc_pos", (P, D), "weight"),
        ("dec_pos", (P, D), "weight"),
    ]

    def ln(prefix):
        inv.append((f"{prefix}.gain", (D,), "gain"))
        inv.append((f"{prefix}.offset", (D,), "zero"))

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            inv.append((f"{prefix}.{w}", (D, D), "weight"))

    def ffn(prefix):
        inv.append((f"{prefix}.w1", (D, F), "weight"))
        inv.append((f"{prefix}.b1", (F,), "zero"))
        inv.append((f"{prefix}.w2", (F, D), "weight"))
        inv.append((f"{prefix}.b2", (D,), "zero"))

    for i in range(cfg.n_enc_layers):
        ln(f"enc{i}.ln1")
        attn(f"enc{i}.attn")
        ln(f"enc{i}.ln2")
        ffn(f"enc{i}.ffn")
    for i in range(cfg.n_dec_layers):
        ln(f"dec{i}.ln1")
        attn(f"dec{i}.self")
        ln(f"dec{i}.ln2")
        attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3")
        ffn(f"dec{i}.ffn")
    ln("final_ln")
    return inv


def count_params(config: ModelConfig) -> int:
    """Closed form: V*D + 2*P*D + n_enc*(4D^2 + 2DF + F + 5D)
    + n_dec*(8D^2 + 2DF + F + 7D) + 2D."""
    D, F = config.d_model, config.d_ff
    enc = 4 * D * D + 2 * D * F + F + 5 * D
    dec = 8 * D * D + 2 * D * F + F + 7 * D
    return (
        config.vocab_size * D
        + 2 * config.max_positions * D
        + config.n_enc_layers * enc
        + config.n_dec_layers * dec
        + 2 * D
    )


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Weights ~ Normal(0, 0.02) drawn in canonical order; only weights consume draws."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in _tensor_inventory(config):
        if kind == "weight":
            tensors[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        elif kind == "gain":
            tensors[name] = np.ones(shape, dtype=np.float32)
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return ModelParams(config=config, tensors=tensors)


def decayed_tensors(config: ModelConfig) -> frozenset[str]:
    """Names subject to weight decay: attention and feed-forward matrices only."""
    return frozenset(
        name
        for name, _, kind in _tensor_inventory(config)
        if kind == "weight" and name not in ("tok_emb", "enc_pos", "dec_pos")
    )


# ---------------------------------------------------------------------------
# batched forward / backward


def _p(params: ModelParams, name: str, dtype):
    return params.tensors[name].astype(dtype, copy=False)


def _split_heads(x, n_heads):
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def _layer_norm(x, gain, offset, cache, key):
    B, T, D = x.shape
    y, mean, rstd = kernels.layer_norm_fwd(np.ascontiguousarray(x.reshape(-1, D)), gain, offset, LN_EPS)
    if cache is not None:
        cache[key] = (x, mean, rstd)
    return y.reshape(B, T, D)


def _layer_norm_bwd(dy, gain, cache_entry, grads, gain_name, offset_name):
    x, mean, rstd = cache_entry
    B, T, D = x.shape
    dx, dgain, doffset = kernels.layer_norm_bwd(
        np.ascontiguousarray(dy.reshape(-1, D)), np.ascontiguousarray(x.reshape(-1, D)), gain, mean, rstd
    )
    grads[gain_name] += dgain
    grads[offset_name] += doffset
    return dx.reshape(B, T, D)


def _attn_mask(key_mask, Tq, causal):
    """(B, 1, Tq, Tk) uint8 validity mask, broadcastable over heads."""
    B, Tk = key_mask.shape
    mask = np.broadcast_to(key_mask[:, None, None, :], (B, 1, Tq, Tk))
    if causal:
        tril = np.tril(np.ones((Tq, Tk), dtype=np.uint8))
        mask = mask * tril[None, None, :, :]
    return np.ascontiguousarray(mask)


def _attention(x_q, x_kv, params, prefix, key_mask, causal, dtype, cache):
    cfg = params.config
    H = cfg.n_heads
    dh = cfg.d_model // H
    B, Tq, D = x_q.shape
    Tk = x_kv.shape[1]
    wq, wk, wv, wo = (_p(params, f"{prefix}.{w}", dtype) for w in ("wq", "wk", "wv", "wo"))

    q = _split_heads(x_q @ wq, H)
    k = _split_heads(x_kv @ wk, H)
    v = _split_heads(x_kv @ wv, H)
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) / math.sqrt(dh)
    mask = np.ascontiguousarray(np.broadcast_to(_attn_mask(key_mask, Tq, causal), scores.shape))
    probs2d = kernels.masked_softmax_fwd(
        np.ascontiguousarray(scores.reshape(-1, Tk)), mask.reshape(-1, Tk)
    )
    probs = probs2d.reshape(B, H, Tq, Tk)
    ctx = _merge_heads(np.matmul(probs, v))
    out = ctx @ wo
    if cache is not None:
        cache[prefix] = (x_q, x_kv, q, k, v, probs, ctx)
    return out


def _attention_bwd(d_out, params, prefix, cache_entry, grads, dtype):
    cfg = params.config
    H = cfg.n_heads
    dh = cfg.d_model // H
    x_q, x_kv, q, k, v, probs, ctx = cache_entry
    B, Tq, D = x_q.shape
    Tk = x_kv.shape[1]
    wq, wk, wv, wo = (_p(params, f"{prefix}.{w}", dtype) for w in ("wq", "wk", "wv", "wo"))

    grads[f"{prefix}.wo"] += np.einsum("btd,bte->de", ctx, d_out, optimize=True)
    d_ctx = _split_heads(d_out @ wo.T, H)
    d_probs = np.matmul(d_ctx, v.transpose(0, 1, 3, 2))
    d_v = np.matmul(probs.transpose(0, 1, 3, 2), d_ctx)
    d_scores2d = kernels.softmax_bwd(
        np.ascontiguousarray(d_probs.reshape(-1, Tk)), np.ascontiguousarray(probs.reshape(-1, Tk))
    )
    d_scores = d_scores2d.reshape(B, H, Tq, Tk) / math.sqrt(dh)
    d_q = np.matmul(d_scores, k)
    d_k = np.matmul(d_scores.transpose(0, 1, 3, 2), q)

    d_q = _merge_heads(d_q)
    d_k = _merge_heads(d_k)
    d_v = _merge_heads(d_v)
    grads[f"{prefix}.wq"] += np.einsum("btd,bte->de", x_q, d_q, optimize=True)
    grads[f"{prefix}.wk"] += np.einsum("btd,bte->de", x_kv, d_k, optimize=True)
    grads[f"{prefix}.wv"] += np.einsum("btd,bte->de", x_kv, d_v, optimize=True)
    d_x_q = d_q @ wq.T
    d_x_kv = d_k @ wk.T + d_v @ wv.T
    return d_x_q, d_x_kv


def _ffn(x, params, prefix, dtype, cache):
    w1 = _p(params, f"{prefix}.w1", dtype)
    b1 = _p(params, f"{prefix}.b1", dtype)
    w2 = _p(params, f"{prefix}.w2", dtype)
    b2 = _p(params, f"{prefix}.b2", dtype)
    h = x @ w1 + b1
    a = kernels.relu_fwd(h)
    if cache is not None:
        cache[prefix] = (x, h, a)
    return a @ w2 + b2


def _ffn_bwd(d_out, params, prefix, cache_entry, grads, dtype):
    x, h, a = cache_entry
    w1 = _p(params, f"{prefix}.w1", dtype)
    w2 = _p(params, f"{prefix}.w2", dtype)
    grads[f"{prefix}.w2"] += np.einsum("btf,btd->fd", a, d_out, optimize=True)
    grads[f"{prefix}.b2"] += d_out.sum(axis=(0, 1))
    d_a = d_out @ w2.T
    d_h = kernels.relu_bwd(d_a, h)
    grads[f"{prefix}.w1"] += np.einsum("btd,btf->df", x, d_h, optimize=True)
    grads[f"{prefix}.b1"] += d_h.sum(axis=(0, 1))
    return d_h @ w1.T


def _dropout(x, rate, rng, cache, key):
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    if cache is not None:
        cache[key] = keep
    return x * keep


def _dropout_bwd(dy, cache, key):
    keep = cache.get(key)
    return dy if keep is None else dy * keep


def _check_ids(ids, vocab_size, what):
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError(f"{what} contains token id out of range [0, {vocab_size})")


def encode_source(params: ModelParams, src: np.ndarray, dtype=np.float32, cache=None, dropout_rng=None):
    """Encoder stack over (B, S) ids; returns (states, key_mask uint8)."""
    cfg = params.config
    B, S = src.shape
    _check_ids(src, cfg.vocab_size, "source")
    if S > cfg.max_positions:
        raise ValueError(f"source length {S} exceeds max_positions {cfg.max_positions}")
    key_mask = (src != PAD).astype(np.uint8)
    x = _p(params, "tok_emb", dtype)[src] + _p(params, "enc_pos", dtype)[:S]
    if cache is not None:
        cache["src"] = src
        cache["enc_x0"] = x
    rate = cfg.dropout
    for i in range(cfg.n_enc_layers):
        g1 = _p(params, f"enc{i}.ln1.gain", dtype)
        o1 = _p(params, f"enc{i}.ln1.offset", dtype)
        h = _layer_norm(x, g1, o1, cache, f"enc{i}.ln1")
        attn = _attention(h, h, params, f"enc{i}.attn", key_mask, False, dtype, cache)
        x = x + _dropout(attn, rate, dropout_rng, cache, f"enc{i}.attn.drop")
        g2 = _p(params, f"enc{i}.ln2.gain", dtype)
        o2 = _p(params, f"enc{i}.ln2.offset", dtype)
        h = _layer_norm(x, g2, o2, cache, f"enc{i}.ln2")
        ff = _ffn(h, params, f"enc{i}.ffn", dtype, cache)
        x = x + _dropout(ff, rate, dropout_rng, cache, f"enc{i}.ffn.drop")
    if cache is not None:
        cache["enc_out"] = x
        cache["key_mask"] = key_mask
    return x, key_mask


def decoder_logits(
    params: ModelParams,
    enc_out: np.ndarray,
    key_mask: np.ndarray,
    tgt_in: np.ndarray,
    dtype=np.float32,
    cache=None,
    dropout_rng=None,
):
    """Decoder stack + tied output head over (B, T) teacher-forced inputs."""
    cfg = params.config
    B, T = tgt_in.shape
    _check_ids(tgt_in, cfg.vocab_size, "target")
    if T > cfg.max_positions:
        raise ValueError(f"target length {T} exceeds max_positions {cfg.max_positions}")
    emb = _p(params, "tok_emb", dtype)
    x = emb[tgt_in] + _p(params, "dec_pos", dtype)[:T]
    if cache is not None:
        cache["tgt_in"] = tgt_in
        cache["dec_x0"] = x
    tgt_mask = np.ones((B, T), dtype=np.uint8)
    rate = cfg.dropout
    for i in range(cfg.n_dec_layers):
        h = _layer_norm(
            x, _p(params, f"dec{i}.ln1.gain", dtype), _p(params, f"dec{i}.ln1.offset", dtype), cache, f"dec{i}.ln1"
        )
        attn = _attention(h, h, params, f"dec{i}.self", tgt_mask, True, dtype, cache)
        x = x + _dropout(attn, rate, dropout_rng, cache, f"dec{i}.self.drop")
        h = _layer_norm(
            x, _p(params, f"dec{i}.ln2.gain", dtype), _p(params, f"dec{i}.ln2.offset", dtype), cache, f"dec{i}.ln2"
        )
        attn = _attention(h, enc_out, params, f"dec{i}.cross", key_mask, False, dtype, cache)
        x = x + _dropout(attn, rate, dropout_rng, cache, f"dec{i}.cross.drop")
        h = _layer_norm(
            x, _p(params, f"dec{i}.ln3.gain", dtype), _p(params, f"dec{i}.ln3.offset", dtype), cache, f"dec{i}.ln3"
        )
        ff = _ffn(h, params, f"dec{i}.ffn", dtype, cache)
        x = x + _dropout(ff, rate, dropout_rng, cache, f"dec{i}.ffn.drop")
    h = _layer_norm(
        x, _p(params, "final_ln.gain", dtype), _p(params, "final_ln.offset", dtype), cache, "final_ln"
    )
    if cache is not None:
        cache["final_h"] = h
    return h @ emb.T


def forward_batch(params, src, tgt_in, dtype=np.float32, cache=None, dropout_rng=None):
    enc_out, key_mask = encode_source(params, src, dtype, cache, dropout_rng)
    return decoder_logits(params, enc_out, key_mask, tgt_in, dtype, cache, dropout_rng)


def backward_batch(params: ModelParams, cache: dict, dlogits: np.ndarray, dtype=np.float32):
    """Exact gradients for every tensor given d(loss)/d(logits) of forward_batch."""
    cfg = params.config
    grads = {name: np.zeros_like(t, dtype=dtype) for name, t in params.tensors.items()}
    emb = _p(params, "tok_emb", dtype)

    final_h = cache["final_h"]
    grads["tok_emb"] += np.einsum("btv,btd->vd", dlogits, final_h, optimize=True)
    dx = _layer_norm_bwd(
        dlogits @ emb,
        _p(params, "final_ln.gain", dtype),
        cache["final_ln"],
        grads,
        "final_ln.gain",
        "final_ln.offset",
    )

    d_enc_out = np.zeros_like(cache["enc_out"])
    for i in reversed(range(cfg.n_dec_layers)):
        d_ff = _dropout_bwd(dx, cache, f"dec{i}.ffn.drop")
        dh = _ffn_bwd(d_ff, params, f"dec{i}.ffn", cache[f"dec{i}.ffn"], grads, dtype)
        dx = dx + _layer_norm_bwd(
            dh, _p(params, f"dec{i}.ln3.gain", dtype), cache[f"dec{i}.ln3"], grads,
            f"dec{i}.ln3.gain", f"dec{i}.ln3.offset",
        )
        d_attn = _dropout_bwd(dx, cache, f"dec{i}.cross.drop")
        dh, d_enc = _attention_bwd(d_attn, params, f"dec{i}.cross", cache[f"dec{i}.cross"], grads, dtype)
        d_enc_out += d_enc
        dx = dx + _layer_norm_bwd(
            dh, _p(params, f"dec{i}.ln2.gain", dtype), cache[f"dec{i}.ln2"], grads,
            f"dec{i}.ln2.gain", f"dec{i}.ln2.offset",
        )
        d_attn = _dropout_bwd(dx, cache, f"dec{i}.self.drop")
        dh_q, dh_kv = _attention_bwd(d_attn, params, f"dec{i}.self", cache[f"dec{i}.self"], grads, dtype)
        dx = dx + _layer_norm_bwd(
            dh_q + dh_kv, _p(params, f"dec{i}.ln1.gain", dtype), cache[f"dec{i}.ln1"], grads,
            f"dec{i}.ln1.gain", f"dec{i}.ln1.offset",
        )

    tgt_in = cache["tgt_in"]
    T = tgt_in.shape[1]
    np.add.at(grads["tok_emb"], tgt_in, dx)
    grads["dec_pos"][:T] += dx.sum(axis=0)

    dx = d_enc_out
    for i in reversed(range(cfg.n_enc_layers)):
        d_ff = _dropout_bwd(dx, cache, f"enc{i}.ffn.drop")
        dh = _ffn_bwd(d_ff, params, f"enc{i}.ffn", cache[f"enc{i}.ffn"], grads, dtype)
        dx = dx + _layer_norm_bwd(
            dh, _p(params, f"enc{i}.ln2.gain", dtype), cache[f"enc{i}.ln2"], grads,
            f"enc{i}.ln2.gain", f"enc{i}.ln2.offset",
        )
        d_attn = _dropout_bwd(dx, cache, f"enc{i}.attn.drop")
        dh_q, dh_kv = _attention_bwd(d_attn, params, f"enc{i}.attn", cache[f"enc{i}.attn"], grads, dtype)
        dx = dx + _layer_norm_bwd(
            dh_q + dh_kv, _p(params, f"enc{i}.ln1.gain", dtype), cache[f"enc{i}.ln1"], grads,
            f"enc{i}.ln1.gain", f"enc{i}.ln1.offset",
        )

    src = cache["src"]
    S = src.shape[1]
    np.add.at(grads["tok_emb"], src, dx)
    grads["enc_pos"][:S] += dx.sum(axis=0)
    return grads


def forward(params: ModelParams, source: list[int], target_in: list[int]) -> np.ndarray:
    """Single-sequence contract: logits matrix of shape (len(target_in), vocab)."""
    if not target_in or target_in[0] != BOS:
        raise ValueError("target_in must start with BOS")
    src = np.asarray(source, dtype=np.int64)
    pads = np.flatnonzero(src == PAD)
    if pads.size and (pads[-1] != len(source) - 1 or np.any(np.diff(pads) != 1)):
        raise ValueError("PAD may only appear as a trailing run in source")
    tgt = np.asarray(target_in, dtype=np.int64)
    logits = forward_batch(params, src[None, :], tgt[None, :])
    return logits[0]
