"""Text/speech transformer encoders and the single-layer modality fusion.

Both encoders are pre-norm transformer stacks (zero layers = identity).
The speech encoder first adds a convolutional relative position embedding:
a grouped same-padding 1-d conv over the sequence, GELU, residual add.
Fusion concatenates text then speech, adds learnable modality embeddings,
and applies one transformer layer attending across both modalities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import (Parameter, Tensor, add, concat, conv1d, dropout as
                       dropout_op, embedding, gelu, layer_norm, linear,
                       matmul, reshape, softmax, transpose)

NEG_INF = -1e9  # finite mask value so every op output stays finite


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    d_h: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.0
    conv_pos_kernel: int = 7
    conv_pos_groups: int = 4

    def __post_init__(self):
        if self.d_h % self.num_heads:
            raise ValueError(
                f"d_h {self.d_h} not divisible by num_heads {self.num_heads}")
        if self.conv_pos_kernel % 2 == 0:
            raise ValueError("conv_pos_kernel must be odd for same padding")


@dataclass
class TransformerLayerParams:
    ln1_gain: Parameter
    ln1_bias: Parameter
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter
    ff1_w: Parameter
    ff1_b: Parameter
    ff2_w: Parameter
    ff2_b: Parameter


def _register(registry: dict, name: str, array: np.ndarray) -> Parameter:
    p = Parameter(array, name)
    registry[name] = p
    return p


def init_transformer_layer(registry: dict, rng: np.random.Generator,
                           prefix: str, d_h: int, ffn_dim: int,
                           dtype=np.float32,
                           scale: float = 0.02) -> TransformerLayerParams:
    def w(name, shape):
        return _register(registry, f"{prefix}.{name}",
                         (scale * rng.standard_normal(shape)).astype(dtype))

    def zeros(name, shape):
        return _register(registry, f"{prefix}.{name}", np.zeros(shape, dtype))

    def ones(name, shape):
        return _register(registry, f"{prefix}.{name}", np.ones(shape, dtype))

    return TransformerLayerParams(
        ln1_gain=ones("ln1.gain", d_h), ln1_bias=zeros("ln1.bias", d_h),
        wq=w("attn.wq", (d_h, d_h)), bq=zeros("attn.bq", d_h),
        wk=w("attn.wk", (d_h, d_h)), bk=zeros("attn.bk", d_h),
        wv=w("attn.wv", (d_h, d_h)), bv=zeros("attn.bv", d_h),
        wo=w("attn.wo", (d_h, d_h)), bo=zeros("attn.bo", d_h),
        ln2_gain=ones("ln2.gain", d_h), ln2_bias=zeros("ln2.bias", d_h),
        ff1_w=w("ffn.w1", (d_h, ffn_dim)), ff1_b=zeros("ffn.b1", ffn_dim),
        ff2_w=w("ffn.w2", (ffn_dim, d_h)), ff2_b=zeros("ffn.b2", d_h))


def init_encoder_stack(registry: dict, rng: np.random.Generator, prefix: str,
                       config: EncoderConfig, dtype=np.float32,
                       scale: float = 0.02) -> list:
    return [init_transformer_layer(registry, rng, f"{prefix}.layer{i}",
                                   config.d_h, config.ffn_dim, dtype, scale)
            for i in range(config.num_layers)]


def init_conv_positional(registry: dict, rng: np.random.Generator, prefix: str,
                         config: EncoderConfig, dtype=np.float32,
                         scale: float = 0.02) -> tuple:
    d_h, k, g = config.d_h, config.conv_pos_kernel, config.conv_pos_groups
    w = _register(registry, f"{prefix}.conv_pos.w",
                  (scale * rng.standard_normal((d_h, d_h // g, k))).astype(dtype))
    b = _register(registry, f"{prefix}.conv_pos.b", np.zeros(d_h, dtype))
    return w, b


def key_padding_to_additive(mask, dtype=np.float64) -> np.ndarray | None:
    """bool keep-mask [n] -> additive [n] with NEG_INF on padded keys."""
    if mask is None:
        return None
    keep = np.asarray(mask, dtype=bool)
    return np.where(keep, 0.0, NEG_INF).astype(dtype)


def multi_head_attention(x: Tensor, p: TransformerLayerParams, num_heads: int,
                         additive_mask=None, capture: list | None = None) -> Tensor:
    n, d = x.shape
    dk = d // num_heads

    def split_heads(t):
        return transpose(reshape(t, (n, num_heads, dk)), (1, 0, 2))

    q = split_heads(linear(x, p.wq, p.bq))
    k = split_heads(linear(x, p.wk, p.bk))
    v = split_heads(linear(x, p.wv, p.bv))
    scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dk))
    attn = softmax(scores, additive_mask)
    if capture is not None:
        capture.append(attn.data.copy())
    ctx = matmul(attn, v)                              # [H, n, dk]
    merged = reshape(transpose(ctx, (1, 0, 2)), (n, d))
    return linear(merged, p.wo, p.bo)


def transformer_layer(x: Tensor, p: TransformerLayerParams, num_heads: int,
                      additive_mask=None, include_ffn: bool = True,
                      drop_rate: float = 0.0, rng=None,
                      capture: list | None = None) -> Tensor:
    attn_out = multi_head_attention(layer_norm(x, p.ln1_gain, p.ln1_bias),
                                    p, num_heads, additive_mask, capture)
    if drop_rate > 0.0:
        attn_out = dropout_op(attn_out, drop_rate, rng)
    h = add(x, attn_out)
    if not include_ffn:
        return h
    ff = linear(gelu(linear(layer_norm(h, p.ln2_gain, p.ln2_bias),
                            p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b)
    if drop_rate > 0.0:
        ff = dropout_op(ff, drop_rate, rng)
    return add(h, ff)


def encode_text(x: Tensor, layers: list, config: EncoderConfig,
                key_padding_mask=None, rng=None) -> Tensor:
    """Pre-norm stack over [n, d_h] embeddings; zero layers = identity."""
    additive = key_padding_to_additive(key_padding_mask, x.dtype)
    h = x
    for p in layers:
        h = transformer_layer(h, p, config.num_heads, additive,
                              drop_rate=config.dropout, rng=rng)
    return h


def conv_position_embedding(x: Tensor, w: Parameter, b: Parameter,
                            groups: int) -> Tensor:
    """Grouped same-padding conv over the sequence followed by GELU."""
    return gelu(conv1d(x, w, b, stride=1, padding="same", groups=groups))


def encode_speech(x: Tensor, conv_pos: tuple, layers: list,
                  config: EncoderConfig, key_padding_mask=None,
                  rng=None) -> Tensor:
    w, b = conv_pos
    h = add(x, conv_position_embedding(x, w, b, config.conv_pos_groups))
    additive = key_padding_to_additive(key_padding_mask, x.dtype)
    for p in layers:
        h = transformer_layer(h, p, config.num_heads, additive,
                              drop_rate=config.dropout, rng=rng)
    return h


@dataclass
class FusedRepresentation:
    """Joint hidden states: text span [0, n_text), then CLS, prev frames,
    SEP, cur frames."""
    hidden: Tensor
    n_text: int
    m_prev: int
    m_cur: int
    attention: np.ndarray | None = None   # [num_heads, L, L] when captured

    @property
    def length(self) -> int:
        return self.n_text + self.m_prev + self.m_cur + 2

    @property
    def cls_speech_index(self) -> int:
        return self.n_text

    @property
    def sep_speech_index(self) -> int:
        return self.n_text + self.m_prev + 1

    def text_index(self, t: int) -> int:
        return t

    def prev_frame_index(self, j: int) -> int:
        return self.n_text + 1 + j

    def cur_frame_index(self, j: int) -> int:
        return self.n_text + self.m_prev + 2 + j


def fusion_input(h_text: Tensor, h_speech: Tensor,
                 modality_table: Parameter) -> Tensor:
    """Concatenate text then speech and add per-modality embeddings."""
    n = h_text.shape[0]
    m = h_speech.shape[0]
    ids = np.concatenate([np.zeros(n, np.int64), np.ones(m, np.int64)])
    joint = concat([h_text, h_speech], axis=0)
    return add(joint, embedding(modality_table, ids))


def fuse(h_text: Tensor, h_speech: Tensor, m_prev: int, m_cur: int,
         modality_table: Parameter, layer: TransformerLayerParams,
         config: EncoderConfig, key_padding_mask=None,
         include_ffn: bool = True, rng=None,
         capture_attention: bool = False) -> FusedRepresentation:
    n = h_text.shape[0]
    if h_speech.shape[0] != m_prev + m_cur + 2:
        raise ValueError(
            f"speech length {h_speech.shape[0]} != m_prev+m_cur+2 = "
            f"{m_prev + m_cur + 2}")
    x = fusion_input(h_text, h_speech, modality_table)
    additive = key_padding_to_additive(key_padding_mask, x.dtype)
    captured: list = []
    h = transformer_layer(x, layer, config.num_heads, additive,
                          include_ffn=include_ffn, drop_rate=config.dropout,
                          rng=rng,
                          capture=captured if capture_attention else None)
    return FusedRepresentation(
        hidden=h, n_text=n, m_prev=m_prev, m_cur=m_cur,
        attention=captured[0] if captured else None)


class AttentionNotCaptured(RuntimeError):
    pass


def cross_modal_mass(attention: np.ndarray, n_text: int) -> dict:
    """Average attention mass crossing modalities, from head-mean weights."""
    mean = attention.mean(axis=0)
    text_to_speech = float(mean[:n_text, n_text:].sum(axis=1).mean())
    speech_to_text = float(mean[n_text:, :n_text].sum(axis=1).mean())
    return {"text_to_speech": text_to_speech, "speech_to_text": speech_to_text}


def export_attention(fused: FusedRepresentation, out_prefix) -> dict:
    """Write fusion attention: one CSV per head, the head mean, and JSON
    metadata with modality spans and cross-modal mass."""
    if fused.attention is None:
        raise AttentionNotCaptured(
            "forward pass was not run with capture_attention=True")
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {}
    for h in range(fused.attention.shape[0]):
        path = out_prefix.with_name(out_prefix.name + f"_head{h}.csv")
        np.savetxt(path, fused.attention[h], delimiter=",")
        paths[f"head{h}"] = str(path)
    mean_path = out_prefix.with_name(out_prefix.name + "_mean.csv")
    np.savetxt(mean_path, fused.attention.mean(axis=0), delimiter=",")
    paths["mean"] = str(mean_path)
    meta = {
        "length": fused.length,
        "num_heads": int(fused.attention.shape[0]),
        "text_span": [0, fused.n_text],
        "cls_index": fused.cls_speech_index,
        "prev_frame_span": [fused.prev_frame_index(0),
                            fused.prev_frame_index(0) + fused.m_prev],
        "sep_index": fused.sep_speech_index,
        "cur_frame_span": [fused.cur_frame_index(0),
                           fused.cur_frame_index(0) + fused.m_cur],
        "cross_modal_mass": cross_modal_mass(fused.attention, fused.n_text),
    }
    meta_path = out_prefix.with_name(out_prefix.name + "_meta.json")
    meta_path.write_text(json.dumps(meta, indent=1))
    paths["meta"] = str(meta_path)
    return paths
