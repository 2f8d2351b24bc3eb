"""Vision-informed seq2seq path for rationale generation.

Encoder layers stack three sublayers with post-norm residuals: multi-head
self-attention, a feed-forward network, and text-vision fusion that folds the
projected visual tokens into the textual states. Two fusion variants:

  A1 (dot product):  A = softmax(Z_t (Z_v W_1)^T) row-wise,
                     out = [Z_t ; A Z_v] W_2
  A2 (multi-head):   Q = Z_t W_q, K = Z_v W_k, V = Z_v W_v,
                     O = per-head scaled dot-product cross-attention,
                     out = [Z_t ; O] W_3

Both keep the textual shape (N, d_t) so layers stack. The decoder is a small
transformer with causal self-attention and cross-attention over the fused
encoder output; decoding is greedy with a hard length cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Vocab, sinusoidal_table
from .blocks import CrossAttention, FeedForward, SelfAttention, merge_heads, split_heads
from .errors import ConfigError

VARIANT_DOT = "A1"
VARIANT_MULTIHEAD = "A2"


@dataclass
class TextGenConfig:
    variant: str = VARIANT_MULTIHEAD
    layers: int = 2
    heads: int = 8
    decoder_layers: int = 2
    max_len: int = 64
    ff_mult: int = 4
    adapter: Optional[str] = None

    def __post_init__(self):
        if self.variant not in (VARIANT_DOT, VARIANT_MULTIHEAD):
            raise ConfigError(f"unknown fusion variant {self.variant!r}")
        if self.layers < 1 or self.decoder_layers < 1:
            raise ConfigError("layer counts must be >= 1")
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class GenerationOutput:
    token_ids: list
    text: str
    logits: torch.Tensor  # (steps, vocab), one row per emitted token


class TvfDot(nn.Module):
    """Dot-product text-vision fusion (variant A1).

    Scores use the projected visual rows; the attended values are the raw
    visual rows, so the output map takes d_t + d_v columns.
    """

    def __init__(self, d_t: int, d_v: Optional[int] = None):
        super().__init__()
        d_v = d_t if d_v is None else d_v
        self.w1 = nn.Linear(d_v, d_t, bias=False)
        self.w2 = nn.Linear(d_t + d_v, d_t, bias=False)

    def forward(self, z_t, z_v, return_attention=False):
        scores = z_t @ self.w1(z_v).transpose(0, 1)  # (N, M)
        attn = F.softmax(scores, dim=-1)
        out = self.w2(torch.cat([z_t, attn @ z_v], dim=-1))
        if return_attention:
            return out, attn
        return out


class TvfMultihead(nn.Module):
    """Multi-head cross-attention fusion (variant A2), scaling 1/sqrt(d_head)."""

    def __init__(self, d_t: int, heads: int, d_v: Optional[int] = None):
        super().__init__()
        if d_t % heads != 0:
            raise ConfigError(f"d_t {d_t} not divisible by heads {heads}")
        d_v = d_t if d_v is None else d_v
        self.heads = heads
        self.wq = nn.Linear(d_t, d_t, bias=False)
        self.wk = nn.Linear(d_v, d_t, bias=False)
        self.wv = nn.Linear(d_v, d_t, bias=False)
        self.w3 = nn.Linear(2 * d_t, d_t, bias=False)

    def forward(self, z_t, z_v, return_attention=False):
        q = split_heads(self.wq(z_t), self.heads)
        k = split_heads(self.wk(z_v), self.heads)
        v = split_heads(self.wv(z_v), self.heads)
        scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        attn = F.softmax(scores, dim=-1)  # (heads, N, M)
        o = merge_heads(attn @ v)
        out = self.w3(torch.cat([z_t, o], dim=-1))
        if return_attention:
            return out, attn
        return out


def make_tvf(variant: str, d_t: int, heads: int, d_v: Optional[int] = None):
    if variant == VARIANT_DOT:
        return TvfDot(d_t, d_v)
    if variant == VARIANT_MULTIHEAD:
        return TvfMultihead(d_t, heads, d_v)
    raise ConfigError(f"unknown fusion variant {variant!r}")


class VisionAwareEncoderLayer(nn.Module):
    """MSA -> FNN -> TVF, each with residual + layer norm; shape preserving."""

    def __init__(self, d_t: int, heads: int, variant: str, ff_mult: int = 4,
                 d_v: Optional[int] = None):
        super().__init__()
        self.msa = SelfAttention(d_t, heads)
        self.fnn = FeedForward(d_t, ff_mult * d_t)
        self.tvf = make_tvf(variant, d_t, heads, d_v)
        self.ln1 = nn.LayerNorm(d_t)
        self.ln2 = nn.LayerNorm(d_t)
        self.ln3 = nn.LayerNorm(d_t)

    def forward(self, z, p_v):
        z = self.ln1(z + self.msa(z))
        z = self.ln2(z + self.fnn(z))
        return self.ln3(z + self.tvf(z, p_v))


class DecoderLayer(nn.Module):
    def __init__(self, d_t: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.self_attn = SelfAttention(d_t, heads, causal=True)
        self.cross = CrossAttention(d_t, heads)
        self.fnn = FeedForward(d_t, ff_mult * d_t)
        self.ln1 = nn.LayerNorm(d_t)
        self.ln2 = nn.LayerNorm(d_t)
        self.ln3 = nn.LayerNorm(d_t)

    def forward(self, x, memory):
        x = self.ln1(x + self.self_attn(x))
        x = self.ln2(x + self.cross(x, memory))
        return self.ln3(x + self.fnn(x))


class TextGenerator(nn.Module):
    """Vision-aware encoder stack plus a small generative decoder."""

    def __init__(self, vocab: Vocab, d_t: int, config: TextGenConfig):
        super().__init__()
        self.vocab = vocab
        self.config = config
        self.enc_layers = nn.ModuleList(
            VisionAwareEncoderLayer(d_t, config.heads, config.variant, config.ff_mult)
            for _ in range(config.layers)
        )
        self.embed = nn.Embedding(len(vocab), d_t)
        self.dec_layers = nn.ModuleList(
            DecoderLayer(d_t, config.heads, config.ff_mult)
            for _ in range(config.decoder_layers)
        )
        self.head = nn.Linear(d_t, len(vocab))
        pos = sinusoidal_table(config.max_len + 1, d_t)
        self.register_buffer("dec_pos", pos, persistent=False)

    def encode(self, z0: torch.Tensor, p_v: torch.Tensor) -> torch.Tensor:
        z = z0
        for layer in self.enc_layers:
            z = layer(z, p_v)
        return z

    def decode_logits(self, memory: torch.Tensor, input_ids) -> torch.Tensor:
        ids = torch.as_tensor(input_ids, dtype=torch.long)
        x = self.embed(ids) + self.dec_pos[: ids.shape[0]]
        for layer in self.dec_layers:
            x = layer(x, memory)
        return self.head(x)

    @torch.no_grad()
    def generate(self, memory: torch.Tensor) -> GenerationOutput:
        """Greedy decoding until the end token or the max_len cap."""
        ids = [self.vocab.bos_id]
        rows = []
        for _ in range(self.config.max_len):
            step_logits = self.decode_logits(memory, ids)[-1]
            rows.append(step_logits)
            nxt = int(step_logits.argmax())
            ids.append(nxt)
            if nxt == self.vocab.eos_id:
                break
        token_ids = ids[1:]
        logits = torch.stack(rows) if rows else torch.zeros(0, len(self.vocab))
        text = " ".join(self.vocab.decode_ids(token_ids))
        return GenerationOutput(token_ids=token_ids, text=text, logits=logits)


def generation_loss(logits: torch.Tensor, target_ids) -> torch.Tensor:
    """Mean token-level cross-entropy; zero only at probability-1 targets."""
    targets = torch.as_tensor(target_ids, dtype=torch.long)
    if logits.shape[0] != targets.shape[0]:
        raise ValueError(
            f"logits rows {logits.shape[0]} != target length {targets.shape[0]}"
        )
    return F.cross_entropy(logits, targets, reduction="mean")
