"""Shared transformer building blocks (float64, single-sequence layout).

All blocks operate on (seq_len, dim) tensors; batching at desk scale loops
over samples. GELU everywhere: the gradient suite needs a smooth activation.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def attention(q, k, v, causal=False):
    """Scaled dot-product attention over (heads, n, d_head) tensors."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if causal:
        n, m = scores.shape[-2], scores.shape[-1]
        mask = torch.triu(torch.ones(n, m, dtype=torch.bool), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
    return F.softmax(scores, dim=-1) @ v


def split_heads(x, heads):
    n, d = x.shape
    return x.view(n, heads, d // heads).transpose(0, 1)


def merge_heads(x):
    h, n, d = x.shape
    return x.transpose(0, 1).reshape(n, h * d)


class SelfAttention(nn.Module):
    def __init__(self, dim, heads, causal=False):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.causal = causal
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        o = attention(
            split_heads(q, self.heads),
            split_heads(k, self.heads),
            split_heads(v, self.heads),
            causal=self.causal,
        )
        return self.out(merge_heads(o))


class CrossAttention(nn.Module):
    def __init__(self, dim, heads, memory_dim=None):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        memory_dim = dim if memory_dim is None else memory_dim
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(memory_dim, dim)
        self.v = nn.Linear(memory_dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x, memory):
        o = attention(
            split_heads(self.q(x), self.heads),
            split_heads(self.k(memory), self.heads),
            split_heads(self.v(memory), self.heads),
        )
        return self.out(merge_heads(o))


class FeedForward(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Post-norm self-attention block: LN(x + MSA(x)), LN(x + FNN(x))."""

    def __init__(self, dim, heads, ff_mult=4):
        super().__init__()
        self.msa = SelfAttention(dim, heads)
        self.fnn = FeedForward(dim, ff_mult * dim)
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)

    def forward(self, x):
        x = self.ln1(x + self.msa(x))
        return self.ln2(x + self.fnn(x))


def init_parameters(module: nn.Module, generator: torch.Generator, std: float = 0.02):
    """Deterministic init from an explicit generator: weight matrices and
    free 2-d parameters ~ N(0, std^2), norm gains 1, biases 0.
    """
    for name, p in module.named_parameters():
        with torch.no_grad():
            if p.ndim >= 2:
                p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.fill_(1.0)  # layer-norm gain
