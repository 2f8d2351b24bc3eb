"""Linguistically sensitive visual segmentation path.

Per-layer hidden states captured from the visual backbone flow through
projected skip connections into a transformer decoder, mirrored UNet-style
(deepest encoder layer feeds the first decoder block). Before each block the
running decoder state is modulated elementwise by sigmoid of the projected
textual vector, then the projected skip is added. A per-patch logit head and
bilinear upsampling produce full-resolution mask logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import TransformerBlock
from .errors import ConfigError


@dataclass
class SegConfig:
    threshold: float = 0.5
    blocks: int = 3
    heads: int = 8
    modulation: bool = True
    ff_mult: int = 4

    def __post_init__(self):
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")


class SegmentationDecoder(nn.Module):
    """Transformer decoder over patch tokens with per-layer encoder skips.

    Block count must equal the backbone layer count; block k consumes the
    modulated previous state plus the projected skip from encoder layer
    L - k + 1. The first block's "previous state" is a learned query sequence.
    """

    def __init__(self, d_t: int, patch_grid, blocks: int, heads: int = 8,
                 modulation: bool = True, ff_mult: int = 4):
        super().__init__()
        rows, cols = patch_grid
        self.patch_grid = (rows, cols)
        self.modulation = modulation
        self.queries = nn.Parameter(torch.zeros(rows * cols, d_t))
        self.skip_projs = nn.ModuleList(nn.Linear(d_t, d_t) for _ in range(blocks))
        self.blocks = nn.ModuleList(
            TransformerBlock(d_t, heads, ff_mult) for _ in range(blocks)
        )
        self.head = nn.Linear(d_t, 1)

    def forward(self, layer_stack: Sequence[torch.Tensor], p_t: Optional[torch.Tensor],
                out_hw) -> torch.Tensor:
        """Mask logits at exactly out_hw = (H, W)."""
        if len(layer_stack) != len(self.blocks):
            raise ConfigError(
                f"decoder has {len(self.blocks)} blocks but the backbone "
                f"produced {len(layer_stack)} layers"
            )
        if self.modulation and p_t is None:
            raise ConfigError("modulation enabled but no textual vector supplied")
        mod = torch.sigmoid(p_t) if self.modulation else None
        depth = len(layer_stack)
        x = self.queries
        for k, (proj, block) in enumerate(zip(self.skip_projs, self.blocks)):
            if mod is not None:
                x = x * mod
            x = x + proj(layer_stack[depth - 1 - k])
            x = block(x)
        patch_logits = self.head(x).squeeze(-1)
        grid = patch_logits.view(1, 1, *self.patch_grid)
        up = F.interpolate(grid, size=tuple(out_hw), mode="bilinear", align_corners=False)
        return up[0, 0]


def binarize(logits: torch.Tensor, threshold: float = 0.5) -> np.ndarray:
    """Pixel = 1 iff sigmoid(logit) > threshold; uint8 (H, W) in {0, 1}."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    with torch.no_grad():
        probs = torch.sigmoid(logits)
        return (probs > threshold).to(torch.uint8).cpu().numpy()


def segmentation_loss(logits: torch.Tensor, target_mask) -> torch.Tensor:
    """Mean per-pixel binary cross-entropy on sigmoid probabilities."""
    target = torch.as_tensor(np.asarray(target_mask), dtype=logits.dtype)
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)} vs target {tuple(target.shape)}")
    return F.binary_cross_entropy_with_logits(logits, target, reduction="mean")
