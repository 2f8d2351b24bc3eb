"""Shared cross-modal neck.

The global image and text features are concatenated into one joint vector.
A visual gate rescales the image feature before a small transformer projects
it, together with learnable query tokens, into the text encoder's space
(gated visual projection). A textual gate rescales the text slice of the
joint vector before a feed-forward network maps it into the segmentation
decoder's space (gated textual projection). Single-task mode drops the gates
entirely and projects the raw features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import CLIP_DIM, JOINT_DIM, ClipFeatures
from .blocks import TransformerBlock
from .errors import ConfigError


@dataclass
class NeckConfig:
    M: int = 16
    layers: int = 2
    heads: int = 8
    gate: bool = True
    ff_mult: int = 4

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError(f"M must be >= 1, got {self.M}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")


def joint_features(clip: ClipFeatures) -> torch.Tensor:
    """[c_image ; c_text] as one 1024-dim vector."""
    return torch.cat([clip.c_image, clip.c_text])


class ModalityGate(nn.Module):
    """sigmoid(W [c_image; c_text] + b): a per-dimension gate in (0, 1)^gated_dim
    that calibrates one modality's contribution from the joint vector.
    """

    def __init__(self, in_dim: int = JOINT_DIM, gated_dim: int = CLIP_DIM):
        super().__init__()
        self.linear = nn.Linear(in_dim, gated_dim)

    def forward(self, joint: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.linear(joint))


class GatedVisualProjection(nn.Module):
    """Project the (gated) visual feature into the text space as M tokens.

    The gated image feature becomes a single memory token; M learnable query
    tokens are concatenated with it and run through a small transformer with
    global attention. Only the query rows are emitted, shape (M, d_t).
    """

    def __init__(self, d_t: int, M: int = 16, layers: int = 2, heads: int = 8,
                 gated: bool = True, ff_mult: int = 4):
        super().__init__()
        self.gate = ModalityGate() if gated else None
        self.input_proj = nn.Linear(CLIP_DIM, d_t)
        self.rw = nn.Parameter(torch.zeros(M, d_t))
        self.blocks = nn.ModuleList(
            TransformerBlock(d_t, heads, ff_mult) for _ in range(layers)
        )

    def forward(self, clip: ClipFeatures) -> torch.Tensor:
        visual = clip.c_image
        if self.gate is not None:
            visual = self.gate(joint_features(clip)) * visual
        x = torch.cat([self.input_proj(visual).unsqueeze(0), self.rw], dim=0)
        for block in self.blocks:
            x = block(x)
        return x[1:]


class GatedTextualProjection(nn.Module):
    """Map the joint vector, with its textual slice gated, into the
    segmentation decoder's space: FFN(1024 -> d_t -> d_t).
    """

    def __init__(self, d_t: int, gated: bool = True):
        super().__init__()
        self.gate = ModalityGate() if gated else None
        self.fc1 = nn.Linear(JOINT_DIM, d_t)
        self.fc2 = nn.Linear(d_t, d_t)

    def forward(self, clip: ClipFeatures) -> torch.Tensor:
        text = clip.c_text
        if self.gate is not None:
            text = self.gate(joint_features(clip)) * text
        joint = torch.cat([clip.c_image, text])
        return self.fc2(F.gelu(self.fc1(joint)))
