"""Assembled shared-private model: frozen backbone features, shared
cross-modal neck, private text-generation and segmentation heads.

Mode wiring:
  multitask     gated GVP + text head, gated GTP + segmentation head
  single_text   ungated GVP + text head only (no gate parameters)
  single_vision segmentation head only; ungated GTP when modulation is on

The backbone is not a submodule: its features are frozen and it is rebuilt
from config, so checkpoints carry only trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn as nn

from .backbone import BackboneConfig, ClipFeatures, Vocab, build_backbone
from .blocks import init_parameters
from .corpus import MemeSample, rationale_target
from .errors import ConfigError
from .neck import GatedTextualProjection, GatedVisualProjection, NeckConfig
from .segmenter import SegConfig, SegmentationDecoder
from .textgen import GenerationOutput, TextGenConfig, TextGenerator

MODE_SINGLE_TEXT = "single_text"
MODE_SINGLE_VISION = "single_vision"
MODE_MULTITASK = "multitask"
MODES = (MODE_SINGLE_TEXT, MODE_SINGLE_VISION, MODE_MULTITASK)


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    neck: NeckConfig = field(default_factory=NeckConfig)
    textgen: TextGenConfig = field(default_factory=TextGenConfig)
    seg: SegConfig = field(default_factory=SegConfig)

    def __post_init__(self):
        if self.seg.blocks != self.backbone.layer_count:
            raise ConfigError(
                f"seg.blocks ({self.seg.blocks}) must equal backbone layer_count "
                f"({self.backbone.layer_count})"
            )


@dataclass
class SampleFeatures:
    """Frozen per-sample backbone outputs plus cached target ids."""

    clip: ClipFeatures
    z0: torch.Tensor                 # token embeddings + positional, (N, d_t)
    layer_stack: list                # L tensors, each (P, d_t)
    hw: tuple                        # (H, W) of the native image
    target_ids: Optional[list]      # rationale token ids + eos, teacher-forcing targets


class MemeExplainer(nn.Module):
    def __init__(self, config: ModelConfig, mode: str, vocab: Optional[Vocab] = None):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.config = config
        self.mode = mode
        gated = mode == MODE_MULTITASK
        d_t = config.backbone.d_t

        self.gvp = None
        self.textgen = None
        if mode != MODE_SINGLE_VISION:
            if vocab is None:
                raise ConfigError(f"mode {mode!r} needs a vocabulary")
            if config.textgen.adapter not in (None, "none"):
                raise ConfigError(
                    f"text adapter {config.textgen.adapter!r} unavailable; "
                    "only the built-in toy decoder ships with this package"
                )
            self.gvp = GatedVisualProjection(
                d_t, M=config.neck.M, layers=config.neck.layers,
                heads=config.neck.heads, gated=gated and config.neck.gate,
                ff_mult=config.neck.ff_mult,
            )
            self.textgen = TextGenerator(vocab, d_t, config.textgen)

        self.gtp = None
        self.segdec = None
        if mode != MODE_SINGLE_TEXT:
            if config.seg.modulation:
                self.gtp = GatedTextualProjection(d_t, gated=gated and config.neck.gate)
            self.segdec = SegmentationDecoder(
                d_t, config.backbone.patch_grid, blocks=config.seg.blocks,
                heads=config.seg.heads, modulation=config.seg.modulation,
                ff_mult=config.seg.ff_mult,
            )
        self.vocab = vocab

    # -- per-task forwards ---------------------------------------------------

    def text_logits(self, feats: SampleFeatures, input_ids) -> torch.Tensor:
        memory = self.textgen.encode(feats.z0, self.gvp(feats.clip))
        return self.textgen.decode_logits(memory, input_ids)

    def generate(self, feats: SampleFeatures) -> GenerationOutput:
        memory = self.textgen.encode(feats.z0, self.gvp(feats.clip))
        return self.textgen.generate(memory)

    def mask_logits(self, feats: SampleFeatures) -> torch.Tensor:
        p_t = self.gtp(feats.clip) if self.gtp is not None else None
        return self.segdec(feats.layer_stack, p_t, feats.hw)

    def head_parameters(self, which: str):
        """Named parameters of one task path ('text' or 'seg'), neck included."""
        groups = {"text": (self.gvp, self.textgen), "seg": (self.gtp, self.segdec)}
        for module in groups[which]:
            if module is not None:
                yield from module.parameters()


def build_model(config: ModelConfig, mode: str, vocab: Optional[Vocab], seed: int) -> MemeExplainer:
    """Construct in float64 with deterministic seeded initialization."""
    model = MemeExplainer(config, mode, vocab)
    model.to(torch.float64)
    gen = torch.Generator().manual_seed(seed)
    init_parameters(model, gen)
    return model


class FeatureCache:
    """Compute-once store of frozen backbone features keyed by sample id."""

    def __init__(self, config: ModelConfig, vocab: Optional[Vocab]):
        self.backbone = build_backbone(config.backbone, vocab)
        self.vocab = vocab
        self._store = {}

    def get(self, sample: MemeSample) -> SampleFeatures:
        feats = self._store.get(sample.id)
        if feats is None:
            feats = self._encode(sample)
            self._store[sample.id] = feats
        return feats

    def _encode(self, sample: MemeSample) -> SampleFeatures:
        bb = self.backbone
        clip = bb.encode_global(sample.image, sample.text)
        seq, _ = bb.embed_tokens(sample.text)
        z0 = bb.add_positional(seq)
        stack = bb.encode_patches(sample.image)
        target_ids = None
        if self.vocab is not None:
            words = rationale_target(sample).split()
            target_ids = self.vocab.encode_words(words) + [self.vocab.eos_id]
        return SampleFeatures(
            clip=clip, z0=z0, layer_stack=stack,
            hw=(sample.image.shape[1], sample.image.shape[2]),
            target_ids=target_ids,
        )
