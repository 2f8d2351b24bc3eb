"""Encoder substrate: global image/text embeddings, patch-level per-layer
hidden states and token embeddings with positional encodings.

The default "toy" backbone is pure and dependency-free: token embeddings come
from a seeded hash of the token string, patch features from seeded hashes of
patch mean colors, and the global 512-dim features from pooled hash
projections. It is deterministic across processes for a fixed config seed and
exercises every shape path at desk scale. Pretrained encoders plug in behind
the same interface via the adapter registry; the framework never assumes one
is installed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import ConfigError, DataError

CLIP_DIM = 512
JOINT_DIM = 2 * CLIP_DIM

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
ALIGN_SENTINEL = -1


@dataclass
class ClipFeatures:
    """Global visual and textual embeddings, both exactly 512-dim."""

    c_image: torch.Tensor
    c_text: torch.Tensor

    def __post_init__(self):
        for name, v in (("c_image", self.c_image), ("c_text", self.c_text)):
            if v.shape != (CLIP_DIM,):
                raise ValueError(f"{name} must have shape ({CLIP_DIM},), got {tuple(v.shape)}")
            if not torch.isfinite(v).all():
                raise ValueError(f"{name} contains non-finite values")


@dataclass
class BackboneConfig:
    kind: str = "toy"
    d_t: int = 64
    patch_grid: tuple = (4, 4)
    layer_count: int = 3
    seed: int = 0
    max_positions: int = 512
    vocab_file: Optional[str] = None

    def __post_init__(self):
        if self.d_t <= 0:
            raise ConfigError(f"d_t must be positive, got {self.d_t}")
        if self.layer_count < 1:
            raise ConfigError(f"layer_count must be >= 1, got {self.layer_count}")
        rows, cols = self.patch_grid
        if rows < 1 or cols < 1:
            raise ConfigError(f"patch_grid must be positive, got {self.patch_grid}")

    @property
    def num_patches(self) -> int:
        return self.patch_grid[0] * self.patch_grid[1]


class Vocab:
    """Word-level vocabulary with <pad>/<bos>/<eos>/<unk> specials."""

    def __init__(self, tokens):
        self.tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.unk_id = self.index[UNK]

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, samples) -> "Vocab":
        words = sorted({t for s in samples for t in s.tokens})
        return cls(words)

    @classmethod
    def from_file(cls, path) -> "Vocab":
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing vocabulary file: {path}")
        words = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
        return cls([w for w in words if w])

    def encode_words(self, words) -> list:
        return [self.index.get(w, self.unk_id) for w in words]

    def decode_ids(self, ids) -> list:
        """Token strings for ids, specials dropped."""
        out = []
        for i in ids:
            tok = self.tokens[int(i)]
            if tok not in SPECIALS:
                out.append(tok)
        return out


def sinusoidal_table(length: int, dim: int) -> torch.Tensor:
    """Classic sin/cos positional table, (length, dim) float64."""
    position = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-math.log(10000.0) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: dim // 2])
    return torch.from_numpy(table)


def _hash_rng(seed: int, salt: str, payload: bytes) -> np.random.Generator:
    digest = hashlib.blake2b(payload, digest_size=8, key=f"{salt}:{seed}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _hash_vector(seed: int, salt: str, payload: bytes, dim: int) -> np.ndarray:
    return _hash_rng(seed, salt, payload).standard_normal(dim)


def _patch_means(image: np.ndarray, grid) -> np.ndarray:
    """Mean RGB per patch, (rows*cols, 3); patches tile the image plane."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"image must be (3, H, W), got {img.shape}")
    rows, cols = grid
    _, h, w = img.shape
    if h < rows or w < cols:
        raise DataError(f"image {h}x{w} smaller than patch grid {grid}")
    means = np.empty((rows * cols, 3), dtype=np.float64)
    row_edges = np.linspace(0, h, rows + 1).astype(int)
    col_edges = np.linspace(0, w, cols + 1).astype(int)
    k = 0
    for r in range(rows):
        for c in range(cols):
            patch = img[:, row_edges[r] : row_edges[r + 1], col_edges[c] : col_edges[c + 1]]
            means[k] = patch.reshape(3, -1).mean(axis=1)
            k += 1
    return means


class ToyBackbone:
    """Deterministic hash-based encoder; pure, stateless across calls."""

    def __init__(self, config: BackboneConfig, vocab: Optional[Vocab] = None):
        self.config = config
        self.vocab = vocab
        self.d_t = config.d_t
        seed, d_t, L = config.seed, config.d_t, config.layer_count
        self._pos_text = sinusoidal_table(config.max_positions, d_t)
        self._pos_patch = sinusoidal_table(config.num_patches, d_t)
        # Frozen per-layer mixing maps, scaled to keep activations O(1).
        self._mix = [
            _hash_vector(seed, f"mix{k}", b"", d_t * d_t).reshape(d_t, d_t) / math.sqrt(d_t)
            for k in range(1, L)
        ]

    # -- global features ---------------------------------------------------

    def encode_global(self, image: np.ndarray, text: str) -> ClipFeatures:
        seed = self.config.seed
        words = text.split()
        text_vecs = [_hash_vector(seed, "gtext", w.encode(), CLIP_DIM) for w in words]
        text_vecs.append(_hash_vector(seed, "gtext", EOS.encode(), CLIP_DIM))
        c_text = np.mean(text_vecs, axis=0)
        means = _patch_means(image, self.config.patch_grid)
        img_vecs = [_hash_vector(seed, "gimage", m.tobytes(), CLIP_DIM) for m in means]
        c_image = np.mean(img_vecs, axis=0)
        return ClipFeatures(
            c_image=torch.from_numpy(c_image), c_text=torch.from_numpy(c_text)
        )

    # -- token path ---------------------------------------------------------

    def embed_tokens(self, text: str):
        """(embeddings (N, d_t), alignment) where alignment[i] is the word
        index of subword i, or the sentinel -1 for special positions.
        """
        seed, d_t = self.config.seed, self.d_t
        words = text.split()
        vecs = [_hash_vector(seed, "token", w.encode(), d_t) for w in words]
        vecs.append(_hash_vector(seed, "token", EOS.encode(), d_t))
        alignment = list(range(len(words))) + [ALIGN_SENTINEL]
        return torch.from_numpy(np.stack(vecs)), alignment

    def add_positional(self, seq: torch.Tensor) -> torch.Tensor:
        if seq.ndim != 2 or seq.shape[1] != self.d_t:
            raise ValueError(f"expected (N, {self.d_t}) sequence, got {tuple(seq.shape)}")
        if seq.shape[0] > self._pos_text.shape[0]:
            raise ValueError(
                f"sequence length {seq.shape[0]} exceeds positional capacity "
                f"{self._pos_text.shape[0]}"
            )
        return seq + self._pos_text[: seq.shape[0]]

    # -- patch path ----------------------------------------------------------

    def encode_patches(self, image: np.ndarray) -> list:
        """L per-layer hidden states, each (P, d_t). Layer 1 is patch-local
        (hash features plus positional embedding); deeper layers mix patches
        through frozen maps.
        """
        seed = self.config.seed
        means = _patch_means(image, self.config.patch_grid)
        base = np.stack([_hash_vector(seed, "patch", m.tobytes(), self.d_t) for m in means])
        state = torch.from_numpy(base) + self._pos_patch
        layers = [state]
        for mix in self._mix:
            w = torch.from_numpy(mix)
            blended = 0.5 * state + 0.5 * state.mean(dim=0, keepdim=True)
            state = torch.tanh(blended @ w)
            layers.append(state)
        return layers


# -- adapter boundary --------------------------------------------------------

_ADAPTERS = {}


def register_adapter(kind: str, factory):
    """Register a pretrained-encoder adapter factory: (config, vocab) -> backbone."""
    _ADAPTERS[kind] = factory


def build_backbone(config: BackboneConfig, vocab: Optional[Vocab] = None):
    if config.kind == "toy":
        return ToyBackbone(config, vocab)
    if config.kind in _ADAPTERS:
        return _ADAPTERS[config.kind](config, vocab)
    raise ConfigError(
        f"backbone adapter {config.kind!r} unavailable; registered: "
        f"{['toy'] + sorted(_ADAPTERS)}"
    )
