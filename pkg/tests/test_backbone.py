import numpy as np
import pytest
import torch

from memexplain.backbone import (
    ALIGN_SENTINEL,
    CLIP_DIM,
    BackboneConfig,
    ToyBackbone,
    Vocab,
    build_backbone,
    register_adapter,
    sinusoidal_table,
)
from memexplain.errors import ConfigError


@pytest.fixture()
def backbone():
    return ToyBackbone(BackboneConfig(d_t=16, patch_grid=(4, 4), layer_count=3, seed=0))


def random_image(rng, h=32, w=32):
    return rng.random((3, h, w))


# -- global features -----------------------------------------------------------


def test_encode_global_dims(backbone):
    rng = np.random.default_rng(0)
    feats = backbone.encode_global(random_image(rng), "kya scene hai")
    assert feats.c_image.shape == (CLIP_DIM,)
    assert feats.c_text.shape == (CLIP_DIM,)


def test_encode_global_deterministic(backbone):
    rng = np.random.default_rng(1)
    image = random_image(rng)
    a = backbone.encode_global(image, "pagal hai")
    b = backbone.encode_global(image.copy(), "pagal hai")
    assert torch.equal(a.c_image, b.c_image)
    assert torch.equal(a.c_text, b.c_text)


def test_encode_global_token_sensitivity(backbone):
    rng = np.random.default_rng(2)
    image = random_image(rng)
    a = backbone.encode_global(image, "tu pagal hai")
    b = backbone.encode_global(image, "tu bhai hai")
    assert not torch.equal(a.c_text, b.c_text)
    assert torch.equal(a.c_image, b.c_image)


def test_encode_global_empty_text(backbone):
    rng = np.random.default_rng(3)
    feats = backbone.encode_global(random_image(rng), "")
    assert torch.isfinite(feats.c_text).all()


def test_purity_across_instances():
    cfg = BackboneConfig(d_t=16, patch_grid=(2, 2), layer_count=2, seed=42)
    rng = np.random.default_rng(4)
    image = random_image(rng, 8, 8)
    a = ToyBackbone(cfg).encode_global(image, "x y")
    b = ToyBackbone(cfg).encode_global(image, "x y")
    assert torch.equal(a.c_image, b.c_image) and torch.equal(a.c_text, b.c_text)


# -- token path ---------------------------------------------------------------------


def test_embed_tokens_empty_text(backbone):
    seq, alignment = backbone.embed_tokens("")
    assert seq.shape == (1, 16)  # only the end special
    assert alignment == [ALIGN_SENTINEL]


def test_embed_tokens_two_words(backbone):
    seq, alignment = backbone.embed_tokens("pagal hai")
    assert seq.shape == (3, 16)  # two words plus the end special
    assert alignment == [0, 1, ALIGN_SENTINEL]


def test_embed_tokens_alignment_range(backbone):
    for text in ("a", "a b c", "one two three four five"):
        _, alignment = backbone.embed_tokens(text)
        n_words = len(text.split())
        assert all(a == ALIGN_SENTINEL or 0 <= a < n_words for a in alignment)
        assert len(alignment) == n_words + 1


def test_add_positional_zero_input(backbone):
    zeros = torch.zeros(5, 16, dtype=torch.float64)
    out = backbone.add_positional(zeros)
    torch.testing.assert_close(out, sinusoidal_table(512, 16)[:5])


def test_add_positional_shape_and_idempotence(backbone):
    seq = torch.randn(4, 16, dtype=torch.float64)
    out = backbone.add_positional(seq)
    assert out.shape == (4, 16)
    assert not torch.equal(backbone.add_positional(out), out)


def test_add_positional_capacity_error():
    bb = ToyBackbone(BackboneConfig(d_t=8, patch_grid=(2, 2), layer_count=1,
                                    seed=0, max_positions=4))
    with pytest.raises(ValueError, match="capacity"):
        bb.add_positional(torch.zeros(5, 8, dtype=torch.float64))


# -- patch path -------------------------------------------------------------------


def test_encode_patches_shapes(backbone):
    rng = np.random.default_rng(5)
    stack = backbone.encode_patches(random_image(rng))
    assert len(stack) == 3
    for layer in stack:
        assert layer.shape == (16, 16)
    shapes = {tuple(layer.shape) for layer in stack}
    assert len(shapes) == 1  # identical across layers


def test_encode_patches_deterministic(backbone):
    rng = np.random.default_rng(6)
    image = random_image(rng)
    a = backbone.encode_patches(image)
    b = backbone.encode_patches(image.copy())
    for la, lb in zip(a, b):
        assert torch.equal(la, lb)


def test_encode_patches_layer1_locality(backbone):
    rng = np.random.default_rng(7)
    image = random_image(rng)
    other = image.copy()
    other[:, :8, :8] = 1.0 - other[:, :8, :8]  # perturb exactly patch (0, 0)
    a = backbone.encode_patches(image)
    b = backbone.encode_patches(other)
    diff_rows = (a[0] != b[0]).any(dim=1)
    assert diff_rows[0]
    assert not diff_rows[1:].any()
    # deeper layers mix patches, so the change spreads
    assert ((a[-1] != b[-1]).any(dim=1)).sum() > 1


def test_encode_patches_finite_everywhere(backbone):
    rng = np.random.default_rng(8)
    for _ in range(10):
        stack = backbone.encode_patches(random_image(rng))
        assert all(torch.isfinite(layer).all() for layer in stack)


def test_image_smaller_than_grid_rejected(backbone):
    from memexplain.errors import DataError

    with pytest.raises(DataError):
        backbone.encode_patches(np.zeros((3, 2, 2)))


# -- vocabulary and adapters ---------------------------------------------------------


def test_vocab_roundtrip():
    v = Vocab(["hai", "pagal"])
    ids = v.encode_words(["pagal", "hai", "zzz"])
    assert ids[-1] == v.unk_id
    assert v.decode_ids(ids[:2]) == ["pagal", "hai"]
    assert v.decode_ids([v.bos_id, ids[0], v.eos_id]) == ["pagal"]


def test_vocab_from_file(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("alpha\nbeta\n\n")
    v = Vocab.from_file(path)
    assert "alpha" in v.index and "beta" in v.index


def test_build_backbone_unknown_adapter():
    with pytest.raises(ConfigError, match="unavailable"):
        build_backbone(BackboneConfig(kind="clip-vit"), None)


def test_adapter_registry():
    marker = object()
    register_adapter("test-adapter", lambda cfg, vocab: marker)
    try:
        assert build_backbone(BackboneConfig(kind="test-adapter"), None) is marker
    finally:
        from memexplain import backbone as bb_mod

        bb_mod._ADAPTERS.pop("test-adapter", None)


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(d_t=0)
    with pytest.raises(ConfigError):
        BackboneConfig(layer_count=0)
    with pytest.raises(ConfigError):
        BackboneConfig(patch_grid=(0, 4))
