import pytest
import torch

from memexplain.backbone import BackboneConfig, Vocab
from memexplain.errors import ConfigError
from memexplain.model import FeatureCache, MemeExplainer, build_model
from memexplain.segmenter import SegConfig
from memexplain.synthetic import make_samples

from conftest import toy_model_config


@pytest.fixture(scope="module")
def vocab():
    return Vocab.build(make_samples(n=4, seed=0))


def test_multitask_has_gates_and_both_heads(vocab):
    model = build_model(toy_model_config(), "multitask", vocab, seed=0)
    keys = model.state_dict().keys()
    assert any("gvp.gate" in k for k in keys)
    assert any("gtp.gate" in k for k in keys)
    assert any(k.startswith("textgen.") for k in keys)
    assert any(k.startswith("segdec.") for k in keys)


def test_single_text_omits_gates_and_segmenter(vocab):
    model = build_model(toy_model_config(), "single_text", vocab, seed=0)
    keys = model.state_dict().keys()
    assert not any(".gate." in k for k in keys)
    assert not any(k.startswith("segdec.") or k.startswith("gtp.") for k in keys)
    assert any(k.startswith("textgen.") for k in keys)


def test_single_vision_omits_gates_and_textgen(vocab):
    model = build_model(toy_model_config(), "single_vision", None, seed=0)
    keys = model.state_dict().keys()
    assert not any(".gate." in k for k in keys)
    assert not any(k.startswith("textgen.") or k.startswith("gvp.") for k in keys)
    assert any(k.startswith("segdec.") for k in keys)
    assert any(k.startswith("gtp.") for k in keys)  # ungated textual projection


def test_single_vision_without_modulation_has_no_text_path():
    cfg = toy_model_config(seg=SegConfig(blocks=3, heads=4, modulation=False))
    model = build_model(cfg, "single_vision", None, seed=0)
    keys = model.state_dict().keys()
    assert not any(k.startswith("gtp.") for k in keys)


def test_unknown_mode_rejected(vocab):
    with pytest.raises(ConfigError):
        MemeExplainer(toy_model_config(), "both", vocab)


def test_unavailable_text_adapter_rejected(vocab):
    from memexplain.textgen import TextGenConfig

    cfg = toy_model_config(textgen=TextGenConfig(variant="A2", layers=2, heads=4,
                                                 decoder_layers=2, adapter="bart-base"))
    with pytest.raises(ConfigError, match="adapter"):
        MemeExplainer(cfg, "multitask", vocab)


def test_text_mode_requires_vocab():
    with pytest.raises(ConfigError):
        MemeExplainer(toy_model_config(), "single_text", None)


def test_block_count_must_match_backbone():
    with pytest.raises(ConfigError):
        toy_model_config(backbone=BackboneConfig(d_t=32, patch_grid=(8, 8),
                                                 layer_count=2, seed=0))


def test_head_parameter_groups(vocab):
    model = build_model(toy_model_config(), "multitask", vocab, seed=0)
    text_params = {id(p) for p in model.head_parameters("text")}
    seg_params = {id(p) for p in model.head_parameters("seg")}
    assert text_params and seg_params
    assert not text_params & seg_params
    total = {id(p) for p in model.parameters()}
    assert text_params | seg_params == total


def test_build_model_is_deterministic(vocab):
    samples = make_samples(n=2, seed=1)
    cfg = toy_model_config()
    a = build_model(cfg, "multitask", vocab, seed=7)
    b = build_model(cfg, "multitask", vocab, seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert torch.equal(pa, pb)
    cache = FeatureCache(cfg, vocab)
    feats = cache.get(samples[0])
    torch.testing.assert_close(a.mask_logits(feats), b.mask_logits(feats))


def test_feature_cache_reuses_entries(vocab):
    cfg = toy_model_config()
    cache = FeatureCache(cfg, vocab)
    sample = make_samples(n=1, seed=2)[0]
    assert cache.get(sample) is cache.get(sample)
    feats = cache.get(sample)
    assert feats.z0.shape[1] == cfg.backbone.d_t
    assert len(feats.layer_stack) == cfg.backbone.layer_count
    assert feats.hw == (32, 32)
    assert feats.target_ids[-1] == vocab.eos_id
