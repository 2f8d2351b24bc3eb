import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memexplain import synthetic, trainer
from memexplain.backbone import BackboneConfig
from memexplain.corpus import DatasetSplit
from memexplain.model import ModelConfig
from memexplain.neck import NeckConfig
from memexplain.segmenter import SegConfig
from memexplain.textgen import TextGenConfig
from memexplain.trainer import LossSchedule, TrainConfig


def toy_model_config(**overrides) -> ModelConfig:
    """Desk-scale model: small dims, 8x8 patch grid over 32x32 images."""
    cfg = dict(
        backbone=BackboneConfig(d_t=32, patch_grid=(8, 8), layer_count=3, seed=0),
        neck=NeckConfig(M=8, layers=2, heads=4),
        textgen=TextGenConfig(variant="A2", layers=2, heads=4, decoder_layers=2),
        seg=SegConfig(blocks=3, heads=4),
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


@pytest.fixture(scope="session")
def toy_samples():
    return synthetic.make_samples(n=10, seed=3)


@pytest.fixture(scope="session")
def train_all_split(toy_samples):
    return DatasetSplit(train=[s.id for s in toy_samples], val=[], test=[], seed=0)


def _timed_train(*args, **kwargs):
    start = time.perf_counter()
    result = trainer.train(*args, **kwargs)
    result.wall_time = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def multitask_run(toy_samples, train_all_split, tmp_path_factory):
    """500-step multitask overfit of the 10-sample toy corpus."""
    out = tmp_path_factory.mktemp("multitask_run")
    cfg = TrainConfig(mode="multitask", epochs=500, batch_size=32,
                      learning_rate=4e-3, seed=5)
    schedule = LossSchedule(ep=15, order=("generation_loss", "segmentation_loss"))
    return _timed_train(toy_samples, train_all_split, toy_model_config(), cfg,
                        schedule, out_dir=out)


@pytest.fixture(scope="session")
def single_text_run(toy_samples, train_all_split, tmp_path_factory):
    out = tmp_path_factory.mktemp("single_text_run")
    cfg = TrainConfig(mode="single_text", epochs=300, batch_size=32,
                      learning_rate=4e-3, seed=5)
    return _timed_train(toy_samples, train_all_split, toy_model_config(), cfg,
                        None, out_dir=out)


@pytest.fixture(scope="session")
def single_vision_run(toy_samples, train_all_split, tmp_path_factory):
    out = tmp_path_factory.mktemp("single_vision_run")
    cfg = TrainConfig(mode="single_vision", epochs=350, batch_size=32,
                      learning_rate=4e-3, seed=5)
    return _timed_train(toy_samples, train_all_split, toy_model_config(), cfg,
                        None, out_dir=out)
