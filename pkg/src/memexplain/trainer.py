"""Training orchestration: sequential loss prioritization, deterministic
single-task / multitask loops, checkpointing and split evaluation.

The schedule activates one loss from epoch 0 and adds the second at epoch ep;
once active, a loss stays active and the two are summed unweighted. Batch
order is a pure function of (seed, epoch), so resuming from a checkpoint
continues exactly the run that produced it.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .backbone import SPECIALS, BackboneConfig, Vocab
from .corpus import DatasetSplit, rationale_target
from .errors import CheckpointError, ConfigError, DataError
from .metrics import SamplePrediction, score_corpus
from .model import (
    MODE_MULTITASK,
    MODE_SINGLE_TEXT,
    MODE_SINGLE_VISION,
    MODES,
    FeatureCache,
    MemeExplainer,
    ModelConfig,
    build_model,
)
from .neck import NeckConfig
from .segmenter import SegConfig, binarize, segmentation_loss
from .textgen import TextGenConfig, generation_loss

LOSS_GENERATION = "generation_loss"
LOSS_SEGMENTATION = "segmentation_loss"
LOSS_NAMES = (LOSS_GENERATION, LOSS_SEGMENTATION)

CHECKPOINT_VERSION = 1


@dataclass
class LossSchedule:
    """Activation order and periodicity of the sequential loss combination.

    ep values explored in practice are 15, 20 and 25; any positive
    periodicity is accepted for desk-scale runs.
    """

    ep: int = 15
    order: tuple = (LOSS_GENERATION, LOSS_SEGMENTATION)

    def __post_init__(self):
        self.order = tuple(self.order)
        if self.ep <= 0:
            raise ConfigError(f"schedule periodicity must be positive, got {self.ep}")
        if len(self.order) != 2 or len(set(self.order)) != 2:
            raise ConfigError(f"schedule order must name two distinct losses, got {self.order}")
        for name in self.order:
            if name not in LOSS_NAMES:
                raise ConfigError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


@dataclass
class TrainConfig:
    mode: str = MODE_MULTITASK
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 5e-5
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochStats:
    epoch: int
    objective: float
    loss_generation: Optional[float]
    loss_segmentation: Optional[float]
    grad_max_text: float
    grad_max_seg: float


@dataclass
class TrainResult:
    model: MemeExplainer
    cache: FeatureCache
    vocab: Optional[Vocab]
    history: list
    state: dict
    checkpoint_path: Optional[Path] = None


def active_losses(epoch: int, schedule: LossSchedule) -> set:
    """Losses active at a given epoch: the first alone before ep, both after."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch < schedule.ep:
        return {schedule.order[0]}
    return set(schedule.order)


def _validate_mode_schedule(mode: str, schedule: Optional[LossSchedule]):
    if mode == MODE_MULTITASK:
        if schedule is None:
            raise ConfigError("multitask training requires a loss schedule")
        return
    if schedule is None:
        return
    forbidden = LOSS_SEGMENTATION if mode == MODE_SINGLE_TEXT else LOSS_GENERATION
    if forbidden in schedule.order:
        raise ConfigError(f"mode {mode!r} cannot schedule {forbidden}")


def config_snapshot(model_cfg: ModelConfig, train_cfg: TrainConfig,
                    schedule: Optional[LossSchedule]) -> dict:
    return {
        "model": asdict(model_cfg),
        "train": asdict(train_cfg),
        "schedule": asdict(schedule) if schedule is not None else None,
    }


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig,
                schedule: Optional[LossSchedule]) -> str:
    """Run-identity hash: everything except the epoch budget, which a resumed
    run is allowed to extend."""
    snapshot = config_snapshot(model_cfg, train_cfg, schedule)
    snapshot["train"] = {k: v for k, v in snapshot["train"].items() if k != "epochs"}
    payload = json.dumps(snapshot, sort_keys=True, default=list)
    return hashlib.sha256(payload.encode()).hexdigest()


def model_config_from_dict(d: dict) -> ModelConfig:
    bb = dict(d["backbone"])
    bb["patch_grid"] = tuple(bb["patch_grid"])
    tg = dict(d["textgen"])
    return ModelConfig(
        backbone=BackboneConfig(**bb),
        neck=NeckConfig(**d["neck"]),
        textgen=TextGenConfig(**tg),
        seg=SegConfig(**d["seg"]),
    )


def schedule_from_dict(d: Optional[dict]) -> Optional[LossSchedule]:
    if d is None:
        return None
    return LossSchedule(ep=d["ep"], order=tuple(d["order"]))


def _teacher_inputs(vocab: Vocab, target_ids: list) -> list:
    return [vocab.bos_id] + list(target_ids[:-1])


def _grad_max(params) -> float:
    worst = 0.0
    for p in params:
        if p.grad is not None:
            worst = max(worst, float(p.grad.abs().max()))
    return worst


def train(samples, split: DatasetSplit, model_cfg: ModelConfig, train_cfg: TrainConfig,
          schedule: Optional[LossSchedule] = None, out_dir=None,
          resume_from=None) -> TrainResult:
    """Run (or resume) a training job and return the final checkpoint state."""
    _validate_mode_schedule(train_cfg.mode, schedule)
    by_id = {s.id: s for s in samples}
    train_ids = [i for i in split.train if i in by_id]
    if not train_ids:
        raise DataError("empty train split")

    expected_hash = config_hash(model_cfg, train_cfg, schedule)
    resume_state = None
    if resume_from is not None:
        resume_state = load_checkpoint(resume_from)
        if resume_state["config_hash"] != expected_hash:
            raise CheckpointError(
                "checkpoint config hash does not match the requested configuration"
            )

    needs_text = train_cfg.mode != MODE_SINGLE_VISION
    if resume_state is not None:
        vocab = Vocab(resume_state["vocab"]) if resume_state["vocab"] is not None else None
    elif not needs_text:
        vocab = None
    elif model_cfg.backbone.vocab_file:
        vocab = Vocab.from_file(model_cfg.backbone.vocab_file)
    else:
        vocab = Vocab.build([by_id[i] for i in train_ids])

    model = build_model(model_cfg, train_cfg.mode, vocab, train_cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=train_cfg.learning_rate, eps=train_cfg.adam_epsilon
    )
    start_epoch = 0
    history = []
    if resume_state is not None:
        model.load_state_dict(resume_state["model_state"])
        optimizer.load_state_dict(resume_state["optimizer_state"])
        start_epoch = resume_state["epoch"]
        history = [EpochStats(**row) for row in resume_state["history"]]

    cache = FeatureCache(model_cfg, vocab)

    for epoch in range(start_epoch, train_cfg.epochs):
        if train_cfg.mode == MODE_MULTITASK:
            active = active_losses(epoch, schedule)
        elif train_cfg.mode == MODE_SINGLE_TEXT:
            active = {LOSS_GENERATION}
        else:
            active = {LOSS_SEGMENTATION}

        rng = np.random.default_rng((train_cfg.seed, epoch))
        order = [train_ids[i] for i in rng.permutation(len(train_ids))]
        batches = [
            order[i : i + train_cfg.batch_size]
            for i in range(0, len(order), train_cfg.batch_size)
        ]

        obj_sum = gen_sum = seg_sum = 0.0
        gen_batches = seg_batches = 0
        gmax_text = gmax_seg = 0.0
        for batch in batches:
            objective_terms = []
            loss_gen = loss_seg = None
            if model.textgen is not None:
                is_active = LOSS_GENERATION in active
                ctx = contextlib.nullcontext() if is_active else torch.no_grad()
                with ctx:
                    terms = []
                    for sid in batch:
                        feats = cache.get(by_id[sid])
                        logits = model.text_logits(feats, _teacher_inputs(vocab, feats.target_ids))
                        terms.append(generation_loss(logits, feats.target_ids))
                    loss_gen = torch.stack(terms).mean()
                if is_active:
                    objective_terms.append(loss_gen)
            if model.segdec is not None:
                is_active = LOSS_SEGMENTATION in active
                ctx = contextlib.nullcontext() if is_active else torch.no_grad()
                with ctx:
                    terms = []
                    for sid in batch:
                        feats = cache.get(by_id[sid])
                        logits = model.mask_logits(feats)
                        terms.append(segmentation_loss(logits, by_id[sid].mask))
                    loss_seg = torch.stack(terms).mean()
                if is_active:
                    objective_terms.append(loss_seg)

            objective = sum(objective_terms[1:], objective_terms[0])
            optimizer.zero_grad(set_to_none=True)
            objective.backward()
            gmax_text = max(gmax_text, _grad_max(model.head_parameters("text")))
            gmax_seg = max(gmax_seg, _grad_max(model.head_parameters("seg")))
            optimizer.step()

            obj_sum += float(objective.detach())
            if loss_gen is not None:
                gen_sum += float(loss_gen.detach())
                gen_batches += 1
            if loss_seg is not None:
                seg_sum += float(loss_seg.detach())
                seg_batches += 1

        history.append(EpochStats(
            epoch=epoch,
            objective=obj_sum / len(batches),
            loss_generation=gen_sum / gen_batches if gen_batches else None,
            loss_segmentation=seg_sum / seg_batches if seg_batches else None,
            grad_max_text=gmax_text,
            grad_max_seg=gmax_seg,
        ))

    state = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_snapshot(model_cfg, train_cfg, schedule),
        "config_hash": expected_hash,
        "vocab": vocab.tokens[len(SPECIALS):] if vocab is not None else None,
        "epoch": train_cfg.epochs,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "history": [asdict(row) for row in history],
    }

    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = save_checkpoint(state, out_dir / "checkpoint.pt")
        write_loss_log(history, out_dir / "loss_log.csv")

    return TrainResult(model=model, cache=cache, vocab=vocab, history=history,
                       state=state, checkpoint_path=ckpt_path)


def write_loss_log(history, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "objective", "generation_loss", "segmentation_loss",
                         "grad_max_text", "grad_max_seg"])
        for row in history:
            writer.writerow([
                row.epoch, f"{row.objective:.9f}",
                "" if row.loss_generation is None else f"{row.loss_generation:.9f}",
                "" if row.loss_segmentation is None else f"{row.loss_segmentation:.9f}",
                f"{row.grad_max_text:.3e}", f"{row.grad_max_seg:.3e}",
            ])
    return path


def save_checkpoint(state: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(state, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(state, dict) or "format_version" not in state:
        raise CheckpointError(f"corrupt checkpoint {path}: not a checkpoint blob")
    if state["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {state['format_version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    return state


def restore(state: dict):
    """Rebuild (model, cache, configs) from a checkpoint state dict."""
    model_cfg = model_config_from_dict(state["config"]["model"])
    train_cfg = TrainConfig(**state["config"]["train"])
    schedule = schedule_from_dict(state["config"]["schedule"])
    vocab = Vocab(state["vocab"]) if state["vocab"] is not None else None
    model = build_model(model_cfg, train_cfg.mode, vocab, train_cfg.seed)
    model.load_state_dict(state["model_state"])
    model.eval()
    cache = FeatureCache(model_cfg, vocab)
    return model, cache, model_cfg, train_cfg, schedule


@torch.no_grad()
def predict_sample(model: MemeExplainer, cache: FeatureCache, sample,
                   threshold: Optional[float] = None) -> SamplePrediction:
    feats = cache.get(sample)
    tokens = None
    mask = None
    if model.textgen is not None:
        tokens = model.generate(feats).text.split()
    if model.segdec is not None:
        thr = model.config.seg.threshold if threshold is None else threshold
        mask = binarize(model.mask_logits(feats), thr)
    return SamplePrediction(tokens=tokens, mask=mask)


def evaluate_split(model: MemeExplainer, cache: FeatureCache, samples, ids):
    """(TextScore | None, MaskScore | None) over the given sample ids."""
    by_id = {s.id: s for s in samples}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"split references unknown sample ids: {missing[:5]}")
    preds, refs = [], []
    for sid in ids:
        sample = by_id[sid]
        pred = predict_sample(model, cache, sample)
        ref = SamplePrediction(
            tokens=rationale_target(sample).split() if pred.tokens is not None else None,
            mask=sample.mask if pred.mask is not None else None,
        )
        preds.append(pred)
        refs.append(ref)
    return score_corpus(preds, refs)


@torch.no_grad()
def probe_logits(model: MemeExplainer, cache: FeatureCache, samples, limit: int = 2):
    """Concatenated forward outputs on a few samples, for round-trip checks."""
    outs = []
    for sample in samples[:limit]:
        feats = cache.get(sample)
        if model.textgen is not None:
            ids = _teacher_inputs(model.vocab, feats.target_ids)
            outs.append(model.text_logits(feats, ids).flatten())
        if model.segdec is not None:
            outs.append(model.mask_logits(feats).flatten())
    return torch.cat(outs)
