"""Command-line entry point.

Commands: prepare, train, eval, explain, agree. Structural settings live in a
YAML run config; flags only override scalars (seed, paths, mode). Exit codes:
0 success, 1 data error, 2 config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from PIL import Image, ImageDraw, ImageFont

from . import agreement, corpus, trainer
from .backbone import BackboneConfig
from .errors import ConfigError, DataError
from .metrics import MaskScore, TextScore, render_report, write_report_csv
from .model import ModelConfig
from .neck import NeckConfig
from .segmenter import SegConfig
from .textgen import TextGenConfig
from .trainer import LossSchedule, TrainConfig


@dataclass
class CorpusPaths:
    manifest: Optional[str] = None
    split: Optional[str] = None
    ratios: tuple = (0.7, 0.1, 0.2)
    split_seed: int = 0


@dataclass
class RunConfig:
    corpus: CorpusPaths
    model: ModelConfig
    train: TrainConfig
    schedule: Optional[LossSchedule]
    out_dir: str = "runs/out"


def _section(data: dict, name: str, cls) -> dict:
    raw = data.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {unknown}")
    return dict(raw)


_FLOAT_KEYS = {"learning_rate", "adam_epsilon", "threshold"}


def _coerce(d: dict) -> dict:
    for k in list(d):
        if k in _FLOAT_KEYS and d[k] is not None:
            d[k] = float(d[k])
    return d


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    known = {"corpus", "backbone", "neck", "textgen", "seg", "train", "schedule", "out_dir"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")

    cp = _section(data, "corpus", CorpusPaths)
    if "ratios" in cp:
        cp["ratios"] = tuple(float(r) for r in cp["ratios"])
    bb = _section(data, "backbone", BackboneConfig)
    if "patch_grid" in bb:
        bb["patch_grid"] = tuple(bb["patch_grid"])
    model = ModelConfig(
        backbone=BackboneConfig(**bb),
        neck=NeckConfig(**_section(data, "neck", NeckConfig)),
        textgen=TextGenConfig(**_section(data, "textgen", TextGenConfig)),
        seg=SegConfig(**_coerce(_section(data, "seg", SegConfig))),
    )
    train_cfg = TrainConfig(**_coerce(_section(data, "train", TrainConfig)))
    sched_raw = data.get("schedule")
    schedule = None
    if sched_raw is not None:
        allowed = {f.name for f in dataclasses.fields(LossSchedule)}
        unknown = sorted(set(sched_raw) - allowed)
        if unknown:
            raise ConfigError(f"unknown keys in config section 'schedule': {unknown}")
        schedule = LossSchedule(ep=int(sched_raw.get("ep", 15)),
                                order=tuple(sched_raw.get("order", LossSchedule().order)))
    return RunConfig(
        corpus=CorpusPaths(**cp),
        model=model,
        train=train_cfg,
        schedule=schedule,
        out_dir=str(data.get("out_dir", "runs/out")),
    )


def _load_samples(cfg: RunConfig):
    if not cfg.corpus.manifest:
        raise ConfigError("config has no corpus.manifest")
    return corpus.load_manifest(cfg.corpus.manifest)


def _load_or_make_split(cfg: RunConfig, samples) -> corpus.DatasetSplit:
    if cfg.corpus.split and Path(cfg.corpus.split).exists():
        return corpus.load_split(cfg.corpus.split)
    return corpus.split_dataset(samples, ratios=cfg.corpus.ratios, seed=cfg.corpus.split_seed)


# -- commands -----------------------------------------------------------------


def cmd_prepare(args) -> int:
    if args.config:
        cfg = load_run_config(args.config)
        manifest = args.manifest or cfg.corpus.manifest
        ratios = cfg.corpus.ratios
        seed = args.seed if args.seed is not None else cfg.corpus.split_seed
    else:
        manifest = args.manifest
        ratios = (0.7, 0.1, 0.2)
        seed = args.seed if args.seed is not None else 0
    if not manifest:
        raise ConfigError("prepare needs --manifest or a config with corpus.manifest")
    out = Path(args.out) if args.out else Path(manifest).parent
    out.mkdir(parents=True, exist_ok=True)

    samples = corpus.load_manifest(manifest)
    split = corpus.split_dataset(samples, ratios=ratios, seed=seed)
    split_path = corpus.save_split(split, out / "split.json")
    print(f"validated {len(samples)} samples from {manifest}")
    print(f"split sizes: train={len(split.train)} val={len(split.val)} test={len(split.test)}")
    print(f"wrote {split_path}")
    return 0


def _run_once(cfg: RunConfig, samples, split, out_dir: Path, seed: int):
    train_cfg = dataclasses.replace(cfg.train, seed=seed)
    result = trainer.train(samples, split, cfg.model, train_cfg, cfg.schedule,
                           out_dir=out_dir)
    return result


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.mode:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, mode=args.mode))
    out_dir = Path(args.out or cfg.out_dir)
    seed = args.seed if args.seed is not None else cfg.train.seed
    samples = _load_samples(cfg)
    split = _load_or_make_split(cfg, samples)

    if args.resume:
        train_cfg = dataclasses.replace(cfg.train, seed=seed)
        result = trainer.train(samples, split, cfg.model, train_cfg, cfg.schedule,
                               out_dir=out_dir, resume_from=args.resume)
        print(f"resumed to epoch {cfg.train.epochs}; checkpoint: {result.checkpoint_path}")
        return 0

    if args.repeats <= 1:
        result = _run_once(cfg, samples, split, out_dir, seed)
        last = result.history[-1]
        print(f"trained {cfg.train.mode} for {cfg.train.epochs} epochs "
              f"(final objective {last.objective:.6f})")
        print(f"checkpoint: {result.checkpoint_path}")
        return 0

    rows = []
    per_run = []
    for k in range(args.repeats):
        run_dir = out_dir / f"run{k}"
        result = _run_once(cfg, samples, split, run_dir, seed + k)
        text, mask = trainer.evaluate_split(result.model, result.cache, samples, split.test)
        per_run.append((f"run{k} (seed {seed + k})", text, mask))
        rows.append((text.as_row() if text else []) + (mask.as_row() if mask else []))
        print(f"run {k} done (seed {seed + k})")
    mean_row = np.mean(rows, axis=0)
    text_mean = mask_mean = None
    offset = 0
    if per_run[0][1] is not None:
        text_mean = TextScore(*mean_row[:7])
        offset = 7
    if per_run[0][2] is not None:
        mask_mean = MaskScore(*mean_row[offset : offset + 3])
    summary = per_run + [("mean", text_mean, mask_mean)]
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(out_dir / "summary.csv", summary)
    print(render_report(summary))
    print(f"wrote {out_dir / 'summary.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    state = trainer.load_checkpoint(args.checkpoint)
    model, cache, _, _, _ = trainer.restore(state)
    samples = _load_samples(cfg)
    split = _load_or_make_split(cfg, samples)
    ids = getattr(split, args.split)
    if not ids:
        raise DataError(f"split {args.split!r} is empty")
    text, mask = trainer.evaluate_split(model, cache, samples, ids)
    name = Path(args.checkpoint).stem
    rows = [(name, text, mask)]
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(out_dir / f"report_{args.split}.csv", rows)
    table = render_report(rows)
    (out_dir / f"report_{args.split}.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _strip_rows(tokens, box_w, font, pad=4):
    rows, cur, used = [], [], 0
    for tok in tokens:
        w = font.getbbox(tok)[2] + 2 * pad
        if cur and used + w > box_w:
            rows.append(cur)
            cur, used = [], 0
        cur.append(tok)
        used += w + pad
    if cur:
        rows.append(cur)
    return rows


def render_overlay(image, mask, tokens, predicted, gold, out_path):
    """Predicted-mask tint over the image plus a token strip underneath.

    predicted / gold are word sets; with gold present, agreement tokens are
    green and spurious predictions red, otherwise predictions are yellow.
    """
    img = (np.asarray(image).transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    if mask is not None:
        tint = np.array([255, 64, 64], dtype=np.float64)
        m = np.asarray(mask).astype(bool)
        img = img.astype(np.float64)
        img[m] = 0.55 * img[m] + 0.45 * tint
        img = img.round().astype(np.uint8)
    base = Image.fromarray(img, mode="RGB")

    font = ImageFont.load_default()
    pad, line_h = 4, 16
    rows = _strip_rows(tokens, base.width, font, pad) if tokens else []
    strip_h = max(line_h + 2 * pad, len(rows) * (line_h + pad) + pad)
    strip = Image.new("RGB", (base.width, strip_h), (255, 255, 255))
    draw = ImageDraw.Draw(strip)
    y = pad
    for row in rows:
        x = pad
        for tok in row:
            w = font.getbbox(tok)[2]
            color = None
            if predicted is not None and tok in predicted:
                if gold is None:
                    color = (255, 235, 120)
                elif tok in gold:
                    color = (140, 220, 140)
                else:
                    color = (240, 130, 130)
            if color:
                draw.rectangle([x - 2, y - 2, x + w + 2, y + line_h - 2], fill=color)
            draw.text((x, y), tok, fill=(0, 0, 0), font=font)
            x += w + 3 * pad
        y += line_h + pad
    out = Image.new("RGB", (base.width, base.height + strip_h))
    out.paste(base, (0, 0))
    out.paste(strip, (0, base.height))
    out.save(out_path)
    return out_path


def cmd_explain(args) -> int:
    state = trainer.load_checkpoint(args.checkpoint)
    model, cache, _, _, _ = trainer.restore(state)
    image = corpus.load_image(args.image)
    text = args.text or ""
    sid = hashlib.sha1(f"{args.image}|{text}".encode()).hexdigest()[:12]
    sample = corpus.MemeSample(
        id=f"explain-{sid}", image=image, text=text, tokens=text.split(),
        rationale=[0] * len(text.split()),
        mask=np.zeros(image.shape[1:], dtype=np.uint8), bully_label=1,
    )
    pred = trainer.predict_sample(model, cache, sample)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rationale = " ".join(pred.tokens) if pred.tokens is not None else ""
    (out_dir / "rationale.txt").write_text(rationale + "\n", encoding="utf-8")
    if pred.mask is not None:
        corpus.save_mask(pred.mask, out_dir / "mask.png")

    gold = set(args.gold_rationale.split()) if args.gold_rationale else None
    predicted = set(pred.tokens) if pred.tokens is not None else None
    render_overlay(image, pred.mask, sample.tokens, predicted, gold,
                   out_dir / "overlay.png")
    if args.gold_mask:
        gold_mask = corpus.load_mask(args.gold_mask)
        if pred.mask is not None:
            from .metrics import dice as dice_fn

            print(f"mask dice vs gold: {dice_fn(pred.mask, gold_mask):.4f}")
    print(f"rationale: {rationale!r}")
    print(f"wrote outputs to {out_dir}")
    return 0


def _load_bundle(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing bundle file: {path}")
    records = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed bundle record: {exc}") from exc
            if "id" not in rec:
                raise DataError(f"line {lineno}: bundle record missing 'id'")
            records.append(rec)
    if not records:
        raise DataError(f"bundle {path} is empty")
    return records


def cmd_agree(args) -> int:
    records = _load_bundle(args.bundle)
    base = Path(args.bundle).parent
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    all_rows = []
    votes = []
    adjudications = []
    rationale_lengths, token_counts, areas = [], [], []
    for rec in records:
        labels = rec.get("annotator_labels")
        if labels:
            labels_vote, ties = agreement.majority_vote(labels)
            votes.append({"id": rec["id"], "labels": labels_vote, "ties": ties})
            all_rows.append(labels)
            rationale_lengths.append(sum(labels_vote))
            token_counts.append(len(labels_vote))
        masks = rec.get("mask_paths")
        if masks:
            if len(masks) != 2:
                raise DataError(f"sample {rec['id']}: expected 2 mask paths, got {len(masks)}")
            a = corpus.load_mask(base / masks[0])
            b = corpus.load_mask(base / masks[1])
            result = agreement.adjudicate_masks(a, b)
            adjudications.append((rec["id"], result))
            if result.decision == agreement.ACCEPT_FIRST:
                areas.append(100.0 * float(a.mean()))

    kappa = None
    if all_rows:
        counts = np.concatenate(
            [agreement.rating_matrix_from_labels(rows) for rows in all_rows]
        )
        kappa = agreement.fleiss_kappa(counts)
        print(f"fleiss kappa (token level): {kappa:.4f}")

    with (out_dir / "votes.jsonl").open("w", encoding="utf-8") as f:
        for v in votes:
            f.write(json.dumps(v) + "\n")
    with (out_dir / "adjudication.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "dice", "decision"])
        for sid, res in adjudications:
            writer.writerow([sid, f"{res.dice_value:.6f}", res.decision])
    routed = [sid for sid, r in adjudications if r.decision == agreement.ROUTE_TO_EXPERT]
    if routed:
        print(f"routed to expert: {routed}")

    if rationale_lengths:
        stats = agreement.stats_from_arrays(rationale_lengths, token_counts, areas)
        with (out_dir / "stats.csv").open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["mean_rationale_tokens", "mean_total_tokens", "mean_mask_area_pct"])
            writer.writerow([f"{stats.mean_rationale_tokens:.4f}",
                             f"{stats.mean_total_tokens:.4f}",
                             f"{stats.mean_mask_area_pct:.4f}"])
        hists = [
            ("hist_token_count.csv", stats.token_counts,
             np.arange(0, max(stats.token_counts) + 2)),
            ("hist_rationale_length.csv", stats.rationale_lengths,
             np.arange(0, max(stats.rationale_lengths) + 2)),
            ("hist_mask_area.csv", stats.area_percents, np.linspace(0, 100, 21)),
        ]
        for name, values, bins in hists:
            if len(values) == 0:
                continue
            with (out_dir / name).open("w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["bin_left", "bin_right", "count"])
                writer.writerows(agreement.histogram_table(values, bins))
        print(f"stats: rationale={stats.mean_rationale_tokens:.2f} "
              f"tokens={stats.mean_total_tokens:.2f} "
              f"area={stats.mean_mask_area_pct:.2f}%")
    print(f"wrote agreement outputs to {out_dir}")
    return 0


# -- argument wiring -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memexplain",
        description="Explain bullying memes: textual rationales plus visual evidence masks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a manifest and write the split file")
    p.add_argument("--manifest", help="manifest JSONL path")
    p.add_argument("--config", help="run config YAML (for corpus defaults)")
    p.add_argument("--out", help="output directory (default: manifest directory)")
    p.add_argument("--seed", type=int, help="split seed override")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train per the run config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="training seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--mode", choices=["single_text", "single_vision", "multitask"])
    p.add_argument("--repeats", type=int, default=1,
                   help="train N times with consecutive seeds and average test metrics")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", help="output directory override")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="explain a single meme")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--text", required=True, help="the meme's embedded text")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--gold-rationale", help="gold rationale words for agreement coloring")
    p.add_argument("--gold-mask", help="gold mask PNG for a dice report")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("agree", help="annotation agreement analysis over a bundle")
    p.add_argument("--bundle", required=True, help="annotation bundle JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_agree)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
