"""Annotated meme corpus: loading, validation, splitting and serialization.

Manifest format: UTF-8 JSON lines, one record per meme with fields
id, image_path, text, tokens, rationale, mask_path, bully_label.
Paths are resolved relative to the manifest's directory. Images are RGB
PNGs decoded to float arrays in [0, 1]; masks are single-channel PNGs with
pixel values exactly 0 or 255, decoded to {0, 1}. Mask resolution must equal
the image resolution; resizing for a particular encoder is the backbone
adapter's job, never the corpus'.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

MANIFEST_FIELDS = ("id", "image_path", "text", "tokens", "rationale", "mask_path", "bully_label")


@dataclass(eq=False)
class MemeSample:
    """One annotated meme.

    image: float64 array (3, H, W) in [0, 1]
    mask: uint8 array (H, W) with values in {0, 1}
    rationale: one 0/1 label per token; tokens are the whitespace split of text
    """

    id: str
    image: np.ndarray
    text: str
    tokens: list
    rationale: list
    mask: np.ndarray
    bully_label: int


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    seed: int = 0


def validate_sample(sample: MemeSample):
    """Raise DataError on any invariant violation."""
    sid = sample.id
    img = np.asarray(sample.image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"sample {sid}: image must be (3, H, W), got {img.shape}")
    if img.shape[1] < 1 or img.shape[2] < 1:
        raise DataError(f"sample {sid}: degenerate image shape {img.shape}")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise DataError(f"sample {sid}: image values must lie in [0, 1]")
    mask = np.asarray(sample.mask)
    if mask.ndim != 2:
        raise DataError(f"sample {sid}: mask must be (H, W), got {mask.shape}")
    if mask.shape != img.shape[1:]:
        raise DataError(
            f"sample {sid}: mask shape {mask.shape} does not match image plane {img.shape[1:]}"
        )
    if not np.isin(mask, (0, 1)).all():
        bad = sorted(set(np.unique(mask)) - {0, 1})
        raise DataError(f"sample {sid}: non-binary mask values {bad}")
    if len(sample.rationale) != len(sample.tokens):
        raise DataError(
            f"sample {sid}: {len(sample.tokens)} tokens but "
            f"{len(sample.rationale)} rationale labels"
        )
    for v in sample.rationale:
        if v not in (0, 1):
            raise DataError(f"sample {sid}: rationale label {v!r} is not 0/1")
    if sample.text.split() != list(sample.tokens):
        raise DataError(f"sample {sid}: tokens do not reconstruct text up to whitespace")
    if sample.bully_label not in (0, 1):
        raise DataError(f"sample {sid}: bully_label {sample.bully_label!r} is not 0/1")


def load_image(path) -> np.ndarray:
    """Decode an image file to float64 (3, H, W) in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing image file: {path}")
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(image: np.ndarray, path):
    arr = np.asarray(image)
    data = np.round(arr.transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_mask(path) -> np.ndarray:
    """Decode a mask PNG; only pixel values 0 and 255 are legal."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing mask file: {path}")
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.int64)
    bad = sorted(set(np.unique(arr)) - {0, 255})
    if bad:
        raise DataError(f"mask {path}: pixel values {bad} outside {{0, 255}}")
    return (arr // 255).astype(np.uint8)


def save_mask(mask: np.ndarray, path):
    arr = (np.asarray(mask).astype(np.uint8) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def _parse_record(line: str, lineno: int) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"line {lineno}: malformed record: {exc}") from exc
    if not isinstance(record, dict):
        raise DataError(f"line {lineno}: record must be a JSON object")
    missing = [k for k in MANIFEST_FIELDS if k not in record]
    if missing:
        raise DataError(f"line {lineno}: record missing fields {missing}")
    return record


def load_manifest(path) -> list:
    """Load and validate every record; order preserves file order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing manifest file: {path}")
    base = path.parent
    samples = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            record = _parse_record(line, lineno)
            sid = str(record["id"])
            try:
                sample = MemeSample(
                    id=sid,
                    image=load_image(base / record["image_path"]),
                    text=str(record["text"]),
                    tokens=[str(t) for t in record["tokens"]],
                    rationale=list(record["rationale"]),
                    mask=load_mask(base / record["mask_path"]),
                    bully_label=record["bully_label"],
                )
                validate_sample(sample)
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
            samples.append(sample)
    return samples


def save_manifest(samples: Sequence[MemeSample], out_dir, manifest_name="manifest.jsonl") -> Path:
    """Serialize samples back to manifest format (images/ and masks/ PNGs
    plus a JSONL manifest). Reloading reproduces the samples field by field.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / manifest_name
    with manifest_path.open("w", encoding="utf-8") as f:
        for s in samples:
            image_rel = f"images/{s.id}.png"
            mask_rel = f"masks/{s.id}.png"
            save_image(s.image, out_dir / image_rel)
            save_mask(s.mask, out_dir / mask_rel)
            record = {
                "id": s.id,
                "image_path": image_rel,
                "text": s.text,
                "tokens": list(s.tokens),
                "rationale": [int(v) for v in s.rationale],
                "mask_path": mask_rel,
                "bully_label": int(s.bully_label),
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return manifest_path


def split_dataset(samples: Sequence[MemeSample], ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Deterministic train/val/test split of sample ids.

    val and test sizes are round(n * ratio); train absorbs the remainder.
    """
    if len(ratios) != 3:
        raise ConfigError(f"expected 3 ratios, got {len(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be nonnegative, got {ratios}")
    if len(samples) == 0:
        raise DataError("cannot split an empty sample list")
    if len(samples) < 3:
        raise DataError(f"need at least 3 samples to split, got {len(samples)}")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate sample ids in dataset")
    n = len(ids)
    n_val = round(n * ratios[1])
    n_test = round(n * ratios[2])
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError(f"ratios {ratios} leave no room for a train split at n={n}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    return DatasetSplit(
        train=order[:n_train],
        val=order[n_train : n_train + n_val],
        test=order[n_train + n_val :],
        seed=seed,
    )


def save_split(split: DatasetSplit, path) -> Path:
    path = Path(path)
    payload = {"train": split.train, "val": split.val, "test": split.test, "seed": split.seed}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_split(path) -> DatasetSplit:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing split file: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        return DatasetSplit(
            train=list(payload["train"]),
            val=list(payload["val"]),
            test=list(payload["test"]),
            seed=int(payload["seed"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed split file {path}: {exc}") from exc


def rationale_target(sample: MemeSample) -> str:
    """The tokens labeled 1, joined in original order; the generation target."""
    return " ".join(t for t, r in zip(sample.tokens, sample.rationale) if r == 1)
