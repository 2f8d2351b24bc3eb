"""Desk-scale synthetic corpus for tests and demos.

Each sample pairs a flat-colored background with one or two brighter
rectangles aligned to the patch grid; the rectangles are the visual
evidence mask. Text mixes neutral filler with trigger words; the trigger
positions carry rationale label 1.
"""

from __future__ import annotations

import numpy as np

from .corpus import MemeSample, save_manifest

NEUTRAL_WORDS = [
    "yaar", "kya", "scene", "hai", "aaj", "photo", "dekho", "meme", "toh",
    "wala", "bhai", "abhi", "kal", "full", "time", "pic", "ka", "ki",
]
TRIGGER_WORDS = [
    "pagal", "bewakoof", "loser", "gadha", "stupid", "nalla", "joker", "ullu",
]


def _patch_rect(rng, grid, img_hw):
    # Rectangles span at least 2x2 grid cells: learnable mask boundaries
    # stay a small fraction of the mask area.
    rows, cols = grid
    h, w = img_hw
    ph, pw = h // rows, w // cols
    r0 = int(rng.integers(0, rows - 1))
    c0 = int(rng.integers(0, cols - 1))
    r1 = int(rng.integers(r0 + 2, rows + 1))
    c1 = int(rng.integers(c0 + 2, cols + 1))
    return r0 * ph, r1 * ph, c0 * pw, c1 * pw


def make_samples(n: int = 10, seed: int = 0, image_size: int = 32, patch_grid=(4, 4)) -> list:
    """Build n in-memory samples, deterministic for a fixed seed."""
    if patch_grid[0] < 2 or patch_grid[1] < 2:
        raise ValueError(f"patch_grid must be at least 2x2, got {patch_grid}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        h = w = image_size
        bg = rng.uniform(0.02, 0.25, size=3)
        image = np.tile(bg[:, None, None], (1, h, w))
        mask = np.zeros((h, w), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 3))):
            y0, y1, x0, x1 = _patch_rect(rng, patch_grid, (h, w))
            fg = rng.uniform(0.6, 0.98, size=3)
            image[:, y0:y1, x0:x1] = fg[:, None, None]
            mask[y0:y1, x0:x1] = 1
        image = np.clip(image, 0.0, 1.0)
        # Quantize to the 8-bit grid so disk round-trips are exact.
        image = np.round(image * 255.0) / 255.0

        n_tokens = int(rng.integers(4, 9))
        n_triggers = int(rng.integers(1, min(4, n_tokens)))
        trigger_pos = sorted(rng.choice(n_tokens, size=n_triggers, replace=False).tolist())
        tokens = []
        rationale = []
        for j in range(n_tokens):
            if j in trigger_pos:
                tokens.append(str(rng.choice(TRIGGER_WORDS)))
                rationale.append(1)
            else:
                tokens.append(str(rng.choice(NEUTRAL_WORDS)))
                rationale.append(0)
        samples.append(
            MemeSample(
                id=f"syn{i:03d}",
                image=image,
                text=" ".join(tokens),
                tokens=tokens,
                rationale=rationale,
                mask=mask,
                bully_label=1,
            )
        )
    return samples


def write_corpus(out_dir, n: int = 10, seed: int = 0, image_size: int = 32, patch_grid=(4, 4)):
    """Write a synthetic corpus to disk; returns the manifest path."""
    samples = make_samples(n=n, seed=seed, image_size=image_size, patch_grid=patch_grid)
    return save_manifest(samples, out_dir)


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description="Generate a synthetic demo corpus")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--n", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--image-size", type=int, default=32)
    args = parser.parse_args()
    path = write_corpus(args.out, n=args.n, seed=args.seed, image_size=args.image_size)
    print(f"wrote {args.n} samples to {path}")
