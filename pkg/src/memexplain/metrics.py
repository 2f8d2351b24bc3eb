"""Evaluation measures for textual and visual explanations.

Text side: ROUGE-1/2 (clipped n-gram overlap F1), ROUGE-L (longest common
subsequence F1) and smoothed BLEU-1..4. Mask side: Dice coefficient,
Jaccard similarity and mean IoU over the foreground/background classes.
All scores live in [0, 1]; report tables show them times 100.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

TEXT_COLUMNS = ("R1", "R2", "R-L", "B1", "B2", "B3", "B4")
MASK_COLUMNS = ("DC", "JS", "mIOU")


@dataclass
class TextScore:
    """Corpus-level text explanation scores, each in [0, 1]."""

    r1: float
    r2: float
    rl: float
    b1: float
    b2: float
    b3: float
    b4: float

    def as_row(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class MaskScore:
    """Corpus-level mask scores, each in [0, 1]. jaccard <= dice always."""

    dice: float
    jaccard: float
    miou: float

    def as_row(self):
        return [self.dice, self.jaccard, self.miou]


@dataclass
class SamplePrediction:
    """One sample's predicted (or reference) explanation for corpus scoring."""

    tokens: Optional[Sequence[str]] = None
    mask: Optional[np.ndarray] = None


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(hyp: Sequence[str], ref: Sequence[str], n: int) -> float:
    """F1 over clipped n-gram overlap.

    Returns 0.0 when either side has no n-grams.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    hyp_counts = _ngram_counts(hyp, n)
    ref_counts = _ngram_counts(ref, n)
    hyp_total = sum(hyp_counts.values())
    ref_total = sum(ref_counts.values())
    if hyp_total == 0 or ref_total == 0:
        return 0.0
    overlap = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if overlap == 0:
        return 0.0
    precision = overlap / hyp_total
    recall = overlap / ref_total
    return 2.0 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # Classic O(len(a)*len(b)) dynamic program, single rolling row.
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence[str], ref: Sequence[str]) -> float:
    """F1 from the longest common subsequence length."""
    if not hyp or not ref:
        return 0.0
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(hyp)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def bleu(hyp: Sequence[str], ref: Sequence[str], max_n: int = 4) -> float:
    """Smoothed BLEU: geometric mean of modified n-gram precisions times a
    brevity penalty.

    Smoothing is add-one on numerator and denominator for n >= 2 (the n=1
    precision is left unsmoothed, so no unigram match means score 0).
    Brevity penalty is exp(1 - |ref|/|hyp|) when |hyp| < |ref| else 1.
    """
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    if len(hyp) == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngram_counts(hyp, n)
        ref_counts = _ngram_counts(ref, n)
        total = sum(hyp_counts.values())
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        if n == 1:
            if matched == 0:
                return 0.0
            p = matched / total
        else:
            p = (matched + 1) / (total + 1)
        log_sum += math.log(p)
    score = math.exp(log_sum / max_n)
    if len(hyp) < len(ref):
        score *= math.exp(1.0 - len(ref) / len(hyp))
    return score


def _check_mask_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    return a.astype(bool), b.astype(bool)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient 2|A n B| / (|A| + |B|) over foreground pixels.

    Two empty masks score 1.0 (perfect agreement on absence).
    """
    a, b = _check_mask_pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return 2.0 * inter / total


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """Jaccard similarity |A n B| / |A u B|; both-empty scores 1.0."""
    a, b = _check_mask_pair(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(a, b).sum())
    return inter / union


def miou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean of the foreground and background IoU.

    A class empty in both masks contributes 1.0 to the mean.
    """
    pred, gt = _check_mask_pair(pred, gt)
    ious = []
    for cls_pred, cls_gt in ((pred, gt), (~pred, ~gt)):
        union = int(np.logical_or(cls_pred, cls_gt).sum())
        if union == 0:
            ious.append(1.0)
        else:
            ious.append(int(np.logical_and(cls_pred, cls_gt).sum()) / union)
    return float(np.mean(ious))


def text_scores(hyp: Sequence[str], ref: Sequence[str]) -> TextScore:
    """All per-sample text metrics for one hypothesis/reference pair."""
    return TextScore(
        r1=rouge_n(hyp, ref, 1),
        r2=rouge_n(hyp, ref, 2),
        rl=rouge_l(hyp, ref),
        b1=bleu(hyp, ref, 1),
        b2=bleu(hyp, ref, 2),
        b3=bleu(hyp, ref, 3),
        b4=bleu(hyp, ref, 4),
    )


def mask_scores(pred: np.ndarray, gt: np.ndarray) -> MaskScore:
    """All per-sample mask metrics for one prediction/reference pair."""
    return MaskScore(dice=dice(pred, gt), jaccard=jaccard(pred, gt), miou=miou(pred, gt))


def score_corpus(
    predictions: Sequence[SamplePrediction], references: Sequence[SamplePrediction]
):
    """Corpus scores as means of per-sample scores.

    Text and mask channels are scored over the samples where the prediction
    carries that channel; a prediction channel without the matching reference
    channel is an error. Returns (TextScore or None, MaskScore or None).
    """
    if len(predictions) != len(references):
        raise ValueError(
            f"prediction/reference length mismatch: {len(predictions)} vs {len(references)}"
        )
    text_rows = []
    mask_rows = []
    for i, (p, r) in enumerate(zip(predictions, references)):
        if p.tokens is not None:
            if r.tokens is None:
                raise ValueError(f"sample {i}: prediction has tokens but reference does not")
            text_rows.append(text_scores(p.tokens, r.tokens).as_row())
        if p.mask is not None:
            if r.mask is None:
                raise ValueError(f"sample {i}: prediction has mask but reference does not")
            mask_rows.append(mask_scores(p.mask, r.mask).as_row())
    text = TextScore(*np.mean(text_rows, axis=0)) if text_rows else None
    mask = MaskScore(*np.mean(mask_rows, axis=0)) if mask_rows else None
    return text, mask


def report_cell(value: float) -> str:
    """Score formatted for report tables: times 100, two decimals."""
    return f"{value * 100.0:.2f}"


def _report_header_and_rows(rows):
    header = ["Model"]
    any_text = any(t is not None for _, t, _ in rows)
    any_mask = any(m is not None for _, _, m in rows)
    if any_text:
        header += list(TEXT_COLUMNS)
    if any_mask:
        header += list(MASK_COLUMNS)
    out_rows = []
    for name, text, mask in rows:
        row = [name]
        if any_text:
            row += [report_cell(v) for v in text.as_row()] if text else [""] * len(TEXT_COLUMNS)
        if any_mask:
            row += [report_cell(v) for v in mask.as_row()] if mask else [""] * len(MASK_COLUMNS)
        out_rows.append(row)
    return header, out_rows


def render_report(rows) -> str:
    """Aligned text table; rows are (name, TextScore | None, MaskScore | None)."""
    header, out_rows = _report_header_and_rows(rows)
    widths = [max(len(str(r[i])) for r in [header] + out_rows) for i in range(len(header))]
    lines = []
    for r in [header] + out_rows:
        lines.append("  ".join(str(c).rjust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def write_report_csv(path, rows):
    """CSV version of the report table."""
    header, out_rows = _report_header_and_rows(rows)
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(out_rows)
    return path


def paired_ttest(a: Sequence[float], b: Sequence[float]):
    """Paired t-test over matched per-sample scores; returns (statistic, p_value)."""
    from scipy import stats

    res = stats.ttest_rel(a, b)
    return float(res.statistic), float(res.pvalue)
