"""Annotation aggregation: majority voting, Fleiss' kappa, mask adjudication
and corpus statistics over annotated samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .metrics import dice

ACCEPT_FIRST = "accept_first"
ROUTE_TO_EXPERT = "route_to_expert"


@dataclass
class AdjudicationResult:
    decision: str  # ACCEPT_FIRST or ROUTE_TO_EXPERT
    dice_value: float


@dataclass
class CorpusStats:
    mean_rationale_tokens: float
    mean_total_tokens: float
    mean_mask_area_pct: float
    rationale_lengths: list
    token_counts: list
    area_percents: list


def majority_vote(rows: Sequence[Sequence[int]]):
    """Per-token strict majority over annotator label rows.

    Returns (labels, tie_flags). A token with no strict majority gets label 0
    and its tie flag set, marking it for expert adjudication.
    """
    if len(rows) < 2:
        raise DataError(f"majority voting needs >= 2 annotators, got {len(rows)}")
    length = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != length:
            raise DataError(f"annotator row {i} has length {len(row)}, expected {length}")
        for v in row:
            if v not in (0, 1):
                raise DataError(f"annotator row {i} contains non-binary label {v!r}")
    labels = []
    ties = []
    for j in range(length):
        ones = sum(row[j] for row in rows)
        zeros = len(rows) - ones
        if ones > zeros:
            labels.append(1)
            ties.append(False)
        elif zeros > ones:
            labels.append(0)
            ties.append(False)
        else:
            labels.append(0)
            ties.append(True)
    return labels, ties


def fleiss_kappa(counts) -> float:
    """Fleiss' kappa over an items-by-categories rating count matrix.

    counts[i][j] is the number of raters assigning category j to item i;
    every row must sum to the same rater count r >= 2.

    kappa = (P_bar - P_e_bar) / (1 - P_e_bar), where P_bar is the mean
    per-item pairwise agreement and P_e_bar the chance agreement from the
    category marginals. Degenerate case P_e_bar == 1 (a single category ever
    used): returns 1.0 when agreement is perfect, else 0.0.
    """
    m = np.asarray(counts, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DataError(f"rating matrix must be 2-d and nonempty, got shape {m.shape}")
    if np.any(m < 0) or np.any(m != np.round(m)):
        raise DataError("rating matrix entries must be nonnegative integers")
    row_sums = m.sum(axis=1)
    r = row_sums[0]
    if np.any(row_sums != r):
        raise DataError(f"inconsistent row sums: {sorted(set(row_sums.tolist()))}")
    if r < 2:
        raise DataError(f"need >= 2 raters per item, got {int(r)}")
    n_items = m.shape[0]
    p_i = ((m * m).sum(axis=1) - r) / (r * (r - 1))
    p_bar = float(p_i.mean())
    p_j = m.sum(axis=0) / (n_items * r)
    p_e = float((p_j * p_j).sum())
    if abs(1.0 - p_e) < 1e-12:
        return 1.0 if abs(1.0 - p_bar) < 1e-12 else 0.0
    return (p_bar - p_e) / (1.0 - p_e)


def rating_matrix_from_labels(rows: Sequence[Sequence[int]], categories: int = 2) -> np.ndarray:
    """Items-by-categories count matrix from per-annotator label rows.

    Each token position is one item; rows must be equal-length binary
    (or small-integer category) sequences, one per annotator.
    """
    if len(rows) < 2:
        raise DataError(f"need >= 2 annotators, got {len(rows)}")
    length = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != length:
            raise DataError(f"annotator row {i} has length {len(row)}, expected {length}")
    m = np.zeros((length, categories), dtype=np.int64)
    for row in rows:
        for j, v in enumerate(row):
            if not (0 <= int(v) < categories):
                raise DataError(f"label {v!r} outside the {categories}-category range")
            m[j, int(v)] += 1
    return m


def adjudicate_masks(a: np.ndarray, b: np.ndarray) -> AdjudicationResult:
    """Dice-threshold adjudication of a two-annotator mask pair.

    dice > 0.5 accepts the first annotator's mask; dice <= 0.5 routes the
    sample to an expert annotator. The boundary value 0.5 routes to expert.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DataError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    d = dice(a, b)
    decision = ACCEPT_FIRST if d > 0.5 else ROUTE_TO_EXPERT
    return AdjudicationResult(decision=decision, dice_value=d)


def stats_from_arrays(rationale_lengths, token_counts, area_percents) -> CorpusStats:
    if len(rationale_lengths) == 0 or len(token_counts) == 0:
        raise DataError("empty sample list")
    return CorpusStats(
        mean_rationale_tokens=float(np.mean(rationale_lengths)),
        mean_total_tokens=float(np.mean(token_counts)),
        mean_mask_area_pct=float(np.mean(area_percents)) if len(area_percents) else float("nan"),
        rationale_lengths=list(rationale_lengths),
        token_counts=list(token_counts),
        area_percents=list(area_percents),
    )


def corpus_stats(samples) -> CorpusStats:
    """Mean rationale token count, mean token count and mean foreground-area
    percentage over a list of samples, with the per-sample distributions kept
    for histogram emission.
    """
    if not samples:
        raise DataError("empty sample list")
    rationale_lengths = [int(sum(s.rationale)) for s in samples]
    token_counts = [len(s.tokens) for s in samples]
    area_percents = [100.0 * float(np.asarray(s.mask).mean()) for s in samples]
    return stats_from_arrays(rationale_lengths, token_counts, area_percents)


def histogram_table(values, bins):
    """(bin_left, bin_right, count) rows for a histogram data file."""
    counts, edges = np.histogram(values, bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
