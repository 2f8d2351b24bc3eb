"""Independent naive oracles and numerical helpers for the test suite.

Everything here is deliberately implemented by a different route than the
library (explicit loops, set enumeration, memoized recursion) so that
agreement between the two is evidence, not tautology.
"""

import math
from functools import lru_cache

import numpy as np
import torch

# -- text metric oracles -------------------------------------------------------


def ngrams_list(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n_naive(hyp, ref, n):
    hyp_ngrams = ngrams_list(hyp, n)
    ref_ngrams = ngrams_list(ref, n)
    if not hyp_ngrams or not ref_ngrams:
        return 0.0
    pool = list(ref_ngrams)
    overlap = 0
    for g in hyp_ngrams:
        if g in pool:
            pool.remove(g)
            overlap += 1
    if overlap == 0:
        return 0.0
    p = overlap / len(hyp_ngrams)
    r = overlap / len(ref_ngrams)
    return 2 * p * r / (p + r)


def lcs_naive(a, b):
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    a, b = tuple(a), tuple(b)
    return rec(0, 0)


def rouge_l_naive(hyp, ref):
    if not hyp or not ref:
        return 0.0
    lcs = lcs_naive(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return 2 * p * r / (p + r)


def bleu_naive(hyp, ref, max_n=4):
    if not hyp:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        hyp_ngrams = ngrams_list(hyp, n)
        matched = 0
        pool = ngrams_list(ref, n)
        for g in hyp_ngrams:
            if g in pool:
                pool.remove(g)
                matched += 1
        if n == 1:
            if matched == 0:
                return 0.0
            logs.append(math.log(matched / len(hyp_ngrams)))
        else:
            logs.append(math.log((matched + 1) / (len(hyp_ngrams) + 1)))
    score = math.exp(sum(logs) / max_n)
    if len(hyp) < len(ref):
        score *= math.exp(1 - len(ref) / len(hyp))
    return score


# -- mask metric oracles (pixel-set enumeration) ---------------------------------


def mask_to_set(mask):
    mask = np.asarray(mask)
    return {(i, j) for i in range(mask.shape[0]) for j in range(mask.shape[1]) if mask[i, j]}


def dice_naive(a, b):
    sa, sb = mask_to_set(a), mask_to_set(b)
    if not sa and not sb:
        return 1.0
    return 2 * len(sa & sb) / (len(sa) + len(sb))


def jaccard_naive(a, b):
    sa, sb = mask_to_set(a), mask_to_set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def miou_naive(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    every = {(i, j) for i in range(pred.shape[0]) for j in range(pred.shape[1])}
    sp, sg = mask_to_set(pred), mask_to_set(gt)
    ious = []
    for a, b in ((sp, sg), (every - sp, every - sg)):
        union = a | b
        ious.append(1.0 if not union else len(a & b) / len(union))
    return sum(ious) / 2


# -- loss and attention oracles ---------------------------------------------------


def softmax_nll_naive(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, t in zip(logits, targets):
        exps = [math.exp(v) for v in row]
        total += -math.log(exps[int(t)] / sum(exps))
    return total / len(targets)


def bce_naive(logits, targets):
    logits = np.asarray(logits, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    total = 0.0
    for z, t in zip(logits, targets):
        p = 1.0 / (1.0 + math.exp(-z))
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
    return total / len(targets)


def single_head_attention_naive(q, k, v):
    """softmax(q k^T / sqrt(d)) v in plain numpy."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scores = q @ k.T / math.sqrt(q.shape[-1])
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights = weights / weights.sum(axis=-1, keepdims=True)
    return weights @ v


# -- gradient checking -------------------------------------------------------------


def randomize_parameters(module, generator, scale=0.3):
    """Put every parameter in a generic position so no gradient path is
    structurally dead (layer-norm gains included)."""
    for name, p in module.named_parameters():
        with torch.no_grad():
            r = torch.randn(p.shape, generator=generator, dtype=p.dtype)
            if p.ndim >= 2:
                p.copy_(r * scale)
            elif name.endswith("bias"):
                p.copy_(r * 0.1)
            else:
                p.copy_(1.0 + 0.2 * r)


def check_gradients(f, tensors, h=1e-5, rtol=1e-4, atol=1e-8, max_coords=64, seed=0):
    """Autograd gradients of the scalar f() vs central finite differences.

    Checks every coordinate of tensors up to max_coords (a seeded sample
    beyond that) plus one whole-tensor directional derivative each. A check
    passes when |fd - autograd| <= atol + rtol * max(|fd|, |autograd|); the
    atol floor absorbs pure float noise on structurally-zero gradients.
    Returns a list of failure records, empty on success.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    out = f()
    out.backward()
    grads = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
             for t in tensors]

    def feval():
        with torch.no_grad():
            return float(f())

    gen = torch.Generator().manual_seed(seed)
    failures = []
    for ti, (t, g) in enumerate(zip(tensors, grads)):
        flat = t.data.view(-1)
        n = flat.numel()
        if max_coords is None or n <= max_coords:
            coords = range(n)
        else:
            coords = torch.randperm(n, generator=gen)[:max_coords].tolist()
        for i in coords:
            orig = flat[i].item()
            flat[i] = orig + h
            fp = feval()
            flat[i] = orig - h
            fm = feval()
            flat[i] = orig
            fd = (fp - fm) / (2 * h)
            ag = float(g.view(-1)[i])
            if abs(fd - ag) > atol + rtol * max(abs(fd), abs(ag)):
                failures.append((ti, i, ag, fd))
        direction = torch.randn(t.shape, generator=gen, dtype=t.dtype)
        direction /= direction.norm()
        orig = t.data.clone()
        with torch.no_grad():
            t.data.copy_(orig + h * direction)
            fp = feval()
            t.data.copy_(orig - h * direction)
            fm = feval()
            t.data.copy_(orig)
        fd = (fp - fm) / (2 * h)
        ag = float((g * direction).sum())
        if abs(fd - ag) > atol + rtol * max(abs(fd), abs(ag)):
            failures.append((ti, "directional", ag, fd))
    return failures
