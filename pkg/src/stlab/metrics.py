"""Training losses (cross-entropy, scaled-MSE similarity) and eval metrics.

BLEU here is a fixed documented variant, not a drop-in for sacrebleu:
corpus-level BLEU-4 with brevity penalty, raw unigram precision, and
add-one smoothing on the n >= 2 precisions (so an absent n-gram order
contributes (0+1)/(0+1) = 1). Scores are on the 0-100 scale. WER is
plain Levenshtein distance over words divided by reference length.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

SIMILARITY_SCALE = 100.0


def cross_entropy(logits: Tensor, targets: Sequence[int], mask: Sequence[int] | None = None) -> Tensor:
    """Mean -log softmax(logits)[t, targets[t]] over unmasked positions."""
    u, v = logits.shape
    if len(targets) != u:
        raise ShapeError(f"cross_entropy: {len(targets)} targets for {u} logit rows")
    if any(t < 0 or t >= v for t in targets):
        raise ShapeError("cross_entropy: target id outside logit width")
    keep = [bool(m) for m in mask] if mask is not None else [True] * u
    if len(keep) != u:
        raise ShapeError("cross_entropy: mask length mismatch")
    rows = [t for t in range(u) if keep[t]]
    if not rows:
        raise ShapeError("cross_entropy: every position is masked")
    logp = ad.log_softmax_rows(logits)
    sel = np.zeros((u, v))
    for t in rows:
        sel[t, targets[t]] = 1.0 / len(rows)
    return ad.scale(ad.sum_all(ad.mul(logp, Tensor(sel))), -1.0)


def pool_encoder_states(states: Tensor, valid_len: int | None = None) -> Tensor:
    """Mean of the first valid_len rows (default: all rows)."""
    if states.data.ndim != 2:
        raise ShapeError("pool_encoder_states expects S x H")
    n = states.shape[0] if valid_len is None else valid_len
    if n < 1 or n > states.shape[0]:
        raise ShapeError(f"pool_encoder_states: valid_len {n} outside 1..{states.shape[0]}")
    return ad.mean_rows(ad.slice_rows(states, 0, n))


def similarity_loss(audio_pool: Tensor, text_pool: Tensor) -> Tensor:
    """100 x mean squared difference between two pooled width-H vectors."""
    if audio_pool.shape != text_pool.shape or audio_pool.data.ndim != 1:
        raise ShapeError(
            f"similarity_loss: widths {audio_pool.shape} vs {text_pool.shape}"
        )
    diff = audio_pool - text_pool
    return ad.scale(ad.mean_all(ad.square(diff)), SIMILARITY_SCALE)


def wer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    """Word-level Levenshtein distance divided by reference length."""
    if len(ref) == 0:
        raise ShapeError("wer: empty reference")
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (0 if r == h else 1),
            )
        prev = cur
    return prev[-1] / len(ref)


def _ngram_counts(seq: Sequence[str], n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU-4 on a 0-100 scale; see module docstring for smoothing."""
    if len(refs) != len(hyps):
        raise ShapeError(f"bleu: {len(refs)} references vs {len(hyps)} hypotheses")
    if not refs:
        raise ShapeError("bleu: empty corpus")
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    if hyp_len == 0:
        return 0.0
    log_parts = []
    for n in range(1, 5):
        clipped = 0
        total = 0
        for ref, hyp in zip(refs, hyps):
            h_counts = _ngram_counts(hyp, n)
            r_counts = _ngram_counts(ref, n)
            clipped += sum(min(c, r_counts[g]) for g, c in h_counts.items())
            total += sum(h_counts.values())
        if n == 1:
            if clipped == 0:
                return 0.0
            p = clipped / total
        else:
            p = (clipped + 1) / (total + 1)
        log_parts.append(math.log(p))
    geo = math.exp(sum(log_parts) / 4.0)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * geo
