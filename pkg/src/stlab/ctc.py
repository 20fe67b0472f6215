"""CTC loss, greedy decoding, and label-run compression.

The loss marginalizes over all frame alignments with a log-space
forward-backward over the blank-extended label sequence. Decoding is
greedy: per-frame argmax, merge repeats, drop blanks. Compression
averages encoder rows over each run of identical argmax labels,
shrinking T frames to R segment vectors (one per run, blank runs
included unless dropped by flag).

Blank is always the highest class id (column V in a T x (V+1) grid);
real label ids are smaller than blank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, node
from .errors import InfeasibleAlignmentError, ShapeError, VocabError

NEG_INF = -np.inf


def extended_labels(labels: Sequence[int], blank: int) -> np.ndarray:
    """[u1, u2] -> [blank, u1, blank, u2, blank]."""
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit the labels: U plus one blank per adjacent repeat."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_forward_backward(
    log_probs: np.ndarray, labels: Sequence[int], blank: int
) -> tuple[float, np.ndarray]:
    """Negative log likelihood and its gradient wrt the log-prob grid.

    log_probs (T, V+1) rows are log distributions; labels are blank-free
    ids < blank. Raises InfeasibleAlignmentError when T < min_frames.
    """
    y = np.asarray(log_probs, dtype=np.float64)
    if y.ndim != 2:
        raise ShapeError("ctc: log_probs must be T x (V+1)")
    t_len, n_class = y.shape
    labels = list(labels)
    if len(labels) == 0:
        raise VocabError("ctc: empty label sequence")
    if any(u < 0 or u >= blank for u in labels):
        raise VocabError("ctc: label ids must lie below the blank id")
    if blank >= n_class:
        raise VocabError("ctc: blank id outside class range")
    if t_len < min_frames(labels):
        raise InfeasibleAlignmentError(
            f"ctc: {t_len} frames cannot emit {len(labels)} labels "
            f"(needs {min_frames(labels)})"
        )
    ext = extended_labels(labels, blank)
    s_len = len(ext)
    # skip[s]: a path may hop from s-2 straight to s (distinct non-blank labels)
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = y[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = y[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        stay = prev
        step = np.full(s_len, NEG_INF)
        step[1:] = prev[:-1]
        hop = np.full(s_len, NEG_INF)
        hop[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        alpha[t] = y[t, ext] + _lse3(stay, step, hop)

    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + y[t + 1, ext]
        stay = nxt
        step = np.full(s_len, NEG_INF)
        step[:-1] = nxt[1:]
        hop = np.full(s_len, NEG_INF)
        hop[:-2] = np.where(skip[2:], nxt[2:], NEG_INF)
        beta[t] = _lse3(stay, step, hop)

    tail = alpha[t_len - 1, s_len - 1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[t_len - 1, s_len - 2])
    log_p = float(tail)
    if not np.isfinite(log_p):
        raise InfeasibleAlignmentError("ctc: no feasible path has nonzero probability")

    # beta excludes the emission at t, so alpha+beta counts each emission
    # once and dNLL/dy[t,k] = -exp(logsumexp_{s: ext[s]=k}(alpha+beta) - logP)
    gamma = alpha + beta
    grad = np.zeros_like(y)
    for k in np.unique(ext):
        cols = gamma[:, ext == k]
        m = cols.max(axis=1)
        with np.errstate(invalid="ignore"):
            acc = m + np.log(np.exp(cols - m[:, None]).sum(axis=1))
        acc = np.where(np.isfinite(m), acc, NEG_INF)
        grad[:, k] = -np.exp(acc - log_p)
    return -log_p, grad


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(np.isfinite(m), out, NEG_INF)


def ctc_loss(log_probs: Tensor, labels: Sequence[int], blank: int) -> Tensor:
    """Tape node over ctc_forward_backward."""
    loss, grad = ctc_forward_backward(log_probs.data, labels, blank)
    return node(np.asarray(loss), (log_probs,), lambda g: (grad * float(g),))


def greedy_path(scores: np.ndarray) -> list[int]:
    """Per-row argmax labels; ties resolve to the lowest id."""
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ShapeError("greedy_path expects a non-empty T x K matrix")
    return [int(i) for i in scores.argmax(axis=1)]


def collapse(frame_labels: Sequence[int], blank: int) -> list[int]:
    """Merge adjacent duplicates, then drop blanks."""
    out: list[int] = []
    prev = None
    for lab in frame_labels:
        if lab != prev and lab != blank:
            out.append(int(lab))
        prev = lab
    return out


@dataclass(frozen=True)
class SegmentMap:
    """Runs (start, end_exclusive, label) covering [0, T) with distinct neighbors."""

    runs: tuple[tuple[int, int, int], ...]

    @property
    def num_frames(self) -> int:
        return self.runs[-1][1] if self.runs else 0

    def debug_text(self) -> str:
        """'label:start-end,...' with exclusive ends, e.g. '0:0-2,4:2-3'."""
        return ",".join(f"{lab}:{s}-{e}" for s, e, lab in self.runs)


def label_runs(frame_labels: Sequence[int]) -> SegmentMap:
    runs: list[tuple[int, int, int]] = []
    start = 0
    for t in range(1, len(frame_labels) + 1):
        if t == len(frame_labels) or frame_labels[t] != frame_labels[start]:
            runs.append((start, t, int(frame_labels[start])))
            start = t
    return SegmentMap(tuple(runs))


def compress(
    hidden: Tensor,
    frame_labels: Sequence[int],
    blank: int | None = None,
    drop_blank_segments: bool = False,
) -> tuple[Tensor, SegmentMap]:
    """Average hidden rows over each label run; grads spread evenly per run.

    Returns R x H (R = kept runs) and the full SegmentMap. Blank runs
    stay unless drop_blank_segments; dropping every run is an error.
    """
    if hidden.data.ndim != 2 or hidden.shape[0] == 0:
        raise ShapeError("compress expects a non-empty T x H matrix")
    if len(frame_labels) != hidden.shape[0]:
        raise ShapeError("compress: one label per frame required")
    seg_map = label_runs(frame_labels)
    if drop_blank_segments:
        if blank is None:
            raise VocabError("compress: drop_blank_segments needs the blank id")
        kept = [r for r in seg_map.runs if r[2] != blank]
        if not kept:
            raise InfeasibleAlignmentError("compress: all segments are blank")
    else:
        kept = list(seg_map.runs)
    out = np.stack([hidden.data[s:e].mean(axis=0) for s, e, _ in kept])

    def vjp(g):
        full = np.zeros_like(hidden.data)
        for r, (s, e, _) in enumerate(kept):
            full[s:e] = g[r] / (e - s)
        return (full,)

    return node(out, (hidden,), vjp), seg_map
