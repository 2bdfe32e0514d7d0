"""Word error rate and corpus BLEU-4 over token sequences."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def _tokens(seq) -> list:
    return seq.split() if isinstance(seq, str) else list(seq)


def edit_distance(hyp, ref) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    hyp, ref = _tokens(hyp), _tokens(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(hyp, ref) -> float:
    """Edit distance over reference length (an empty reference counts as length 1)."""
    ref = _tokens(ref)
    return edit_distance(hyp, ref) / max(len(ref), 1)


def corpus_wer(hyps: Sequence, refs: Sequence) -> float:
    if len(hyps) != len(refs):
        raise ValueError("hypothesis and reference counts differ")
    edits = sum(edit_distance(h, r) for h, r in zip(hyps, refs))
    return edits / max(sum(len(_tokens(r)) for r in refs), 1)


def _ngrams(tokens: list, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyps: Sequence, refs: Sequence, max_order: int = 4):
    """Clipped matches and totals per order, plus hypothesis and reference lengths."""
    if len(hyps) != len(refs):
        raise ValueError("hypothesis and reference counts differ")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        h, r = _tokens(h), _tokens(r)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu4(hyps: Sequence, refs: Sequence, smooth_k: float = 1.0) -> float:
    """Corpus BLEU-4 in [0, 100] with add-k smoothing on orders 2-4."""
    matches, totals, hyp_len, ref_len = bleu_stats(hyps, refs, 4)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n, (m, t) in enumerate(zip(matches, totals), 1):
        if n > 1:
            m, t = m + smooth_k, t + smooth_k
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / 4
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)
