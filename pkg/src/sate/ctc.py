"""Connectionist temporal classification: loss, oracle, decoding.

Blank is class 0; labels are 1..|V|.  The loss runs the forward recursion
over the blank-interleaved label sequence in the log domain, built from
differentiable tensor ops so gradients come from the tape.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import numerics as nx
from .numerics import ContractError, DimensionError, Tensor

BLANK = 0
# stands in for log(0); finite so tensors stay finite
LOG_ZERO = -1e30
INFEASIBLE = 1e29


def min_frames(labels) -> int:
    """Fewest frames able to emit ``labels``: one per label plus one per adjacent repeat."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def is_feasible(n_frames: int, labels) -> bool:
    return n_frames >= min_frames(labels)


def collapse(path) -> list[int]:
    """Merge repeated symbols, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != BLANK:
            out.append(p)
        prev = p
    return out


def _extended(labels) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, BLANK, dtype=np.int64)
    ext[1::2] = labels
    return ext


def ctc_loss_batch(
    log_probs: Tensor,
    frame_lengths,
    labels: list,
) -> tuple[Tensor, np.ndarray]:
    """Per-utterance CTC negative log-likelihoods for a padded batch.

    ``log_probs`` is (B, T, C) of per-frame log distributions, ``labels`` a
    list of B label sequences.  Returns ``(losses, feasible)``; infeasible
    utterances get a loss of 0 on the tape and ``feasible[b] = False`` so
    callers can leave them out of averages.
    """
    if log_probs.ndim != 3:
        raise DimensionError(f"expected (B, T, C) log-probs, got {log_probs.shape}")
    B, T, C = log_probs.shape
    frame_lengths = np.asarray(frame_lengths, dtype=np.int64)
    if frame_lengths.shape != (B,) or len(labels) != B:
        raise DimensionError("batch size mismatch between log-probs, lengths and labels")
    if frame_lengths.max(initial=0) > T:
        raise DimensionError("frame length exceeds padded extent")
    S = 2 * max((len(l) for l in labels), default=0) + 1
    dtype = log_probs.dtype

    ext = np.zeros((B, S), dtype=np.int64)
    state_ok = np.zeros((B, S), dtype=bool)
    skip_ok = np.zeros((B, S), dtype=bool)
    final_ok = np.zeros((B, S), dtype=bool)
    feasible = np.zeros(B, dtype=bool)
    for b, lab in enumerate(labels):
        lab = np.asarray(lab, dtype=np.int64)
        if lab.size and (lab.min() < 1 or lab.max() >= C):
            raise IndexError(f"label ids must lie in [1, {C})")
        e = _extended(lab)
        n = e.size
        ext[b, :n] = e
        state_ok[b, :n] = True
        # s -> s+2 jump allowed onto a label that differs from the previous label
        for s in range(3, n, 2):
            skip_ok[b, s] = e[s] != e[s - 2]
        final_ok[b, n - 1] = True
        if n > 1:
            final_ok[b, n - 2] = True
        feasible[b] = is_feasible(int(frame_lengths[b]), lab) and frame_lengths[b] > 0

    if np.isneginf(log_probs.data).any():
        # -inf * 0 in the one-hot product would give nan
        floor = Tensor(np.full(log_probs.shape, LOG_ZERO, dtype=dtype))
        log_probs = nx.where(log_probs.data > LOG_ZERO, log_probs, floor)
    onehot = np.zeros((B, C, S), dtype=dtype)
    onehot[np.arange(B)[:, None], ext, np.arange(S)[None, :]] = 1.0
    emit = log_probs @ Tensor(onehot)  # (B, T, S): log P(ext_s at frame t)

    dead = Tensor(np.where(state_ok, 0.0, LOG_ZERO).astype(dtype))
    no_skip = Tensor(np.where(skip_ok, 0.0, LOG_ZERO).astype(dtype))
    pad1 = Tensor(np.full((B, 1), LOG_ZERO, dtype=dtype))
    pad2 = Tensor(np.full((B, 2), LOG_ZERO, dtype=dtype))

    init = np.full((B, S), LOG_ZERO, dtype=dtype)
    init[:, :2] = 0.0
    alpha = emit[:, 0, :] + Tensor(init) + dead
    for t in range(1, T):
        stay = alpha
        step = nx.concat([pad1, alpha[:, : S - 1]], axis=1)
        jump = nx.concat([pad2, alpha[:, : S - 2]], axis=1) + no_skip if S > 2 else None
        cands = [stay, step] if jump is None else [stay, step, jump]
        nxt = nx.logsumexp(nx.stack(cands, axis=0), axis=0) + emit[:, t, :] + dead
        alpha = nx.where((t < frame_lengths)[:, None], nxt, alpha)

    end = Tensor(np.where(final_ok, 0.0, LOG_ZERO).astype(dtype))
    log_lik = nx.logsumexp(alpha + end, axis=1)
    losses = nx.where(feasible, -log_lik, Tensor(np.zeros(B, dtype=dtype)))
    return losses, feasible


def ctc_loss(log_probs: Tensor, labels) -> Tensor:
    """CTC loss of one utterance; ``log_probs`` is (T, C).

    Infeasible instances (too few frames) return a constant +inf tensor.
    """
    if log_probs.ndim != 2:
        raise DimensionError(f"expected (T, C) log-probs, got {log_probs.shape}")
    T = log_probs.shape[0]
    labels = list(labels)
    if not is_feasible(T, labels):
        return Tensor(np.array(np.inf, dtype=log_probs.dtype))
    losses, _ = ctc_loss_batch(log_probs.reshape(1, *log_probs.shape), [T], [labels])
    return losses.reshape(())


def brute_force_ctc(log_probs: np.ndarray, labels, limit: int = 10**6) -> float:
    """-log of the summed probability of every path collapsing to ``labels``.

    Enumerates all C**T paths literally; refuses instances above ``limit``.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    T, C = lp.shape
    if C**T > limit:
        raise ContractError(f"{C}^{T} paths exceeds the enumeration limit {limit}")
    target = [int(l) for l in labels]
    terms = []
    for path in itertools.product(range(C), repeat=T):
        if collapse(path) == target:
            terms.append(sum(lp[t, p] for t, p in enumerate(path)))
    if not terms:
        return math.inf
    m = max(terms)
    return -(m + math.log(sum(math.exp(x - m) for x in terms)))


def ctc_greedy_decode(log_probs, length: int | None = None) -> list[int]:
    """Frame-wise argmax, collapsed.  Accepts (T, C) arrays or tensors."""
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    if length is not None:
        lp = lp[:length]
    return collapse(lp.argmax(axis=-1))


def ctc_posteriors(hidden: Tensor, norm, proj) -> Tensor:
    """Per-frame log distribution over blank + vocabulary from the CTC head."""
    return nx.log_softmax(proj(norm(hidden)), axis=-1)
