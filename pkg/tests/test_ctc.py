import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sate import numerics as nx
from sate.ctc import (
    BLANK,
    brute_force_ctc,
    collapse,
    ctc_greedy_decode,
    ctc_loss,
    ctc_loss_batch,
    is_feasible,
    min_frames,
)
from sate.numerics import ContractError, Tensor, grad_check


def log_dists(rng, T, C):
    z = rng.normal(0, 1.5, size=(T, C))
    return z - np.log(np.exp(z).sum(1, keepdims=True))


def test_collapse_merges_then_drops_blanks():
    assert collapse([1, 1, 0, 1, 2, 2, 0]) == [1, 1, 2]
    assert collapse([0, 0]) == []


def test_min_frames_counts_repeats():
    assert min_frames([1, 2, 3]) == 3
    assert min_frames([1, 1, 2, 2]) == 6
    assert is_feasible(3, [1, 1]) and not is_feasible(2, [1, 1])


def test_single_frame_single_label():
    # -ln 0.6
    lp = np.log(np.array([[0.4, 0.6]]))
    assert ctc_loss(Tensor(lp), [1]).item() == pytest.approx(0.5108256, abs=1e-6)


def test_two_frames_uniform():
    # paths aa, a-, -a collapse to "a": 3 * 0.25 = 0.75
    lp = np.log(np.full((2, 2), 0.5))
    assert ctc_loss(Tensor(lp), [1]).item() == pytest.approx(0.2876821, abs=1e-6)
    assert brute_force_ctc(lp, [1]) == pytest.approx(-math.log(0.75), abs=1e-12)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 60:
        T = int(rng.integers(1, 7))
        C = int(rng.integers(2, 5))
        n = int(rng.integers(1, T + 1))
        labels = list(rng.integers(1, C, size=n))
        if not is_feasible(T, labels):
            continue
        lp = log_dists(rng, T, C)
        got = ctc_loss(Tensor(lp), labels).item()
        assert abs(got - brute_force_ctc(lp, labels)) <= 1e-6
        checked += 1


def test_infeasible_is_infinite_and_excluded_from_batch():
    lp = np.log(np.full((2, 3), 1 / 3))
    assert math.isinf(ctc_loss(Tensor(lp), [1, 1]).item())
    batch = np.stack([lp, lp])
    losses, feasible = ctc_loss_batch(Tensor(batch), [2, 2], [[1, 1], [1, 2]])
    assert feasible.tolist() == [False, True]
    assert np.isfinite(losses.data).all()
    assert losses.data[0] == 0.0


def test_batch_padding_does_not_change_losses():
    rng = np.random.default_rng(1)
    a, b = log_dists(rng, 3, 4), log_dists(rng, 5, 4)
    padded = np.zeros((2, 5, 4))
    padded[0, :3] = a
    padded[0, 3:] = log_dists(rng, 2, 4)  # garbage beyond the length
    padded[1] = b
    losses, _ = ctc_loss_batch(Tensor(padded), [3, 5], [[1, 2], [3, 3, 1]])
    assert losses.data[0] == pytest.approx(ctc_loss(Tensor(a), [1, 2]).item(), abs=1e-9)
    assert losses.data[1] == pytest.approx(ctc_loss(Tensor(b), [3, 3, 1]).item(), abs=1e-9)


def test_gradient_through_log_softmax():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((2, 5, 4))
    labels = [[1, 2, 2], [3]]
    report = grad_check(lambda t: ctc_loss_batch(nx.log_softmax(t, -1), [5, 4], labels)[0].sum(), [z])
    assert report.passed, report.per_input


def test_brute_force_refuses_large_instances():
    with pytest.raises(ContractError):
        brute_force_ctc(np.zeros((11, 4)), [1])


def test_greedy_decode_respects_length():
    lp = np.log(np.array([[0.1, 0.9, 0.0 + 1e-9], [0.8, 0.1, 0.1], [0.1, 0.9, 1e-9], [0.1, 0.1, 0.8]]))
    assert ctc_greedy_decode(lp) == [1, 1, 2]
    assert ctc_greedy_decode(lp, 2) == [1]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_probability_over_all_label_sequences_is_at_most_one(T, C, seed):
    # the label sequences partition the paths, so their probabilities sum to 1
    import itertools

    lp = log_dists(np.random.default_rng(seed), T, C)
    total = 0.0
    for n in range(T + 1):
        for labels in itertools.product(range(1, C), repeat=n):
            if n == 0:
                total += math.exp(lp[:, BLANK].sum())
            elif is_feasible(T, labels):
                total += math.exp(-ctc_loss(Tensor(lp), list(labels)).item())
    assert total == pytest.approx(1.0, abs=1e-6)


def test_greedy_decode_examples():
    a, b = 1, 2
    frames = [a, a, BLANK, b]
    lp = np.full((4, 3), -5.0)
    lp[np.arange(4), frames] = 0.0
    assert ctc_greedy_decode(lp) == [a, b]
    assert ctc_greedy_decode(np.tile([0.0, -1.0, -1.0], (5, 1))) == []


def test_greedy_decode_is_collapse_of_argmax():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lp = log_dists(rng, 7, 4)
        assert ctc_greedy_decode(lp) == collapse(lp.argmax(1))


def test_loss_nonnegative_and_zero_for_certain_path():
    rng = np.random.default_rng(4)
    for _ in range(20):
        lp = log_dists(rng, 5, 3)
        assert ctc_loss(Tensor(lp), [1, 2]).item() >= 0.0
    certain = np.log(np.array([[1e-12, 1.0 - 2e-12, 1e-12], [1.0 - 2e-12, 1e-12, 1e-12], [1e-12, 1e-12, 1.0 - 2e-12]]))
    assert ctc_loss(Tensor(certain), [1, 2]).item() == pytest.approx(0.0, abs=1e-9)


def test_appending_certain_blank_frame_keeps_loss():
    rng = np.random.default_rng(5)
    lp = log_dists(rng, 4, 4)
    blank = np.full((1, 4), -np.inf)
    blank[0, BLANK] = 0.0
    longer = np.concatenate([lp, blank])
    for labels in ([1], [2, 3], [1, 1, 2]):
        assert ctc_loss(Tensor(longer), labels).item() == pytest.approx(ctc_loss(Tensor(lp), labels).item(), abs=1e-6)


def test_gradient_on_random_4x4_log_probs():
    rng = np.random.default_rng(6)
    report = grad_check(lambda lp: ctc_loss(lp, [1, 3]), [log_dists(rng, 4, 4)])
    assert report.passed
