import numpy as np
import pytest

from sate.corpus import (
    FIRST_TOKEN,
    SynthSpec,
    collate,
    corpus_hash,
    dataset_hash,
    generate,
    load_corpus,
    make_batches,
    save_corpus,
    spec_augment_lite,
    translate_tokens,
)
from sate.ctc import min_frames
from sate.model import EOS
from sate.nn import conv_output_length

SMALL = SynthSpec(n_train=60, n_dev=10, n_test=10, seed=7)


@pytest.fixture(scope="module")
def small():
    return generate(SMALL)


def test_noise_free_single_token_is_its_prototype():
    spec = SynthSpec(min_len=1, max_len=1, min_frames=1, max_frames=1, noise=0.0, frame_slack=1.0,
                     n_train=5, n_dev=0, n_test=0)
    c = generate(spec)
    for e in c.train:
        # one token needs ceil(T0/4) >= 1, which a single frame satisfies
        assert e.frames.shape == (1, spec.d_feat)
        np.testing.assert_array_equal(e.frames[0], c.prototypes[e.src[0]])


def test_identity_rule_keeps_source():
    spec = SynthSpec(permute=False, reorder_window=1, n_train=20, n_dev=0, n_test=0)
    for e in generate(spec).train:
        assert e.tgt == e.src


def test_permutation_is_bijection(small):
    content = small.permutation[FIRST_TOKEN:]
    assert sorted(content) == list(range(FIRST_TOKEN, FIRST_TOKEN + SMALL.vocab_size))


def test_trigger_reordering_rule():
    perm = np.arange(10)
    assert translate_tokens([2, 3, 4, 5], perm, frozenset({2}), 2) == [3, 2, 4, 5]
    # a block consumed by one trigger does not start another
    assert translate_tokens([2, 2, 2], perm, frozenset({2}), 2) == [2, 2, 2]
    assert translate_tokens([4, 2], perm, frozenset({2}), 2) == [4, 2]


def test_generation_is_deterministic(small):
    again = generate(SMALL)
    for a, b in zip(small.train + small.test, again.train + again.test):
        assert a == b
        assert a.frames.tobytes() == b.frames.tobytes()
    assert corpus_hash(small) == corpus_hash(again)


def test_every_example_is_ctc_feasible(small):
    for e in small.train + small.dev + small.test:
        assert conv_output_length(e.n_frames) >= min_frames(e.src)
        assert SMALL.min_len <= len(e.src) <= SMALL.max_len


def test_collate_shapes_and_masks(small):
    b = collate(small.train[:5])
    assert b.x.shape[0] == 5 and (b.x_lens <= b.x.shape[1]).all()
    assert (b.src_lens <= b.src.shape[1]).all()
    assert b.x_mask.sum(axis=1).tolist() == b.x_lens.tolist()
    for i in range(5):
        n = b.tgt_lens[i]
        assert b.tgt_in[i, 0] == EOS and b.tgt_out[i, n] == EOS
        assert b.tgt_in[i, 1:n + 1].tolist() == b.tgt_out[i, :n].tolist() == list(small.train[i].tgt)
        assert not b.x[i, b.x_lens[i]:].any()


def test_make_batches_respects_budget_and_covers_all(small):
    rng = np.random.default_rng(0)
    batches = make_batches(small.train, 300, rng)
    seen = sorted(int(i) for b in batches for i in b.index)
    assert seen == list(range(len(small.train)))
    for b in batches:
        assert b.size == 1 or b.x.size // b.x.shape[2] <= 300
    again = make_batches(small.train, 300, np.random.default_rng(0))
    assert [b.index.tolist() for b in batches] == [b.index.tolist() for b in again]
    other = make_batches(small.train, 300, np.random.default_rng(1))
    assert sorted(map(tuple, (b.index.tolist() for b in other))) == sorted(map(tuple, (b.index.tolist() for b in batches)))


def test_spec_augment_caps_and_padding(small):
    rng = np.random.default_rng(3)
    b = collate(small.train[:6])
    for _ in range(20):
        out = spec_augment_lite(b.x, rng, b.x_lens, n_time_masks=5, max_time_width=0.3)
        for i, n in enumerate(b.x_lens):
            zero_rows = (out[i, :n] == 0).all(axis=1) & ~(b.x[i, :n] == 0).all(axis=1)
            feat_zeroed = (out[i, :n] == 0).all(axis=0)
            if feat_zeroed.all():
                continue
            assert zero_rows.sum() <= 0.4 * n + 1e-9
        assert not out[:, b.x.shape[1]:].any()
    single = small.train[0].frames
    assert spec_augment_lite(single, rng).shape == single.shape
    assert b.x.any()  # input untouched


def test_corpus_files_roundtrip(tmp_path, small):
    save_corpus(small, tmp_path / "c")
    spec, splits = load_corpus(tmp_path / "c")
    assert spec == SMALL
    assert splits["train"] == small.train
    assert all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(splits["dev"], small.dev))
    assert dataset_hash(tmp_path / "c") == corpus_hash(small)


def test_spec_text_roundtrip_and_validation():
    spec = SynthSpec(noise=0.25, permute=False, seed=9, frame_slack=2.0)
    assert SynthSpec.from_text(spec.to_text() + "# comment\n\n") == spec
    with pytest.raises(ValueError):
        SynthSpec(min_len=5, max_len=4)
    with pytest.raises(ValueError):
        SynthSpec.from_text("bogus=1\n")
