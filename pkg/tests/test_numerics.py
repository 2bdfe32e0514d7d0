import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sate import numerics as nx
from sate.numerics import Tensor, grad_check


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_matmul_identity_and_scalar_rule():
    out = nx.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
    np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    a = Tensor([[2.0]], requires_grad=True)
    b = Tensor([[3.0]], requires_grad=True)
    c = a @ b
    assert c.item() == 6.0
    nx.backward(c.sum())
    np.testing.assert_array_equal(a.grad, [[3.0]])
    np.testing.assert_array_equal(b.grad, [[2.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(nx.DimensionError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_finite_differences():
    rng = np.random.default_rng(0)
    w = Tensor(rand(rng, 3, 2))
    report = grad_check(lambda a, b: (a @ b * w).sum(), [rand(rng, 3, 4), rand(rng, 4, 2)])
    assert report.max_rel_error <= 1e-3


def test_batched_matmul_finite_differences():
    rng = np.random.default_rng(1)
    w = rand(rng, 2, 3, 4)
    report = grad_check(lambda a, b: ((a @ b) * Tensor(w)).sum(), [rand(rng, 2, 3, 5), rand(rng, 5, 4)])
    assert report.passed


def test_softmax_examples():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0, 0, 0])).data, [0.25] * 4)
    big = nx.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [1.0, 0.0], atol=1e-7)
    assert np.all(np.isfinite(nx.log_softmax(Tensor([1000.0, 0.0])).data))


def test_log_softmax_self_consistent():
    v = np.random.default_rng(2).standard_normal(5)
    np.testing.assert_allclose(np.exp(nx.log_softmax(Tensor(v)).data), nx.softmax(Tensor(v)).data, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_softmax_rows_are_distributions(n, m, seed):
    x = np.random.default_rng(seed).normal(0, 5, size=(n, m))
    for axis in (0, 1):
        p = nx.softmax(Tensor(x), axis=axis).data
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=axis), 1.0, atol=1e-6)


def test_relu_example():
    np.testing.assert_array_equal(nx.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])


def test_label_smoothing_reduces_to_nll():
    p = 0.7
    logits = Tensor(np.log([[p, 0.1, 0.1, 0.1]]))
    loss = nx.cross_entropy_with_label_smoothing(logits, [0], eps=0.0)
    assert loss.item() == pytest.approx(-np.log(p), abs=1e-6)


def test_label_smoothing_uniform_logits():
    # uniform over 4 classes: every NLL is ln 4, so any mix of them is ln 4
    loss = nx.cross_entropy_with_label_smoothing(Tensor(np.zeros((3, 4))), [0, 2, 3], eps=0.1)
    assert loss.item() == pytest.approx(1.3862944, abs=1e-6)


def test_label_smoothing_matches_formula_and_gradient():
    rng = np.random.default_rng(3)
    logits = rand(rng, 5, 6)
    target = np.array([0, 5, 2, 2, 1])
    lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    expected = np.mean(-0.9 * lp[np.arange(5), target] - 0.1 * lp.mean(1))
    got = nx.cross_entropy_with_label_smoothing(Tensor(logits), target, 0.1).item()
    assert got == pytest.approx(expected, rel=1e-6)
    report = grad_check(lambda z: nx.cross_entropy_with_label_smoothing(z, target, 0.1), [logits])
    assert report.passed


def test_label_smoothing_index_error():
    with pytest.raises(IndexError):
        nx.cross_entropy_with_label_smoothing(Tensor(np.zeros((1, 4))), [4], 0.1)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nx.ContractError):
        nx.backward(x * 2.0)


def test_backward_accumulates_without_reset():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (x * x).sum()
    nx.backward(loss)
    nx.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * 2 * x.data)


def test_backward_visits_each_node_once_in_reverse_order():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = x * x
    z = (y + y * x).sum()
    visited = []
    nx.backward(z, visit=visited.append)
    ids = [n._id for n in visited]
    assert len(ids) == len(set(ids))
    assert ids == sorted(ids, reverse=True)
    tape = nx.Tape.from_output(z)
    for i, node in enumerate(tape.records):
        assert all(p._id < node._id for p in node._parents)


def test_linearity_of_backward():
    rng = np.random.default_rng(4)
    w = Tensor(rand(rng, 4, 3), requires_grad=True)
    x = Tensor(rand(rng, 5, 4))

    def l1():
        return nx.log_softmax(x @ w, axis=1).sum()

    def l2():
        return (nx.relu(x @ w) * 3.0).mean()

    nx.backward(l1() + l2())
    joint = w.grad.copy()
    w.grad = None
    nx.backward(l1())
    nx.backward(l2())
    np.testing.assert_allclose(joint, w.grad, atol=1e-6)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with nx.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_debug_mode_detects_nonfinite():
    nx.set_debug(True)
    try:
        with pytest.raises(nx.NonFiniteError):
            nx.log(Tensor([0.0]))
    finally:
        nx.set_debug(False)
    assert np.isneginf(nx.log(Tensor([0.0])).data[0])


def test_dropout_mask_inverted_scaling():
    rng = np.random.default_rng(5)
    m = nx.dropout_mask((200, 200), 0.1, rng)
    assert set(np.unique(m)) <= {0.0, np.float32(1 / 0.9)}
    assert abs(m.mean() - 1.0) < 0.02
    x = Tensor(np.ones(4))
    assert nx.dropout(x, 0.5, rng, training=False) is x


def test_embed_lookup_and_bounds():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = nx.embed_lookup(table, [[1, 1], [3, 0]])
    np.testing.assert_array_equal(out.data[0, 0], [3, 4, 5])
    nx.backward(out.sum())
    np.testing.assert_array_equal(table.grad[:, 0], [1, 2, 0, 1])
    with pytest.raises(IndexError):
        nx.embed_lookup(table, [4])


# every differentiable op, dims <= 8, central differences h=1e-3
OP_CASES = {
    "add_broadcast": (lambda a, b: ((a + b) * Tensor(W["w34"])).sum(), [(3, 4), (4,)]),
    "mul_broadcast": (lambda a, b: (a * b).sum(), [(3, 4), (3, 1)]),
    "div": (lambda a, b: (a / (b * b + Tensor(np.ones((3, 4))))).sum(), [(3, 4), (3, 4)]),
    "sub_scale_neg": (lambda a: ((2.5 - a) * Tensor(W["w34"]) - a / 3.0).sum(), [(3, 4)]),
    "sum_mean_axes": (lambda a: (a.sum(axis=1) * Tensor(W["w3"])).sum() + a.mean(axis=0).sum() * 2.0, [(3, 4)]),
    "reshape_transpose": (lambda a: (a.reshape(4, 3).transpose() * Tensor(W["w34"])).sum(), [(3, 4)]),
    "getitem_basic": (lambda a: (a[1:, ::2] * Tensor(W["w22"])).sum(), [(3, 4)]),
    "getitem_advanced": (lambda a: (a[np.array([0, 2, 0]), np.array([1, 1, 3])] * Tensor(W["w3"])).sum(), [(3, 4)]),
    "concat_stack": (lambda a, b: (nx.stack([nx.concat([a, b], 0), nx.concat([b, a], 0)], 0) * Tensor(W["w264"])).sum(), [(3, 4), (3, 4)]),
    "where": (lambda a, b: (nx.where(W["mask34"], a, b) * Tensor(W["w34"])).sum(), [(3, 4), (3, 4)]),
    "exp_log": (lambda a: (nx.log(nx.exp(a) + 1.0) * Tensor(W["w34"])).sum(), [(3, 4)]),
    "relu": (lambda a: (nx.relu(a) * Tensor(W["w34"])).sum(), [(3, 4)]),
    "softmax": (lambda a: (nx.softmax(a, axis=1) * Tensor(W["w34"])).sum(), [(3, 4)]),
    "softmax_axis0": (lambda a: (nx.softmax(a, axis=0) * Tensor(W["w34"])).sum(), [(3, 4)]),
    "log_softmax": (lambda a: (nx.log_softmax(a, axis=-1) * Tensor(W["w34"])).sum(), [(3, 4)]),
    "logsumexp": (lambda a: (nx.logsumexp(a, axis=1) * Tensor(W["w3"])).sum(), [(3, 4)]),
    "layer_norm": (lambda a, g, b: (nx.layer_norm(a, g, b) * Tensor(W["w34"])).sum(), [(3, 4), (4,), (4,)]),
    "embed_lookup": (lambda t: (nx.embed_lookup(t, np.array([[0, 2], [2, 1]])) * Tensor(W["w224"])).sum(), [(3, 4)]),
    "dropout_fixed_mask": (lambda a: (a * Tensor(W["drop34"]) * Tensor(W["w34"])).sum(), [(3, 4)]),
    "cross_entropy": (lambda a: nx.cross_entropy_with_label_smoothing(a, [1, 0, 3], 0.1, np.array([1.0, 0.0, 1.0])), [(3, 4)]),
}
_wr = np.random.default_rng(99)
W = {
    "w34": _wr.standard_normal((3, 4)),
    "w3": _wr.standard_normal(3),
    "w22": _wr.standard_normal((2, 2)),
    "w264": _wr.standard_normal((2, 6, 4)),
    "w224": _wr.standard_normal((2, 2, 4)),
    "mask34": _wr.random((3, 4)) > 0.5,
    "drop34": nx.dropout_mask((3, 4), 0.3, _wr, np.float64),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    f, shapes = OP_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    point = [rng.standard_normal(s) for s in shapes]
    report = grad_check(f, point, h=1e-3, tol=1e-3)
    assert report.passed, (name, report.per_input)


def test_float32_default_and_float64_preserved():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64
    assert (Tensor(np.zeros(2, np.float32)) + 1.0).dtype == np.float32
