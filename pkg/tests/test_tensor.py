"""Tape and backward semantics."""

import numpy as np
import pytest

from newvision import errors, ops
from newvision.tensor import Tape, Tensor, backward


def test_sum_of_elementwise_product_grad_is_other_operand():
    tape = Tape()
    a = tape.leaf(np.array([1.0, 2.0, 3.0], dtype=np.float32),
                  requires_grad=True)
    b = tape.leaf(np.array([4.0, 5.0, 6.0], dtype=np.float32),
                  requires_grad=True)
    loss = ops.reduce_sum(ops.mul(a, b))
    grads = backward(tape, loss)
    np.testing.assert_array_equal(grads[a.node_id].data, b.data)
    np.testing.assert_array_equal(grads[b.node_id].data, a.data)


def test_matmul_chain_matches_finite_differences():
    from newvision import gradcheck
    rng = np.random.default_rng(0)
    arrays = [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (4, 2))]

    def build(tape, leaves):
        a, b = leaves
        return ops.reduce_sum(ops.matmul(a, b))

    assert gradcheck.check_full(build, arrays) < 1e-3


def test_loss_with_no_tracked_leaves_gives_empty_map():
    tape = Tape()
    a = tape.leaf(np.ones(3, dtype=np.float32))
    loss = ops.reduce_sum(ops.mul(a, a))
    assert backward(tape, loss) == {}


def test_non_scalar_loss_rejected():
    tape = Tape()
    a = tape.leaf(np.ones(3, dtype=np.float32), requires_grad=True)
    y = ops.mul(a, a)
    with pytest.raises(errors.NotScalar):
        backward(tape, y)


def test_detached_loss_rejected():
    tape = Tape()
    tape.leaf(np.ones(3, dtype=np.float32), requires_grad=True)
    constant = ops.reduce_sum(Tensor(np.ones(3, dtype=np.float32)))
    with pytest.raises(errors.DetachedLoss):
        backward(tape, constant)
    other = Tape()
    b = other.leaf(np.ones((), dtype=np.float32), requires_grad=True)
    with pytest.raises(errors.DetachedLoss):
        backward(tape, b)


def test_backward_twice_is_identical():
    rng = np.random.default_rng(1)
    tape = Tape()
    a = tape.leaf(rng.uniform(-1, 1, (4, 4)).astype(np.float32),
                  requires_grad=True)
    h = ops.gelu(ops.matmul(a, a))
    loss = ops.reduce_sum(ops.softmax(h, axis=1))
    first = backward(tape, loss)[a.node_id].data.copy()
    second = backward(tape, loss)[a.node_id].data
    np.testing.assert_array_equal(first, second)


def test_unused_tracked_leaf_gets_zeros_untracked_absent():
    tape = Tape()
    used = tape.leaf(np.ones(2, dtype=np.float32), requires_grad=True)
    unused = tape.leaf(np.ones(5, dtype=np.float32), requires_grad=True)
    untracked = tape.leaf(np.ones(2, dtype=np.float32))
    loss = ops.reduce_sum(ops.mul(used, untracked))
    grads = backward(tape, loss)
    np.testing.assert_array_equal(grads[unused.node_id].data, np.zeros(5))
    assert untracked.node_id not in grads
    assert used.node_id in grads


def test_mixing_tapes_is_an_error():
    t1, t2 = Tape(), Tape()
    a = t1.leaf(np.ones(2, dtype=np.float32), requires_grad=True)
    b = t2.leaf(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(errors.ConfigError):
        ops.add(a, b)


def test_detach_cuts_gradient_flow():
    tape = Tape()
    a = tape.leaf(np.array([2.0, 3.0], dtype=np.float32), requires_grad=True)
    y = ops.mul(a, a.detach())
    grads = backward(tape, ops.reduce_sum(y))
    # only the live factor contributes, so grad is a itself, not 2a
    np.testing.assert_array_equal(grads[a.node_id].data, a.data)


def test_constant_graph_stays_off_tape():
    a = Tensor(np.ones((2, 2), dtype=np.float32))
    out = ops.matmul(a, a)
    assert out.tape is None and out.node_id is None


def test_integer_input_becomes_float32():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32


def test_item_requires_scalar():
    with pytest.raises(errors.NotScalar):
        Tensor(np.ones(3)).item()
    assert Tensor(np.float32(2.5)).item() == pytest.approx(2.5)
