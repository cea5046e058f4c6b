import numpy as np
import pytest

from cmrecon import ops
from cmrecon.autodiff import (AutodiffError, GradGraph, ShapeError, Tensor,
                              grad_check, result_graph)
from cmrecon.rng import RngStream

RNG = RngStream(40, "test.autodiff")


def test_tensor_is_4d_float64():
    t = Tensor(np.ones((2, 3, 4, 5)))
    assert t.shape == (2, 3, 4, 5)
    assert t.data.dtype == np.float64
    assert not t.tracked
    with pytest.raises(ShapeError):
        Tensor(np.ones((4, 4)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((1, 0, 2, 2)))


def test_item_requires_scalar_shape():
    assert Tensor(np.full((1, 1, 1, 1), 3.5)).item() == 3.5
    with pytest.raises(ShapeError):
        Tensor(np.ones((1, 1, 2, 1))).item()


def test_leaf_tracks_and_constant_does_not():
    g = GradGraph()
    w = g.leaf(np.ones((1, 1, 2, 2)))
    c = Tensor(np.ones((1, 1, 2, 2)))
    assert w.tracked and not c.tracked
    assert result_graph([c, w]) is g
    assert result_graph([c]) is None


def test_backward_chain_rule_scalar():
    # y = sum((2x)^2) -> dy/dx = 8x
    g = GradGraph()
    x = g.leaf(RNG.child("chain").normal((1, 1, 3, 3)))
    y = ops.tsum(ops.mul(ops.scale(x, 2.0), ops.scale(x, 2.0)))
    grads = g.backward(y)
    assert np.allclose(grads[x], 8.0 * x.data, atol=1e-12)


def test_grads_zero_for_unreached_leaf():
    g = GradGraph()
    x = g.leaf(np.ones((1, 1, 2, 2)))
    unused = g.leaf(np.ones((1, 1, 2, 2)))
    grads = g.backward(ops.tsum(x))
    assert np.array_equal(grads[unused], np.zeros((1, 1, 2, 2)))
    assert np.array_equal(grads[x], np.ones((1, 1, 2, 2)))


def test_untracked_tensor_has_no_grads_entry():
    g = GradGraph()
    x = g.leaf(np.ones((1, 1, 2, 2)))
    grads = g.backward(ops.tsum(x))
    with pytest.raises(AutodiffError):
        grads[Tensor(np.ones((1, 1, 2, 2)))]


def test_graph_is_consumed_by_backward():
    g = GradGraph()
    x = g.leaf(np.ones((1, 1, 2, 2)))
    g.backward(ops.tsum(x))
    with pytest.raises(AutodiffError):
        g.leaf(np.ones((1, 1, 2, 2)))
    with pytest.raises(AutodiffError):
        g.backward(ops.tsum(x))


def test_backward_rejects_foreign_and_nonscalar_loss():
    g1, g2 = GradGraph(), GradGraph()
    x1 = g1.leaf(np.ones((1, 1, 2, 2)))
    x2 = g2.leaf(np.ones((1, 1, 2, 2)))
    y2 = ops.tsum(x2)
    with pytest.raises(AutodiffError):
        g1.backward(y2)
    with pytest.raises(ShapeError):
        g1.backward(x1)


def test_result_graph_rejects_mixed_graphs():
    g1, g2 = GradGraph(), GradGraph()
    x1 = g1.leaf(np.ones((1, 1, 2, 2)))
    x2 = g2.leaf(np.ones((1, 1, 2, 2)))
    with pytest.raises(AutodiffError):
        result_graph([x1, x2])


def test_operator_sugar_matches_ops():
    g = GradGraph()
    a = g.leaf(RNG.child("sugar.a").normal((1, 2, 3, 3)))
    b = Tensor(RNG.child("sugar.b").normal((1, 2, 3, 3)))
    assert np.array_equal((a + b).data, a.data + b.data)
    assert np.array_equal((a - b).data, a.data - b.data)
    assert np.array_equal((a * b).data, a.data * b.data)
    assert np.array_equal((2.0 * a).data, 2.0 * a.data)
    assert np.array_equal((a + 1.5).data, a.data + 1.5)
    assert np.array_equal((-a).data, -a.data)


def test_grad_check_accepts_correct_gradient():
    x0 = RNG.child("gc.ok").normal((1, 2, 4, 4))
    err = grad_check(lambda x: ops.tsum(ops.mul(x, ops.sigmoid(x))), x0)
    assert err < 1e-7


def test_grad_check_catches_wrong_gradient():
    # a deliberately wrong backward: claims d(sum(x^2)) = x instead of 2x
    def broken(x):
        g = result_graph([x])
        out = np.sum(x.data * x.data).reshape(1, 1, 1, 1)
        if g is None:
            return Tensor(out)
        return g.record(out, [x], lambda grad: [grad * x.data])
    x0 = RNG.child("gc.bad").normal((1, 1, 3, 3)) + 3.0
    assert grad_check(broken, x0) > 1e-2


def test_grad_check_step_bounds():
    x0 = np.ones((1, 1, 2, 2))
    with pytest.raises(ValueError):
        grad_check(lambda x: ops.tsum(x), x0, step=1e-2)


def test_interior_gradients_are_freed_but_leaves_kept():
    g = GradGraph()
    x = g.leaf(np.full((1, 1, 2, 2), 0.5))
    h = ops.relu(x)
    y = ops.tsum(h)
    grads = g.backward(y)
    # interior node gradients are dropped after the sweep to bound memory
    assert x in grads
    assert h not in grads
