"""Forward semantics and finite-difference checks for every differentiable op."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liqa import tensor as T
from liqa.checks import OP_CASES, corruptible_ops, model_check, op_check
from liqa.gradcheck import gradcheck
from liqa.tensor import Tensor


def leaf(rng, *shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def check(loss_fn, tensors, tol=1e-6):
    params = [(f"x{i}", t) for i, t in enumerate(tensors)]
    report = gradcheck(loss_fn, params, tolerance=tol)
    assert report.passed, "\n".join(report.lines())
    return report


def _proj(out, rng_seed=7):
    w = np.random.default_rng(rng_seed).uniform(-1, 1, size=out.shape)
    return T.sum_(T.mul(out, Tensor(w)))


@pytest.mark.parametrize("case", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(case):
    result = op_check(case)
    assert result.passed, "\n".join(result.report.lines())
    assert result.report.max_rel_error < 1e-6


@pytest.mark.parametrize("head", ["classification", "segmentation"])
def test_end_to_end_models_match_finite_differences(head):
    result = model_check(head)
    assert result.passed, "\n".join(result.report.lines())
    assert len(result.report.entries) > 10


@pytest.mark.parametrize("tag", corruptible_ops())
def test_every_corrupted_op_is_caught(tag):
    cases = [name for name, (t, _, _) in OP_CASES.items() if t == tag]
    with T.corrupt_backward(tag):
        assert not any(op_check(name).passed for name in cases)


def test_matmul_shape_and_error():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4)))
    assert T.matmul(a, b).shape == (2, 4)
    with pytest.raises(T.ShapeError, match="matmul.*3 != 2"):
        T.matmul(a, Tensor(np.ones((2, 4))))


def test_shape_errors_name_the_op():
    with pytest.raises(T.ShapeError, match="add"):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(T.ShapeError, match="conv2d"):
        T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(T.ShapeError, match="reshape"):
        T.reshape(Tensor(np.ones(6)), (4, 2))


def test_softmax_of_equal_logits_is_uniform():
    np.testing.assert_array_equal(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_layer_norm_of_constant_is_zero():
    x = Tensor(np.full((2, 5), 3.25))
    out = T.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    np.testing.assert_array_equal(out.data, 0.0)


def test_conv2d_matches_direct_loops(f64, rng):
    x = rng.uniform(-1, 1, (2, 3, 6, 5))
    w = rng.uniform(-1, 1, (4, 3, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_sum_of_squares_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    T.sum_(T.mul(w, w)).backward()
    np.testing.assert_array_equal(w.grad, [2.0, 4.0])


def test_unused_leaf_gets_no_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    u = Tensor([3.0], requires_grad=True)
    T.sum_(w).backward()
    assert u.grad is None or not np.any(u.grad)


def test_gradients_accumulate_across_uses():
    w = Tensor([3.0], requires_grad=True)
    T.sum_(T.add(T.mul(w, w), T.scale(w, 2.0))).backward()
    np.testing.assert_array_equal(w.grad, [8.0])


def test_frozen_tensor_never_receives_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    frozen = Tensor([5.0, 6.0], requires_grad=False)
    T.sum_(T.mul(w, frozen)).backward()
    assert frozen.grad is None
    np.testing.assert_array_equal(w.grad, [5.0, 6.0])


def test_backward_errors():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(T.GraphError, match="scalar"):
        T.mul(w, w).backward()
    with pytest.raises(T.GraphError, match="attached"):
        T.sum_(Tensor([1.0, 2.0])).backward()


def test_topological_order(rng):
    a = leaf(rng, 3)
    b = T.mul(a, a)
    c = T.add(b, a)
    loss = T.sum_(c)
    order = loss.topological_order()
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]
    assert len(order) == len({id(n) for n in order})


def test_mlp_gradients_match_finite_differences(f64, rng):
    x = Tensor(rng.uniform(-1, 1, (4, 2)))
    w1, b1 = leaf(rng, 2, 1), leaf(rng, 1)
    w2, b2 = leaf(rng, 1, 1), leaf(rng, 1)   # five scalar parameters in total

    def loss():
        h = T.gelu(T.add(T.matmul(x, w1), b1))
        return T.mean(T.mul(T.add(T.matmul(h, w2), b2), T.add(T.matmul(h, w2), b2)))

    check(loss, [w1, b1, w2, b2], tol=1e-6)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2 ** 16))
def test_backward_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    with T.precision(np.float64):
        w = rng.uniform(-1, 1, (3, 4))

        def grad_of(build):
            t = Tensor(w, requires_grad=True)
            build(t).backward()
            return t.grad

        f = lambda t: T.sum_(T.gelu(t))
        g = lambda t: T.mean(T.softmax(T.mul(t, t)) * Tensor(np.arange(4.0)))
        combo = grad_of(lambda t: T.add(T.scale(f(t), a), T.scale(g(t), b)))
        np.testing.assert_allclose(combo, a * grad_of(f) + b * grad_of(g), rtol=1e-10, atol=1e-12)


def test_forward_and_backward_are_deterministic(rng):
    x = rng.uniform(-1, 1, (4, 8)).astype(np.float32)
    w = rng.uniform(-1, 1, (8, 8)).astype(np.float32)

    def run():
        wt = Tensor(w, requires_grad=True)
        out = T.sum_(T.softmax(T.gelu(T.matmul(Tensor(x), wt))))
        out.backward()
        return out.data.tobytes(), wt.grad.tobytes()

    assert run() == run()


def test_corrupted_rule_fails_gradcheck(f64, rng):
    x = leaf(rng, 4, 5)
    with T.corrupt_backward("gelu"):
        report = gradcheck(lambda: _proj(T.gelu(x)), [("x", x)], tolerance=1e-6)
    assert not report.passed
    assert report.max_rel_error > 1e-2


def test_forward_op_dispatch():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4)))
    assert T.forward_op("matmul", [a, b]).shape == (2, 4)
    assert T.forward_op("conv2d", [Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((2, 1, 2, 2)))],
                        stride=2).shape == (1, 2, 2, 2)
    with pytest.raises(ValueError, match="unknown op"):
        T.forward_op("fft", [a])


def test_float32_is_default_and_precision_switches():
    assert Tensor([1.0]).dtype == np.float32
    with T.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
