"""Gradient checks and semantics of the reverse-mode tensor machinery."""

import numpy as np
import pytest
from helpers import central_difference, max_relative_error

from songgraph.autodiff import (
    SGD,
    Tensor,
    affine,
    concat,
    debug_check_finite,
    exp,
    leaky_relu,
    log,
    matmul,
    mean,
    mse,
    pick,
    reshape,
    rows,
    softmax_cross_entropy,
    square,
    tensor_sum,
    transpose,
)
from songgraph.errors import NumericError

TOL = 1e-6


def check(loss_builder, params):
    loss = loss_builder()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    numeric = central_difference(lambda: loss_builder().item(), params)
    assert max_relative_error(analytic, numeric) < 1e-4


class TestGradients:
    def test_affine_chain(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=5), requires_grad=True)
        check(lambda: mean(square(affine(x, w, b))), [w, b])

    def test_leaky_relu(self):
        rng = np.random.default_rng(1)
        # keep activations away from the kink at 0
        w = Tensor(rng.normal(size=(3, 3)) + 0.5, requires_grad=True)
        x = Tensor(rng.normal(size=(2, 3)) + 1.0)
        check(lambda: tensor_sum(leaky_relu(matmul(x, w))), [w])

    def test_exp_log_square(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
        check(lambda: tensor_sum(log(exp(square(a)) + Tensor(np.ones((3, 3))))), [a])

    def test_broadcast_add(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        check(lambda: tensor_sum(square(a + b)), [a, b])

    def test_rows_gather(self):
        rng = np.random.default_rng(4)
        table = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        idx = [0, 2, 2, 5]
        check(lambda: tensor_sum(square(rows(table, idx))), [table])

    def test_concat_and_slice(self):
        rng = np.random.default_rng(5)
        a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        check(lambda: tensor_sum(square(concat([a, b], axis=1))), [a, b])

    def test_pick_and_cross_entropy(self):
        rng = np.random.default_rng(6)
        w = Tensor(rng.normal(size=(4, 7)), requires_grad=True)
        x = Tensor(rng.normal(size=(1, 4)))
        check(lambda: softmax_cross_entropy(matmul(x, w), 3), [w])

    def test_mean_axis_and_transpose(self):
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        check(lambda: tensor_sum(square(mean(transpose(a), axis=1, keepdims=True))), [a])

    def test_reshape_and_pick(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
        check(lambda: square(pick(reshape(a, (3, 4)), (2, 1))), [a])

    def test_mse(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        t = Tensor(rng.normal(size=(4, 3)))
        check(lambda: mse(a, t), [a])


class TestSemantics:
    def test_backward_needs_scalar(self):
        with pytest.raises(ValueError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_forward_values(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        assert np.allclose(matmul(a, b).data, [[3.0], [7.0]])
        assert tensor_sum(a).item() == 10.0
        assert mean(a).item() == 2.5

    def test_grad_accumulates_over_shared_use(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        loss = tensor_sum(a * 3.0 + a * 5.0)
        loss.backward()
        assert a.grad[0] == 8.0

    def test_no_grad_without_requires(self):
        a = Tensor(np.ones((2, 2)))
        out = tensor_sum(square(a))
        out.backward()
        assert a.grad is None

    def test_cross_entropy_matches_manual(self):
        logits = Tensor(np.array([[1.0, 2.0, 0.5]]))
        value = softmax_cross_entropy(logits, 1).item()
        z = np.array([1.0, 2.0, 0.5])
        expected = np.log(np.exp(z).sum()) - z[1]
        assert abs(value - expected) < 1e-12

    def test_debug_finite_check(self):
        debug_check_finite(True)
        try:
            with np.errstate(invalid="ignore"), pytest.raises(NumericError):
                log(Tensor(np.array([-1.0]), requires_grad=True))
        finally:
            debug_check_finite(False)


class TestSgd:
    def test_momentum_update_rule(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = SGD([p], lr=0.1, momentum=0.5)
        p.grad = np.array([2.0])
        opt.step()  # v = 2, p = 1 - 0.2
        assert np.allclose(p.data, [0.8])
        p.grad = np.array([0.0])
        opt.step()  # v = 1, p = 0.8 - 0.1
        assert np.allclose(p.data, [0.7])

    def test_zero_grad(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([5.0])
        SGD([p], lr=0.1).zero_grad()
        assert p.grad is None
