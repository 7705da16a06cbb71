"""Tape autodiff: forward values, gradients vs finite differences, optimizers."""

import numpy as np
import pytest
from helpers import central_diff, rel_error

from fedmvc import tensor as T
from fedmvc.errors import DimensionError, TrainingError


def scalar(t):
    return float(t.value[0, 0])


class TestForward:
    def test_affine_identity(self):
        tape = T.Tape()
        y = T.affine(tape.constant([[1.0, 2.0]]), T.Param(np.eye(2)),
                     T.Param(np.zeros((1, 2))))
        assert np.array_equal(y.value, [[1.0, 2.0]])

    def test_affine_bias(self):
        tape = T.Tape()
        y = T.affine(tape.constant([[1.0, 1.0]]), T.Param(np.eye(2)),
                     T.Param([[1.0, 1.0]]))
        assert np.array_equal(y.value, [[2.0, 2.0]])

    def test_affine_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, (3, 4))
        w = rng.uniform(-2, 2, (4, 2))
        b = rng.uniform(-2, 2, (1, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += x[i, k] * w[k, j]
                expected[i, j] += b[0, j]
        tape = T.Tape()
        y = T.affine(tape.constant(x), T.Param(w), T.Param(b))
        assert np.allclose(y.value, expected, rtol=1e-12)

    def test_affine_shape_mismatch(self):
        tape = T.Tape()
        with pytest.raises(DimensionError):
            T.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 3))))

    def test_relu(self):
        tape = T.Tape()
        y = T.relu(tape.constant([[-1.0, 0.0, 2.0]]))
        assert np.array_equal(y.value, [[0.0, 0.0, 2.0]])

    def test_relu_identity_on_nonnegative(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 3, (4, 5))
        tape = T.Tape()
        assert np.array_equal(T.relu(tape.constant(x)).value, x)

    def test_softmax_uniform(self):
        tape = T.Tape()
        y = T.softmax_rows(tape.constant([[0.0, 0.0]]))
        assert np.allclose(y.value, [[0.5, 0.5]])

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-2, 2, (3, 4))
        tape = T.Tape()
        a = T.softmax_rows(tape.constant(x)).value
        b = T.softmax_rows(tape.constant(x + 7.5)).value
        assert np.allclose(a, b, atol=1e-14)

    def test_softmax_hand_value(self):
        tape = T.Tape()
        y = T.softmax_rows(tape.constant([[np.log(2.0), 0.0]]))
        assert np.allclose(y.value, [[2 / 3, 1 / 3]], atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-50, 50, (5, 7))
            y = T.softmax_rows(T.Tape().constant(x)).value
            assert np.abs(y.sum(axis=1) - 1.0).max() < 1e-12
            assert (y > 0).all()

    def test_normalize_rows_zero_row(self):
        tape = T.Tape()
        y = T.normalize_rows(tape.constant([[0.0, 0.0], [3.0, 4.0]]))
        assert np.allclose(y.value, [[0.0, 0.0], [0.6, 0.8]])

    def test_xlogx_zero_convention(self):
        tape = T.Tape()
        y = T.xlogx(tape.constant([[0.0, 1.0, np.e]]))
        assert np.allclose(y.value, [[0.0, 0.0, np.e]])


class TestBackward:
    def test_quadratic(self):
        tape = T.Tape()
        p = T.Param([[1.0, -2.0, 3.0]])
        x = tape.leaf(p)
        loss = T.sum_all(T.mul(x, x))
        tape.backward(loss)
        assert np.allclose(p.grad, 2 * p.value)

    def test_self_mse_zero_grad(self):
        tape = T.Tape()
        p = T.Param(np.random.default_rng(0).uniform(-2, 2, (3, 3)))
        x = tape.leaf(p)
        diff = T.sub(x, x)
        tape.backward(T.sum_all(T.mul(diff, diff)))
        assert np.array_equal(p.grad, np.zeros((3, 3)))

    def test_grad_accumulates_until_cleared(self):
        p = T.Param([[2.0]])
        for _ in range(2):
            tape = T.Tape()
            x = tape.leaf(p)
            tape.backward(T.sum_all(T.mul(x, x)))
        assert np.allclose(p.grad, [[8.0]])
        p.zero_grad()
        assert np.array_equal(p.grad, [[0.0]])

    def test_loss_not_on_tape(self):
        tape_a, tape_b = T.Tape(), T.Tape()
        loss = T.sum_all(tape_a.constant([[1.0]]))
        with pytest.raises(ValueError):
            tape_b.backward(loss)

    def test_non_scalar_loss_rejected(self):
        tape = T.Tape()
        with pytest.raises(ValueError):
            tape.backward(tape.constant([[1.0, 2.0]]))

    def test_mlp_grad_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-2, 2, (4, 3))
        w1 = rng.uniform(-1, 1, (3, 5))
        b1 = rng.uniform(-0.5, 0.5, (1, 5))
        w2 = rng.uniform(-1, 1, (5, 2))
        b2 = rng.uniform(-0.5, 0.5, (1, 2))
        target = rng.uniform(-2, 2, (4, 2))

        def run(w1v):
            h = np.maximum(x @ w1v + b1, 0.0)
            y = h @ w2 + b2
            return float(((y - target) ** 2).sum())

        p1 = T.Param(w1)
        tape = T.Tape()
        y = T.affine(T.relu(T.affine(tape.constant(x), p1, T.Param(b1))),
                     T.Param(w2), T.Param(b2))
        diff = T.sub(y, tape.constant(target))
        tape.backward(T.sum_all(T.mul(diff, diff)))
        assert rel_error(p1.grad, central_diff(run, w1)) < 1e-4

    @pytest.mark.parametrize("op,builder", [
        ("relu", lambda t, x: T.sum_all(T.mul(T.relu(x), T.relu(x)))),
        ("softmax", lambda t, x: T.sum_all(T.mul(T.softmax_rows(x),
                                                 t.constant(_W)))),
        ("normalize", lambda t, x: T.sum_all(T.mul(T.normalize_rows(x),
                                                   t.constant(_W)))),
        ("exp", lambda t, x: T.sum_all(T.exp(T.scale(x, 0.5)))),
        ("log", lambda t, x: T.sum_all(T.log(T.add_scalar(T.mul(x, x), 1.0)))),
        ("xlogx", lambda t, x: T.sum_all(T.xlogx(T.add_scalar(T.mul(x, x), 0.1)))),
        ("colsum", lambda t, x: T.sum_all(T.mul(T.colsum(x), T.colsum(x)))),
        ("rowsum", lambda t, x: T.sum_all(T.mul(T.rowsum(x), T.rowsum(x)))),
        ("transpose", lambda t, x: T.sum_all(T.mul(T.transpose(x), T.transpose(x)))),
    ])
    def test_op_grads_match_finite_differences(self, op, builder):
        rng = np.random.default_rng(sum(map(ord, op)))
        x = rng.uniform(-2, 2, (3, 4))
        x[np.abs(x) < 1e-3] += 0.01  # stay clear of the relu kink

        def run(xv):
            p = T.Param(xv)
            tape = T.Tape()
            loss = builder(tape, tape.leaf(p))
            tape.backward(loss)
            return float(loss.value[0, 0]), p.grad

        value, grad = run(x)
        fd = central_diff(lambda xv: run(xv)[0], x)
        assert rel_error(grad, fd) < 1e-4, op

    def test_add_row_grad_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-2, 2, (3, 4))
        row = rng.uniform(-2, 2, (1, 4))

        def run(rv):
            p = T.Param(rv)
            tape = T.Tape()
            y = T.add_row(tape.constant(x), tape.leaf(p))
            loss = T.sum_all(T.mul(y, y))
            tape.backward(loss)
            return float(loss.value[0, 0]), p.grad

        _, grad = run(row)
        fd = central_diff(lambda rv: run(rv)[0], row)
        assert rel_error(grad, fd) < 1e-4


_W = np.random.default_rng(123).uniform(-2, 2, (3, 4))


class TestDeterminism:
    def test_bit_identical_runs(self):
        def run():
            rng = np.random.default_rng(42)
            p = T.Param(rng.uniform(-1, 1, (6, 6)))
            tape = T.Tape()
            x = tape.constant(rng.uniform(-1, 1, (5, 6)))
            y = T.softmax_rows(T.relu(T.matmul(x, tape.leaf(p))))
            tape.backward(T.sum_all(T.mul(y, y)))
            return y.value.copy(), p.grad.copy()
        y1, g1 = run()
        y2, g2 = run()
        assert np.array_equal(y1, y2)
        assert np.array_equal(g1, g2)


class TestOptimizers:
    def test_sgd_step(self):
        p = T.Param([[1.0]])
        p.grad[...] = 1.0
        T.SGD(lr=0.1).step([p])
        assert np.allclose(p.value, [[0.9]])
        assert np.array_equal(p.grad, [[0.0]])

    def test_sgd_zero_grad_no_move(self):
        p = T.Param([[3.0]])
        T.SGD(lr=0.5).step([p])
        assert np.allclose(p.value, [[3.0]])

    def test_adam_first_step_matches_formula(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        for g in (0.01, 1.0, 250.0):
            p = T.Param([[1.0]])
            p.grad[...] = g
            T.Adam(lr=lr).step([p])
            m_hat = (1 - b1) * g / (1 - b1)
            v_hat = (1 - b2) * g * g / (1 - b2)
            expected = 1.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
            assert np.allclose(p.value, [[expected]], rtol=1e-12)
            assert abs(abs(1.0 - p.value[0, 0]) - lr) < lr * 1e-4

    def test_adam_two_steps_match_manual(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        grads = [0.7, -1.3]
        p = T.Param([[0.5]])
        opt = T.Adam(lr=lr)
        w, m, v = 0.5, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            p.grad[...] = g
            opt.step([p])
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert np.allclose(p.value, [[w]], rtol=1e-12)

    def test_non_finite_grad_raises(self):
        p = T.Param([[1.0]])
        p.grad[...] = np.nan
        with pytest.raises(TrainingError):
            T.Adam(lr=0.1).step([p])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            T.make_optimizer("rmsprop", 0.1)
