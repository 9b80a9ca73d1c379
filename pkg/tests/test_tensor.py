import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gran import tensor as T
from gran.errors import ConfigError, ShapeError
from gran.tensor import Tensor

from conftest import check_grads, numerical_grad


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3], [4]]))
        np.testing.assert_array_equal(out.data, [[3], [4]])

    def test_hand_arithmetic(self):
        out = Tensor([[1, 2]]) @ Tensor([[3], [4]])
        assert out.data.tolist() == [[11]]

    def test_gradient_example(self):
        with T.dtype_scope(np.float64):
            a = Tensor([[1.0, 2.0]], requires_grad=True)
            b = Tensor([[3.0], [4.0]])
            T.matmul(a, b).sum().backward()
            num = numerical_grad(lambda: float((a.data @ b.data).sum()), a.data)
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]], atol=1e-12)
        np.testing.assert_allclose(num, [[3.0, 4.0]], atol=1e-8)

    def test_shape_mismatch_reports_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_batched_grad(self, rng):
        check_grads(lambda a, b: (a @ b).sum(), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))])


class TestSoftmax:
    @pytest.mark.parametrize(
        "x, expected",
        [([0.0, 0.0], [0.5, 0.5]), ([1000.0, 1000.0], [0.5, 0.5]), ([0.0, math.log(3)], [0.25, 0.75])],
    )
    def test_examples(self, x, expected):
        np.testing.assert_allclose(T.softmax(Tensor(x)).data, expected, rtol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (3, 5), elements=st.floats(-50, 50)),
        st.floats(-100, 100),
    )
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = T.softmax(Tensor(x, dtype=np.float64)).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(T.softmax(Tensor(x + c, dtype=np.float64)).data, y, atol=1e-9)
        assert (y > 0).all()

    def test_grad(self, rng):
        w = rng.normal(size=(3, 4))
        check_grads(lambda x: (T.softmax(x, axis=-1) * w).sum(), [rng.normal(size=(3, 4))])
        check_grads(lambda x: (T.softmax(x, axis=0) * w).sum(), [rng.normal(size=(3, 4))])

    def test_log_softmax_grad(self, rng):
        w = rng.normal(size=(2, 6))
        check_grads(lambda x: (T.log_softmax(x) * w).sum(), [rng.normal(size=(2, 6))])


class TestGelu:
    def test_zero(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptote(self):
        assert abs(T.gelu(Tensor([6.0], dtype=np.float64)).data[0] - 6.0) < 1e-6

    def test_at_one_matches_erf_formula(self):
        expected = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert T.gelu(Tensor([1.0], dtype=np.float64)).data[0] == pytest.approx(expected, abs=1e-15)

    def test_grad(self, rng):
        check_grads(lambda x: (T.gelu(x) * 1.5).sum(), [rng.normal(size=(4, 3)) * 2])


class TestLayerNorm:
    def test_constant_row(self):
        out = T.layer_norm(Tensor([[3.0, 3.0, 3.0]]), np.ones(3), np.zeros(3))
        np.testing.assert_array_equal(out.data, np.zeros((1, 3)))

    def test_unit_row(self):
        out = T.layer_norm(Tensor([1.0, -1.0], dtype=np.float64), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-6)

    def test_grad(self, rng):
        w = rng.normal(size=(3, 4))
        check_grads(
            lambda x, g, b: (T.layer_norm(x, g, b) * w).sum(),
            [rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=4)],
        )

    def test_shape_check(self):
        with pytest.raises(ShapeError):
            T.layer_norm(Tensor(np.zeros((2, 3))), np.ones(4), np.zeros(4))


class TestDropout:
    def test_rate_zero_identity(self, rng):
        x = Tensor(rng.normal(size=10))
        assert T.dropout(x, 0.0, True, rng) is x

    def test_eval_identity(self, rng):
        x = Tensor(rng.normal(size=10))
        assert T.dropout(x, 0.5, False, rng) is x

    def test_survivor_fraction(self):
        x = Tensor(np.ones(10**6))
        out = T.dropout(x, 0.5, True, np.random.default_rng(0))
        survivors = (out.data != 0).mean()
        assert 0.495 <= survivors <= 0.505
        np.testing.assert_allclose(np.unique(out.data), [0.0, 2.0])

    @pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
    def test_bad_rate(self, rate, rng):
        with pytest.raises(ConfigError):
            T.dropout(Tensor([1.0]), rate, True, rng)


class TestSoftCrossEntropy:
    def test_uniform_logits_one_hot(self):
        out = T.soft_cross_entropy(Tensor(np.zeros(4), dtype=np.float64), np.eye(4)[2], reduction="sum")
        assert out.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_target_equals_prediction_gives_entropy(self, rng):
        logits = rng.normal(size=6)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        out = T.soft_cross_entropy(Tensor(logits, dtype=np.float64), p, reduction="sum")
        assert out.item() == pytest.approx(-(p * np.log(p)).sum(), abs=1e-12)

    def test_grad_c7(self, rng):
        y = rng.random(7)
        y /= y.sum()
        check_grads(lambda z: T.soft_cross_entropy(z, y, reduction="sum"), [rng.normal(size=7)])

    def test_grad_is_softmax_minus_target(self, rng):
        y = np.eye(5)[1]
        z = Tensor(rng.normal(size=5), requires_grad=True, dtype=np.float64)
        T.soft_cross_entropy(z, y, reduction="sum").backward()
        p = np.exp(z.data) / np.exp(z.data).sum()
        np.testing.assert_allclose(z.grad, p - y, atol=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            T.soft_cross_entropy(Tensor(np.zeros(3)), np.array([0.5, 0.5, 0.5]))


class TestAutodiff:
    def test_elementwise_and_shape_ops(self, rng):
        check_grads(
            lambda a, b: ((a * b - a / (b * b + 1.0)).transpose(1, 0).reshape(-1) * 0.5).sum(),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))],
        )

    def test_broadcast_add_sums_back(self, rng):
        check_grads(lambda x, b: ((x + b) * (x + b)).sum(), [rng.normal(size=(2, 3, 4)), rng.normal(size=4)])

    def test_einsum(self, rng):
        check_grads(
            lambda a, b: T.einsum("bik,bjk->bij", a, b).mean(),
            [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 5, 4))],
        )

    def test_take_with_repeats(self, rng):
        ids = np.array([[0, 2], [2, 2]])
        w = rng.normal(size=(2, 2, 3))
        check_grads(lambda t: (T.take(t, ids) * w).sum(), [rng.normal(size=(4, 3))])

    def test_index_and_concat(self, rng):
        check_grads(
            lambda a, b: (T.concat([a[1:], b[np.array([0, 0, 1])]], axis=0) * a[0]).sum(),
            [rng.normal(size=(3, 2)), rng.normal(size=(2, 2))],
        )

    def test_two_layer_network_matches_hand_jacobian(self):
        x0 = np.array([[0.3, -0.7]])
        W1 = np.array([[0.5, -1.2], [0.8, 0.4]])
        W2 = np.array([[1.5], [-0.6]])
        with T.dtype_scope(np.float64):
            x = Tensor(x0, requires_grad=True)
            (T.gelu(x @ Tensor(W1)) @ Tensor(W2)).sum().backward()
        # dy/dx = W1 @ (gelu'(h) * W2), gelu'(h) = Phi(h) + h phi(h)
        h = x0 @ W1
        d_gelu = np.array(
            [[0.5 * (1 + math.erf(v / math.sqrt(2))) + v * math.exp(-v * v / 2) / math.sqrt(2 * math.pi)
              for v in h[0]]]
        )
        expected = (W1 @ (d_gelu.T * W2)).T
        np.testing.assert_allclose(x.grad, expected, atol=1e-12)

    def test_shared_input_accumulates(self):
        with T.dtype_scope(np.float64):
            x = Tensor([2.0], requires_grad=True)
            (x * x + x).sum().backward()
        assert x.grad[0] == pytest.approx(5.0)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = x * 3.0
        assert not y.requires_grad

    def test_float32_default_and_float64_scope(self):
        assert Tensor([1.0]).dtype == np.float32
        with T.dtype_scope(np.float64):
            assert Tensor([1.0]).dtype == np.float64
