import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcadepth import tensor as T
from dcadepth.tensor import ShapeError, Tensor, backward, finite_diff_check, no_grad, precision, tensor_new


def leaf(values, dtype=np.float32):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)


class TestConstruction:
    def test_zero_fill(self):
        t = tensor_new([1, 1, 2, 2], 0.0)
        assert t.shape == (1, 1, 2, 2)
        assert t.data.dtype == np.float32
        assert np.all(t.data == 0)
        assert not t.requires_grad and t.grad is None

    def test_value_list_keeps_order(self):
        t = tensor_new([2, 3], [1, 2, 3, 4, 5, 6])
        np.testing.assert_array_equal(t.data, [[1, 2, 3], [4, 5, 6]])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            tensor_new([1, 2, 2, 2], [0.0] * 7)

    @pytest.mark.parametrize("shape", [[0, 2], [1, 0, 3], []])
    def test_bad_dims(self, shape):
        with pytest.raises(ShapeError):
            tensor_new(shape)

    def test_rank_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_integer_input_becomes_float(self):
        assert Tensor([1, 2]).dtype == np.float32
        with precision(np.float64):
            assert Tensor([1, 2]).dtype == np.float64


class TestElementwise:
    def test_mul_identity_and_absorbing(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((2, 3, 4, 5)).astype(np.float32))
        ones = tensor_new(a.shape, 1.0)
        np.testing.assert_array_equal(T.elementwise_mul(a, ones).data, a.data)
        zeros = tensor_new(a.shape, 0.0)
        assert np.all(T.elementwise_mul(zeros, a).data == 0)

    def test_mul_product_rule(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
        out = T.elementwise_mul(a, b)
        np.testing.assert_array_equal(out.data, [3, 8])
        backward(T.sum_all(out))
        np.testing.assert_array_equal(a.grad, [3, 4])
        np.testing.assert_array_equal(b.grad, [1, 2])

    def test_no_broadcasting(self):
        with pytest.raises(ShapeError):
            T.elementwise_mul(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones(3)), Tensor(np.ones(2)))

    def test_tensor_division_rejected(self):
        with pytest.raises(TypeError):
            Tensor([1.0]) / Tensor([2.0])

    def test_operators(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0, 5.0])
        out = (a + b) * 2.0 - a / 2.0
        np.testing.assert_allclose(out.data, [7.5, 13.0])


class TestConcat:
    def test_singleton(self):
        x = Tensor(np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2))
        np.testing.assert_array_equal(T.concat_channels([x]).data, x.data)

    def test_layout(self):
        a = Tensor(np.zeros((1, 2, 3, 3), np.float32))
        b = Tensor(np.ones((1, 3, 3, 3), np.float32))
        out = T.concat_channels([a, b])
        assert out.shape == (1, 5, 3, 3)
        assert np.all(out.data[:, 2:5] == 1) and np.all(out.data[:, :2] == 0)

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(3)
        parts = [Tensor(rng.standard_normal((2, 3, 4, 5)).astype(np.float32)) for _ in range(4)]
        out = T.concat_channels(parts)
        for k, p in enumerate(parts):
            assert np.array_equal(T.slice_channels(out, 3 * k, 3 * k + 3).data, p.data)

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat_channels([Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 2, 3)))])

    def test_backward_slices_grad(self):
        a, b = leaf(np.ones((1, 1, 2, 2))), leaf(np.ones((1, 2, 2, 2)))
        w = Tensor(np.arange(12, dtype=np.float32).reshape(1, 3, 2, 2))
        backward(T.sum_all(T.elementwise_mul(T.concat_channels([a, b]), w)))
        np.testing.assert_array_equal(a.grad, w.data[:, :1])
        np.testing.assert_array_equal(b.grad, w.data[:, 1:])


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf(np.full((1, 1, 2, 2), 3.0))
        backward(T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((1, 1, 2, 2)))

    def test_sum_of_squares(self):
        x = leaf([1.0, 2.0])
        backward(T.sum_all(T.elementwise_mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2, 4])

    def test_paths_accumulate(self):
        x = leaf(np.ones((2, 3)))
        backward(T.sum_all(x) + T.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.full((2, 3), 2.0))

    def test_k_consumers(self):
        rng = np.random.default_rng(1)
        x = leaf(rng.standard_normal((2, 2)), np.float64)
        ws = [Tensor(rng.standard_normal((2, 2))) for _ in range(4)]
        with precision(np.float64):
            total = T.sum_all(T.elementwise_mul(x, ws[0]))
            for w in ws[1:]:
                total = total + T.sum_all(T.elementwise_mul(x, w))
            backward(total)
        np.testing.assert_allclose(x.grad, sum(w.data for w in ws), rtol=1e-12)

    def test_non_scalar_loss(self):
        with pytest.raises(ShapeError):
            backward(T.square(leaf([1.0, 2.0])))

    def test_detached_leaf_stays_empty(self):
        x = leaf([1.0, 2.0])
        y = Tensor([3.0, 4.0])
        backward(T.sum_all(T.elementwise_mul(x.detach(), y) + x))
        assert x.grad is not None
        z = leaf([1.0])
        backward(T.sum_all(z.detach()))
        assert z.grad is None

    def test_graph_freed(self):
        x = leaf([1.0, 2.0])
        loss = T.sum_all(T.square(x))
        backward(loss)
        assert loss._parents == () and loss._backward is None

    def test_no_grad_records_nothing(self):
        x = leaf([1.0, 2.0])
        with no_grad():
            y = T.square(x)
        assert not y.requires_grad

    def test_deep_chain_is_iterative(self):
        x = leaf([1.0])
        y = x
        for _ in range(5000):
            y = T.add_scalar(y, 0.0)
        backward(T.sum_all(y))
        assert x.grad[0] == 1.0


class TestFiniteDiff:
    def test_linear_is_exact(self):
        x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 4)))
        assert finite_diff_check(T.sum_all, x) < 1e-10

    def test_sum_of_squares(self):
        x = Tensor(np.random.default_rng(1).uniform(-1, 1, (3, 4)))
        assert finite_diff_check(lambda t: T.sum_all(T.square(t)), x, eps=1e-5) < 1e-6

    def test_detects_a_wrong_gradient(self):
        def bad_square(a):
            return T._result(a.data * a.data, (a,), lambda g: (g * a.data,), "bad_square")

        x = Tensor(np.random.default_rng(2).uniform(0.5, 1.5, (4,)))
        assert finite_diff_check(lambda t: T.sum_all(bad_square(t)), x) > 0.1

    def test_dsdc_composite(self):
        from dcadepth.blocks import dsdc_forward, init_dsdc
        from dcadepth.gradcheck import to_float64

        rng = np.random.default_rng(5)
        p = to_float64(init_dsdc(rng, 4))
        x = Tensor(rng.standard_normal((1, 4, 6, 6)))
        r = Tensor(rng.standard_normal((1, 4, 6, 6)))
        f = lambda t: T.sum_all(T.elementwise_mul(dsdc_forward(t, p), r))  # noqa: E731
        assert finite_diff_check(f, x, coords=40) < 1e-4


UNARY = {
    "log": (T.log, np.log, 0.1, 5.0),
    "exp": (T.exp, np.exp, -3.0, 3.0),
    "square": (T.square, np.square, -3.0, 3.0),
    "abs": (T.abs_, np.abs, -3.0, 3.0),
    "sigmoid": (T.sigmoid, lambda v: 1 / (1 + np.exp(-v)), -6.0, 6.0),
    "sqrt": (T.safe_sqrt, np.sqrt, 0.1, 5.0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_values(name):
    op, ref, lo, hi = UNARY[name]
    x = np.random.default_rng(0).uniform(lo, hi, (3, 4))
    with precision(np.float64):
        np.testing.assert_allclose(op(Tensor(x)).data, ref(x), rtol=1e-12)


def test_safe_sqrt_clamps_negative():
    x = leaf([-1.0, 4.0], np.float64)
    with precision(np.float64):
        y = T.safe_sqrt(x)
        backward(T.sum_all(y))
    assert y.data[0] == 0.0
    assert x.grad[0] == 0.0 and x.grad[1] == pytest.approx(0.25)


def test_narrow_and_masked_select():
    x = leaf(np.arange(12, dtype=np.float64).reshape(1, 1, 3, 4), np.float64)
    with precision(np.float64):
        part = T.narrow(x, 3, 1, 2)
        np.testing.assert_array_equal(part.data[0, 0], [[1, 2], [5, 6], [9, 10]])
        mask = x.data > 6
        sel = T.masked_select(x, mask)
        np.testing.assert_array_equal(sel.data, [7, 8, 9, 10, 11])
        backward(T.sum_all(sel) + T.sum_all(part))
    np.testing.assert_array_equal(x.grad, mask.astype(float) + np.pad(np.ones((3, 2)), ((0, 0), (1, 1)))[None, None])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_concat_slice_identity_property(n, c, h, w, seed):
    rng = np.random.default_rng(seed)
    parts = [Tensor(rng.standard_normal((n, c + k, h, w)).astype(np.float32)) for k in range(3)]
    out = T.concat_channels(parts)
    start = 0
    for p in parts:
        stop = start + p.shape[1]
        assert np.array_equal(T.slice_channels(out, start, stop).data, p.data)
        start = stop


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_elementwise_gradients_property(seed):
    rng = np.random.default_rng(seed)
    b = Tensor(rng.standard_normal((2, 3, 4)))
    f = lambda t: T.sum_all(T.elementwise_mul(T.sigmoid(T.elementwise_mul(t, b)), T.exp(T.mul_scalar(t, 0.3))))  # noqa: E731
    assert finite_diff_check(f, Tensor(rng.standard_normal((2, 3, 4)))) < 1e-4


def test_debug_mode_flags_non_finite(monkeypatch):
    monkeypatch.setattr(T, "DEBUG", True)
    with pytest.raises(FloatingPointError), np.errstate(divide="ignore"):
        T.log(Tensor([0.0, 1.0]))
