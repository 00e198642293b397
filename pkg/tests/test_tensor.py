from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latte import tensor as T
from latte.tensor import NonFiniteError, Tensor, backward
from latte.verify.gradcheck import gradcheck

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(x, requires_grad=True)


def test_softmax_examples():
    with T.precision("f64"):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
        np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(2.0)])).data, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_axis_out_of_range():
    with pytest.raises(ValueError):
        T.softmax(Tensor(np.zeros((2, 3))), axis=2)


@settings(max_examples=1000, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite), finite)
def test_softmax_rows_stochastic_and_shift_invariant(x, c):
    with T.precision("f64"):
        p = T.softmax(Tensor(x), axis=-1).data
        q = T.softmax(Tensor(x + c), axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p, q, atol=1e-9)


def test_masked_softmax_gives_exact_zeros():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 5)))
    mask = np.array([True, True, False, True, False])
    p = T.softmax(x, mask=mask).data
    assert np.all(p[:, ~mask] == 0.0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)
    with pytest.raises(ValueError):
        T.softmax(x, mask=np.zeros(5, bool))


def test_layer_norm_examples():
    with T.precision("f64"):
        np.testing.assert_allclose(T.layer_norm(Tensor([5.0, 5, 5, 5]), 1e-5).data, 0.0, atol=1e-12)
        np.testing.assert_allclose(T.layer_norm(Tensor([-1.0, 1.0]), 1e-12).data, [-1, 1], atol=1e-9)
        x = np.random.default_rng(1).standard_normal(8) * 3 + 2
        mu = sum(x) / 8
        var = sum((v - mu) ** 2 for v in x) / 8
        np.testing.assert_allclose(T.layer_norm(Tensor(x), 1e-6).data, (x - mu) / np.sqrt(var + 1e-6), atol=1e-12)
    with pytest.raises(ValueError):
        T.layer_norm(Tensor([[1.0]]))


def test_backward_examples():
    with T.precision("f64"):
        x = leaf(np.random.default_rng(0).standard_normal((2, 3)))
        assert np.array_equal(backward(T.sum_(x), [x])[id(x)], np.ones((2, 3)))
        y = leaf([1.0, 2.0])
        g = backward(T.sum_(T.square(y)), {"y": y})["y"]
        np.testing.assert_array_equal(g, [2.0, 4.0])


def test_backward_rejects_non_scalar_and_zero_fills_disconnected():
    a, b = leaf([1.0, 2.0]), leaf([3.0])
    with pytest.raises(ValueError):
        backward(a * 2.0)
    grads = backward(T.sum_(a), {"a": a, "b": b})
    assert np.array_equal(grads["b"], np.zeros(1))


def test_shared_subexpression_accumulates():
    with T.precision("f64"):
        x = leaf([3.0])
        y = x * x
        g = backward(T.sum_(y + y * x), [x])[id(x)]
    np.testing.assert_allclose(g, [2 * 3 + 3 * 9])


def test_gelu_is_erf_form():
    from scipy.special import erf

    with T.precision("f64"):
        x = np.linspace(-4, 4, 17)
        np.testing.assert_allclose(T.gelu(Tensor(x)).data, 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-15)


def test_precision_switch():
    with T.precision("f64"):
        assert Tensor([1.0]).data.dtype == np.float64
    with T.precision("f32"):
        assert Tensor([1.0]).data.dtype == np.float32
    with pytest.raises(ValueError):
        with T.precision("f16"):
            pass


def test_non_finite_is_named():
    with pytest.raises(NonFiniteError, match="'log'"):
        T.log(Tensor([-1.0]))
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


@pytest.mark.parametrize("seed", range(3))
def test_composite_gradcheck(seed):
    with T.precision("f64"):
        rng = np.random.default_rng(seed)
        x = leaf(rng.standard_normal((3, 4)))
        w = leaf(rng.standard_normal((4, 5)))
        b = leaf(rng.standard_normal(5))
        params = {"x": x, "w": w, "b": b}
        r = rng.standard_normal((3, 5))

        def fn():
            h = T.gelu(T.linear(T.layer_norm(x), w, b))
            return T.sum_(T.softmax(h, axis=-1) * r) + T.mean(T.silu(h) ** 2.0)

        report = gradcheck(fn, params, max_entries=None)
    assert report.ok(1e-4), report


def test_mutation_flips_softmax_gradient():
    with T.precision("f64"):
        x = leaf([0.1, 0.7, -0.3])
        r = np.array([1.0, -2.0, 0.5])
        g = backward(T.sum_(T.softmax(x) * r), [x])[id(x)]
        with T.mutation("softmax"):
            gm = backward(T.sum_(T.softmax(x) * r), [x])[id(x)]
    np.testing.assert_allclose(gm, -g)
