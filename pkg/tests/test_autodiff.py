"""Gradient correctness of the autodiff engine against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nerflab import autodiff as ad
from nerflab.autodiff import DualArray, ShapeError, Tape, grad_check


def taped(value):
    return DualArray(np.asarray(value, dtype=np.float64), Tape())


def backward(out):
    out.tape.backward(out)


# ----------------------------------------------------------- trivial examples


def test_square_derivative_at_three():
    x = taped(3.0)
    y = x * x
    backward(y)
    assert x.grad == pytest.approx(6.0, abs=1e-12)


def test_exp_derivative_at_zero():
    x = taped(0.0)
    y = ad.exp(x)
    backward(y)
    assert x.grad == pytest.approx(1.0, abs=1e-12)


def test_grad_check_sum_of_squares(rng):
    x = rng.normal(size=8)
    err = grad_check(lambda v: ad.asum(v * v), x)
    assert err < 1e-6


def test_softplus_matmul_matches_finite_differences(rng):
    x = rng.normal(size=(3,)).reshape(3, 1)

    def f(w):
        return ad.asum(ad.softplus(ad.matmul(w, DualArray(x, w.tape))))

    err = grad_check(f, rng.normal(size=(4, 3)))
    assert err < 1e-4


# --------------------------------------------------------- primitive coverage

UNARY_OPS = [
    (ad.neg, (-3.0, 3.0)),
    (ad.exp, (-2.0, 2.0)),
    (ad.log, (0.1, 5.0)),
    (ad.sin, (-3.0, 3.0)),
    (ad.cos, (-3.0, 3.0)),
    (ad.sqrt, (0.1, 5.0)),
    (ad.absolute, (0.2, 3.0)),
    (ad.relu, (0.1, 3.0)),
    (ad.softplus, (-4.0, 4.0)),
    (ad.sigmoid, (-4.0, 4.0)),
]


@pytest.mark.parametrize("op,domain", UNARY_OPS, ids=lambda o: getattr(o, "__name__", ""))
def test_unary_gradients(op, domain, rng):
    x = rng.uniform(*domain, size=(4, 5))
    err = grad_check(lambda v: ad.asum(op(v)), x)
    assert err < 1e-4


BINARY_OPS = [ad.add, ad.sub, ad.mul, ad.div, ad.maximum, ad.minimum]


@pytest.mark.parametrize("op", BINARY_OPS, ids=lambda o: o.__name__)
def test_binary_gradients_both_sides(op, rng):
    a = rng.uniform(0.5, 2.0, size=(3, 4))
    b = rng.uniform(2.5, 4.0, size=(3, 4))  # disjoint ranges: no max/min ties
    assert grad_check(lambda v: ad.asum(op(v, DualArray(b, v.tape))), a) < 1e-4
    assert grad_check(lambda v: ad.asum(op(DualArray(a, v.tape), v)), b) < 1e-4


def test_broadcast_gradients(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    assert grad_check(lambda v: ad.asum(v * DualArray(b, v.tape)), a) < 1e-4
    assert grad_check(lambda v: ad.asum(DualArray(a, v.tape) * v), b) < 1e-4
    assert grad_check(lambda v: ad.asum(v + 2.5), a) < 1e-4


def test_matmul_gradients(rng):
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3, 5))
    assert grad_check(lambda v: ad.asum(ad.matmul(v, DualArray(b, v.tape))), a) < 1e-4
    assert grad_check(lambda v: ad.asum(ad.matmul(DualArray(a, v.tape), v)), b) < 1e-4


def test_power_gradient(rng):
    x = rng.uniform(0.5, 2.0, size=6)
    assert grad_check(lambda v: ad.asum(ad.power(v, 3.0)), x) < 1e-4


def test_reduction_gradients(rng):
    x = rng.normal(size=(3, 5))
    assert grad_check(lambda v: ad.asum(v), x) < 1e-6
    assert grad_check(lambda v: ad.amean(v), x) < 1e-6
    assert grad_check(lambda v: ad.asum(ad.asum(v, axis=-1) ** 2), x) < 1e-4
    assert grad_check(lambda v: ad.asum(ad.amean(v, axis=0) ** 2), x) < 1e-4


def test_cumsum_gradient(rng):
    x = rng.normal(size=(2, 6))
    assert grad_check(lambda v: ad.asum(ad.cumsum_last(v) ** 2), x) < 1e-4


def test_reshape_concat_gradients(rng):
    x = rng.normal(size=(2, 6))
    assert grad_check(lambda v: ad.asum(ad.reshape(v, (3, 4)) ** 2), x) < 1e-4
    y = rng.normal(size=(2, 3))
    assert (
        grad_check(
            lambda v: ad.asum(ad.concat([v, DualArray(y, v.tape)], axis=-1) ** 2), x
        )
        < 1e-4
    )


def test_take_along_gradient_scatters_back(rng):
    x = rng.normal(size=(2, 5))
    idx = np.argsort(rng.normal(size=(2, 5)), axis=-1)
    assert grad_check(lambda v: ad.asum(ad.take_along(v, idx) ** 2), x) < 1e-4
    # duplicate indices must accumulate
    dup = np.zeros((2, 5), dtype=np.int64)
    t = taped(x)
    out = ad.asum(ad.take_along(t, dup))
    backward(out)
    expected = np.zeros_like(x)
    expected[:, 0] = 5.0
    np.testing.assert_allclose(t.grad, expected, atol=1e-12)


def test_getitem_gradient(rng):
    x = rng.normal(size=(3, 4))
    assert grad_check(lambda v: ad.asum(v[:, 1:] ** 2), x) < 1e-4
    assert grad_check(lambda v: ad.asum(v[1] ** 2), x) < 1e-4


def test_where_gradient(rng):
    x = rng.normal(size=(3, 4))
    cond = x > 0
    assert (
        grad_check(lambda v: ad.asum(ad.where(cond, v * 2.0, v * -1.0)), x) < 1e-4
    )


def test_clamp_subgradient_inside_and_boundaries():
    x = taped(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))
    y = ad.asum(ad.clamp(x, -1.0, 1.0))
    backward(y)
    # subgradient 1 inside and at both boundaries, 0 strictly outside
    np.testing.assert_allclose(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])


def test_maximum_tie_goes_to_first_argument():
    a, b = taped(np.array([2.0])), None
    b = DualArray(np.array([2.0]), a.tape)
    out = ad.asum(ad.maximum(a, b))
    backward(out)
    assert a.grad[0] == 1.0 and b.grad[0] == 0.0


# ------------------------------------------------------------- error handling


def test_shape_mismatch_names_both_shapes(rng):
    a = taped(rng.normal(size=(3, 4)))
    b = DualArray(rng.normal(size=(2, 5)), a.tape)
    with pytest.raises(ShapeError) as exc:
        _ = a + b
    assert "(3, 4)" in str(exc.value) and "(2, 5)" in str(exc.value)


def test_log_and_sqrt_reject_negative_input():
    with pytest.raises(ValueError):
        ad.log(taped(np.array([-1.0])))
    with pytest.raises(ValueError):
        ad.sqrt(taped(np.array([-1.0])))


# --------------------------------------------------------------- tape hygiene


def test_constant_inputs_get_no_gradient(rng):
    x = taped(rng.normal(size=4))
    const = DualArray(rng.normal(size=4))  # no tape
    y = ad.asum(x * const)
    backward(y)
    assert const.grad is None
    assert x.grad is not None


def test_backward_is_deterministic_and_resets(rng):
    vals = rng.normal(size=(4, 4))

    def run():
        x = taped(vals)
        y = ad.asum(ad.softplus(ad.matmul(x, x)) * ad.sigmoid(x))
        backward(y)
        return x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)  # bitwise

    # a second backward over the same tape starts from clean buffers
    x = taped(vals)
    y = ad.asum(x * x)
    backward(y)
    first = x.grad.copy()
    backward(y)
    assert np.array_equal(x.grad, first)


def test_stop_gradient_blocks_flow(rng):
    x = taped(rng.normal(size=4))
    y = ad.asum(ad.stop_gradient(x) * x)
    backward(y)
    np.testing.assert_allclose(x.grad, x.value)  # only the live branch


# ------------------------------------------------------------- property tests


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_property_chain_rule_random_expressions(seed):
    gen = np.random.default_rng(seed)
    x = gen.uniform(0.3, 2.0, size=(3, 3))

    def f(v):
        return ad.asum(ad.log(v) * ad.sin(v) + ad.sqrt(v) / (v + 1.0))

    assert grad_check(f, x) < 1e-4


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**31 - 1))
def test_property_linearity_of_gradient(seed):
    gen = np.random.default_rng(seed)
    vals = gen.normal(size=5)
    a, b = gen.normal(), gen.normal()

    x1 = taped(vals)
    backward(ad.asum(x1 * x1) * a + ad.asum(ad.exp(x1)) * b)
    x2 = taped(vals)
    backward(ad.asum(x2 * x2))
    x3 = taped(vals)
    backward(ad.asum(ad.exp(x3)))
    np.testing.assert_allclose(x1.grad, a * x2.grad + b * x3.grad, rtol=1e-12, atol=1e-12)
