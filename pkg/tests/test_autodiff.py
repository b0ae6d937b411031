import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sftgan import autodiff as ad
from sftgan.autodiff import NondeterministicError, NonFiniteError, ShapeError, Tensor

from oracles import conv_oracle


# -- elementwise ---------------------------------------------------------------

def test_scalar_mul_and_additive_identity():
    assert ad.ew_binary(Tensor([2.0]), Tensor([3.0]), "mul").data.tolist() == [6.0]
    assert ad.ew_binary(Tensor([1.0, 2, 3]), Tensor([0.0, 0, 0]), "add").data.tolist() == [1, 2, 3]


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_per_channel_broadcast():
    a = Tensor(np.ones((2, 3, 4, 4)))
    b = Tensor(np.arange(3.0).reshape(1, 3, 1, 1))
    out = ad.mul(a, b)
    assert out.shape == (2, 3, 4, 4)
    assert np.all(out.data[:, 2] == 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_values_raise():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])
    with pytest.raises(ValueError):
        ad.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        Tensor([1e30]) * Tensor([1e30])


@pytest.mark.parametrize("kind", ["add", "mul"])
def test_binary_gradients(kind):
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    rep = ad.finite_diff_check(lambda: ad.sum_all(ad.ew_binary(a, b, kind) * a), [a, b], eps=1e-3)
    assert rep.passed, rep.errors


def test_mul_gradient_is_upstream_times_other():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    ga, gb = ad.grad(ad.sum_all(a * b), [a, b])
    np.testing.assert_array_equal(ga, b.data)
    np.testing.assert_array_equal(gb, a.data)


# -- conv2d ------------------------------------------------------------------

def test_conv_identity_kernel():
    w = np.zeros((1, 1, 3, 3), np.float32)
    w[0, 0, 1, 1] = 1
    x = np.ones((1, 1, 3, 3), np.float32)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), 1, 1)
    np.testing.assert_array_equal(out.data, x)


def test_conv_scalar_affine():
    x = Tensor(np.array([[[[1.0, 2], [3, 4]]]]))
    out = ad.conv2d(x, Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.array([0.5])))
    np.testing.assert_array_equal(out.data[0, 0], [[2.5, 4.5], [6.5, 8.5]])


def test_conv_strided_matches_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1)
    assert out.shape == (1, 3, 3, 3)
    np.testing.assert_allclose(out.data, conv_oracle(x, w, b, 2, 1), atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.integers(1, 3), st.sampled_from([1, 3]),
       st.integers(3, 7), st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**16))
def test_conv_matches_loop_oracle_on_random_shapes(n, cin, cout, k, size, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, cin, size, size + 1)).astype(np.float32)
    w = rng.normal(size=(cout, cin, k, k)).astype(np.float32)
    b = rng.normal(size=cout).astype(np.float32)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad)
    np.testing.assert_allclose(out.data, conv_oracle(x, w, b, stride, pad), atol=1e-5)


def test_conv_errors():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeError):
        ad.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        ad.conv2d(x, Tensor(np.zeros((1, 2, 5, 5))))
    with pytest.raises(ValueError):
        ad.conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), stride=0)


def test_conv_is_deterministic():
    rng = np.random.default_rng(3)
    x, w = Tensor(rng.normal(size=(2, 4, 9, 9))), Tensor(rng.normal(size=(5, 4, 3, 3)))
    assert ad.conv2d(x, w, None, 2, 1).data.tobytes() == ad.conv2d(x, w, None, 2, 1).data.tobytes()


# -- activations, resampling, reductions ---------------------------------------

def test_leaky_relu_values_and_subgradient():
    out = ad.leaky_relu(Tensor([1.0, -1.0, 0.0]), 0.2)
    np.testing.assert_allclose(out.data, [1.0, -0.2, 0.0])
    x = Tensor([0.0, -2.0], requires_grad=True)
    (g,) = ad.grad(ad.sum_all(ad.leaky_relu(x, 0.2)), [x])
    np.testing.assert_allclose(g, [1.0, 0.2])
    with pytest.raises(ValueError):
        ad.leaky_relu(x, 1.0)


def test_leaky_relu_gradient_in_negative_regime():
    x = Tensor([-2.0], requires_grad=True)
    assert ad.finite_diff_check(lambda: ad.sum_all(ad.leaky_relu(x, 0.2)), [x]).passed


def test_nearest_upsample():
    x = Tensor(np.array([[[[1.0, 2], [3, 4]]]]))
    np.testing.assert_array_equal(ad.nearest_upsample(x, 2).data[0, 0],
                                  [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    np.testing.assert_array_equal(ad.nearest_upsample(x, 1).data, x.data)
    with pytest.raises(ValueError):
        ad.nearest_upsample(x, 0)


def test_nearest_upsample_gradient_is_block_sum():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
    up = rng.normal(size=(1, 2, 6, 6))
    (g,) = ad.grad(ad.sum_all(ad.nearest_upsample(x, 2) * Tensor(up)), [x])
    np.testing.assert_allclose(g, up.reshape(1, 2, 3, 2, 3, 2).sum(axis=(3, 5)), rtol=1e-6)


def test_reductions():
    assert ad.reduce(Tensor([1.0, 2, 3]), "sum").item() == 6
    gap = ad.reduce(Tensor(np.full((1, 2, 3, 3), 0.75)), "global_avg_pool")
    assert gap.shape == (1, 2, 1, 1) and np.all(gap.data == 0.75)
    x = Tensor(np.ones((2, 5)), requires_grad=True)
    (g,) = ad.grad(ad.reduce(x, "mean"), [x])
    np.testing.assert_allclose(g, 0.1)
    with pytest.raises(ValueError):
        ad.reduce(Tensor(np.zeros(0)), "sum")


def test_sigmoid_and_log_softmax():
    assert ad.sigmoid_softmax(Tensor([0.0]), "sigmoid").item() == 0.5
    ls = ad.sigmoid_softmax(Tensor(np.zeros((1, 8, 1, 1))), "log_softmax")
    np.testing.assert_allclose(ls.data, np.log(1 / 8), atol=1e-6)
    assert round(float(ls.data[0, 0, 0, 0]), 4) == -2.0794


def test_sigmoid_and_log_softmax_stay_finite_at_extremes():
    x = Tensor(np.array([-80.0, 80.0]))
    s = ad.sigmoid(x).data
    assert np.all(np.isfinite(s)) and 0 <= s[0] < 1e-30 and s[1] == 1.0
    ls = ad.log_softmax(Tensor(np.array([[[[-80.0]], [[80.0]]]])), 1)
    assert np.all(np.isfinite(ls.data))


def test_sigmoid_log_softmax_gradients():
    rng = np.random.default_rng(5)
    z = Tensor(rng.uniform(-4, 4, (3, 5, 1, 1)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 5, 1, 1)))
    assert ad.finite_diff_check(lambda: ad.sum_all(ad.log_softmax(z, 1) * w), [z]).passed
    assert ad.finite_diff_check(lambda: ad.sum_all(ad.sigmoid(z) * w), [z]).passed


# -- backward ----------------------------------------------------------------

def test_backward_basics():
    x = Tensor(np.arange(4.0), requires_grad=True)
    w = Tensor(np.array([3.0, -1, 2, 0.5]))
    np.testing.assert_array_equal(ad.grad(ad.sum_all(x), [x])[0], np.ones(4))
    np.testing.assert_array_equal(ad.grad(ad.sum_all(x * w), [x])[0], w.data)


def test_fan_out_accumulates():
    x = Tensor(np.ones(3), requires_grad=True)
    (g,) = ad.grad(ad.sum_all(x) + ad.sum_all(x), [x])
    np.testing.assert_array_equal(g, 2.0)


def test_unreachable_leaf_gets_zero_and_loss_must_be_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    y = Tensor(np.ones((2, 2)), requires_grad=True)
    gx, gy = ad.grad(ad.sum_all(x), [x, y])
    assert gy.shape == (2, 2) and not gy.any()
    with pytest.raises(ShapeError):
        ad.grad(x * 2.0, [x])


def test_backward_mapping_and_tensor_backward():
    x = Tensor(np.ones(2), requires_grad=True)
    grads = ad.backward(ad.sum_all(x * 3.0), {"x": x})
    np.testing.assert_array_equal(grads["x"], 3.0)
    loss = ad.sum_all(x * x)
    loss.backward()
    np.testing.assert_array_equal(x.grad, 2.0)


def test_backward_visits_nodes_in_decreasing_creation_order():
    x = Tensor(np.ones(2), requires_grad=True)
    y = x * 2.0
    z = y + x
    loss = ad.sum_all(z * y)
    assert x.node_id < y.node_id < z.node_id < loss.node_id
    order = ad.backward_order(loss)
    assert [t.node_id for t in order] == sorted((t.node_id for t in order), reverse=True)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_composite_conv_leaky_mean():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    rep = ad.finite_diff_check(lambda: ad.mean(ad.leaky_relu(ad.conv2d(x, w, b, 1, 1), 0.2)), [x, w, b])
    assert rep.passed, rep.errors


# -- finite_diff_check ---------------------------------------------------------

def test_gradcheck_identity_and_constant():
    x = Tensor(np.ones(4), requires_grad=True)
    # A power-of-two step keeps the central difference exact.
    rep = ad.finite_diff_check(lambda: ad.sum_all(x), [x], eps=0.25)
    assert rep.passed and rep.max_error == 0.0
    const = Tensor(np.ones(1))
    rep = ad.finite_diff_check(lambda: ad.sum_all(const * 2.0), [x])
    assert rep.passed


def test_gradcheck_detects_a_wrong_gradient():
    x = Tensor(np.array([0.3, 0.7]), requires_grad=True)

    def broken():
        y = x * x
        return ad.sum_all(Tensor(y.data * 1.0, requires_grad=True, _parents=(x,),
                                 _backward=lambda g: (g,), _op="bad"))

    rep = ad.finite_diff_check(broken, [x])
    assert not rep.passed and rep.max_error > 0.1


def test_gradcheck_rejects_nondeterministic_f():
    x = Tensor(np.ones(2), requires_grad=True)
    rng = np.random.default_rng(0)
    with pytest.raises(NondeterministicError):
        ad.finite_diff_check(lambda: ad.sum_all(x * float(rng.uniform())), [x])
    with pytest.raises(ValueError):
        ad.finite_diff_check(lambda: ad.sum_all(x), [x], eps=0.0)


def test_gradcheck_restores_parameters_and_subsamples_deterministically():
    x = Tensor(np.random.default_rng(0).normal(size=100).astype(np.float32), requires_grad=True)
    before = x.data.copy()
    r1 = ad.finite_diff_check(lambda: ad.sum_all(x * x), [x], max_coords=5, seed=3)
    r2 = ad.finite_diff_check(lambda: ad.sum_all(x * x), [x], max_coords=5, seed=3)
    assert x.data.dtype == np.float32 and np.array_equal(x.data, before)
    assert r1.checked == {"p0": 5} and r1.errors == r2.errors


def test_relative_error_floor():
    assert ad.relative_error(0.0, 0.0, 1e-7) == 0.0
    assert ad.relative_error(1.0, 0.5, 1e-7) == pytest.approx(0.5)
