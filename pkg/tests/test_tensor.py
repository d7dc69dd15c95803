"""张量与记录带"""
import numpy as np
import pytest

from app.engine import ops
from app.engine.tensor import GradientTape, Tensor
from app.utils.errors import NumericError, ShapeError, TapeError


def test_tensor_copies_input_and_reports_shape():
    data = np.arange(6.0).reshape(2, 3)
    t = Tensor(data)
    data[0, 0] = 100.0
    assert t.shape == (2, 3)
    assert t.ndim == 2
    assert t.size == 6
    assert t.data[0, 0] == 0.0


def test_backward_accumulates_into_leaves():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_shared_input_gradient_is_summed():
    x = Tensor([2.0], requires_grad=True)
    loss = (x * 3.0 + x * x).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, [3.0 + 4.0])


def test_broadcast_add_reduces_gradient_to_operand_shape():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_allclose(b.grad, np.full((1, 3), 4.0))
    np.testing.assert_allclose(a.grad, np.ones((4, 3)))


def test_second_backward_on_same_graph_fails():
    x = Tensor([1.0, -1.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(TapeError):
        loss.backward()


def test_tape_cannot_be_replayed():
    x = Tensor([1.0], requires_grad=True)
    tape = GradientTape.record((x * 2.0).sum())
    tape.backward()
    with pytest.raises(TapeError):
        tape.backward()


def test_loss_without_gradient_path_is_empty_tape():
    x = Tensor([1.0, 2.0])
    with pytest.raises(TapeError):
        (x * 2.0).sum().backward()


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_detached_tensor_receives_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x * 2.0
    loss = (y.detach() * x).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, y.data)


def test_recorded_operations_are_in_forward_order():
    x = Tensor([1.0], requires_grad=True)
    y = x * 2.0
    z = y + 1.0
    loss = z.sum()
    tape = GradientTape.record(loss)
    assert [type(op).__name__ for op in tape.operations] == ["Mul", "Add", "Sum"]


def test_non_finite_result_raises():
    with pytest.raises(NumericError):
        ops.mul(Tensor([1e308]), 1e308)


def test_sign_of_zero_is_zero():
    np.testing.assert_array_equal(ops.sign(np.array([-2.0, 0.0, 3.0])).data, [-1.0, 0.0, 1.0])


def test_clip_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        ops.clip(Tensor([0.5]), 1.0, 0.0)


def test_heaviside_is_strict_and_rejects_non_positive_width():
    spikes = ops.heaviside_surrogate(Tensor([0.5, 1.0, 1.5]), v_th=1.0, a=0.5)
    np.testing.assert_array_equal(spikes.data, [0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        ops.heaviside_surrogate(Tensor([1.0]), v_th=1.0, a=0.0)


def test_cross_entropy_validates_labels():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ops.cross_entropy(logits, [0, 3])
    with pytest.raises(ShapeError):
        ops.cross_entropy(logits, [0])


def test_cross_entropy_of_uniform_logits_is_log_k():
    loss = ops.cross_entropy(Tensor(np.zeros((1, 4))), [2])
    assert loss.item() == pytest.approx(np.log(4.0))


def test_conv2d_reports_mismatched_channels():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))), padding=1)


def test_cosine_similarity_with_zero_vector_is_zero():
    a = Tensor(np.zeros((1, 4)))
    b = Tensor(np.ones((1, 4)))
    assert ops.cosine_similarity(a, b).data[0] == 0.0


def _conv_reference(x, w, stride, padding):
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, _, height, width = padded.shape
    filters, _, kh, kw = w.shape
    out_h = (height - kh) // stride + 1
    out_w = (width - kw) // stride + 1
    out = np.zeros((n, filters, out_h, out_w))
    for b in range(n):
        for f in range(filters):
            for i in range(out_h):
                for j in range(out_w):
                    patch = padded[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, f, i, j] = np.sum(patch * w[f])
    return out


def test_conv2d_all_ones_sums_the_kernel():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out.data[0, 0, 0, 0] == 9.0
    padded = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    assert padded.data[0, 0, 1, 1] == 9.0
    assert padded.data[0, 0, 0, 0] == 4.0


def test_conv2d_identity_kernel_returns_input():
    x = np.random.default_rng(1).uniform(size=(2, 1, 5, 5))
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    out = ops.conv2d(Tensor(x), Tensor(kernel), padding=1)
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_loop_reference(stride, padding):
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 2, 2))
    out = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, _conv_reference(x, w, stride, padding), rtol=0, atol=1e-6)


def _bn(x, gamma, beta, mean, var, **kwargs):
    return ops.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), Tensor(mean), Tensor(var), **kwargs)


def test_batchnorm_with_unit_statistics_is_identity():
    x = np.random.default_rng(3).normal(size=(2, 3, 2, 2))
    out = _bn(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), training=False, eps=0.0)
    np.testing.assert_allclose(out.data, x, rtol=0, atol=1e-12)


def test_batchnorm_constant_batch_maps_to_zero():
    x = np.full((4, 2, 3, 3), 0.7)
    out = _bn(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), training=True)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_batchnorm_batch_statistics_match_reference():
    rng = np.random.default_rng(4)
    x = rng.normal(loc=2.0, scale=3.0, size=(5, 3, 2, 2))
    gamma, beta = rng.normal(size=3), rng.normal(size=3)
    running_mean, running_var = Tensor(np.zeros(3)), Tensor(np.ones(3))
    eps = 1e-5
    out = ops.batchnorm(
        Tensor(x), Tensor(gamma), Tensor(beta), running_mean, running_var,
        training=True, momentum=1.0, eps=eps,
    )
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    expected = (x - mu[None, :, None, None]) / np.sqrt(var[None, :, None, None] + eps)
    expected = expected * gamma[None, :, None, None] + beta[None, :, None, None]
    np.testing.assert_allclose(out.data, expected, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(running_mean.data, mu, rtol=1e-12)
    np.testing.assert_allclose(running_var.data, x.var(axis=(0, 2, 3), ddof=1), rtol=1e-12)


def test_sign_times_gradient_is_absolute_value():
    g = np.random.default_rng(5).normal(size=(3, 4))
    g[0, 0] = 0.0
    np.testing.assert_array_equal(ops.sign(g).data * g, np.abs(g))


def test_clipped_sign_step_respects_budget_and_pixel_domain():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(3, 6, 6))
    eps = 8 / 255
    stepped = ops.clip(Tensor(x) + ops.sign(rng.normal(size=x.shape)) * eps, 0.0, 1.0).data
    assert np.max(np.abs(stepped - x)) <= eps + 1e-12
    assert stepped.min() >= 0.0 and stepped.max() <= 1.0
