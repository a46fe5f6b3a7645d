"""Tests for the reverse-mode tape: primitives against finite differences
and hand-worked oracles."""

import numpy as np

from skelact.tensor import (
    Tensor,
    add,
    backward,
    broadcast,
    concat,
    finite_difference_check,
    inv_sqrt_or_zero,
    log,
    matmul,
    mean_over_axis,
    multiply,
    no_grad,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    softmax_cross_entropy,
    sum_over_axis,
    tanh,
    transpose,
)


def test_primitives_match_finite_differences():
    # one scalar probe per primitive, looped over seeds so oddly-shaped
    # broadcasts and negative values all get exercised
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        c = Tensor(rng.normal(size=(2,)), requires_grad=True)
        pos = Tensor(np.abs(rng.normal(size=(3, 4))) + 0.5, requires_grad=True)

        probes = {
            "matmul": lambda: mean_over_axis(reshape(matmul(a, b) * matmul(a, b), (-1,)), 0),
            "add_broadcast": lambda: mean_over_axis(reshape(add(matmul(a, b), c) * add(matmul(a, b), c), (-1,)), 0),
            "multiply": lambda: mean_over_axis(reshape(multiply(a, a) * a, (-1,)), 0),
            "sigmoid_tanh": lambda: mean_over_axis(reshape(sigmoid(a) * tanh(a), (-1,)), 0),
            "log": lambda: mean_over_axis(reshape(log(pos), (-1,)), 0),
            "inv_sqrt": lambda: mean_over_axis(reshape(inv_sqrt_or_zero(pos) * pos, (-1,)), 0),
            "reshape_transpose": lambda: mean_over_axis(
                reshape(transpose(reshape(a, (4, 3))) * a, (-1,)), 0
            ),
            "concat_slice": lambda: mean_over_axis(
                reshape(slice_(concat([a, a], axis=1), (slice(None), slice(2, 6))) * a, (-1,)), 0
            ),
            "broadcast_sum": lambda: mean_over_axis(
                reshape(broadcast(c, (3, 2)) * matmul(a, b), (-1,)), 0
            ),
            "reductions": lambda: sum_over_axis(mean_over_axis(a * a, 1), 0),
            "softmax": lambda: mean_over_axis(reshape(softmax(a, axis=1) * a, (-1,)), 0),
        }
        for name, fn in probes.items():
            report = finite_difference_check(fn, {"a": a, "b": b, "c": c, "pos": pos})
            assert report.max_rel_error < 1e-5, f"{name} seed {seed}: {report}"


def test_relu_gradient_masks_negatives():
    x = Tensor(np.array([-2.0, -0.5, 0.5, 3.0]), requires_grad=True)
    y = sum_over_axis(relu(x), 0)
    grads = backward(y)
    assert np.array_equal(grads[x], [0.0, 0.0, 1.0, 1.0])


def test_inv_sqrt_or_zero_is_zero_at_zero():
    x = Tensor(np.array([0.0, 4.0, 9.0]), requires_grad=True)
    y = inv_sqrt_or_zero(x)
    assert np.array_equal(y.data, [0.0, 0.5, 1.0 / 3.0])
    grads = backward(sum_over_axis(y, 0))
    # d(x^-1/2)/dx = -1/2 x^-3/2; the zero entry must not produce inf/nan
    assert grads[x][0] == 0.0
    assert np.allclose(grads[x][1:], [-0.5 * 4.0**-1.5, -0.5 * 9.0**-1.5])


def test_gradients_accumulate_across_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = add(multiply(x, x), x)  # x^2 + x -> dy/dx = 2x + 1 = 7
    grads = backward(sum_over_axis(y, 0))
    assert np.allclose(grads[x], [7.0])


def test_backward_is_repeatable():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    loss = mean_over_axis(reshape(sigmoid(matmul(x, x)), (-1,)), 0)
    g1 = backward(loss)
    g2 = backward(loss)
    assert np.array_equal(g1[x], g2[x])


def test_no_grad_builds_constants():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        y = matmul(x, x)
    assert not y.requires_grad
    assert y._parents == ()


def test_broadcast_gradient_sums_over_expanded_axes():
    c = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = broadcast(c, (3, 2))
    grads = backward(sum_over_axis(sum_over_axis(y, 0), 0))
    assert np.array_equal(grads[c], [3.0, 3.0])


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(5, 7))
    p = softmax(Tensor(z), axis=1).data
    assert np.allclose(p.sum(axis=1), 1.0)
    p_shift = softmax(Tensor(z + 1000.0), axis=1).data
    assert np.allclose(p, p_shift)


def _ce_oracle(logits, labels, mask):
    """Independent masked cross-entropy in plain numpy."""
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
    picked = np.take_along_axis(p, labels[..., None], axis=-1)[..., 0]
    return float((-np.log(picked) * mask).sum() / mask.sum())


def test_cross_entropy_matches_oracle_and_masks():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(3, 6, 4))
        labels = rng.integers(0, 4, size=(3, 6))
        mask = (rng.random(size=(3, 6)) > 0.3).astype(float)
        mask[0, 0] = 1.0  # keep the denominator nonzero
        got = softmax_cross_entropy(Tensor(logits), labels, mask)
        assert abs(float(got.data) - _ce_oracle(logits, labels, mask)) < 1e-12

        # masked frames contribute exactly zero gradient
        t = Tensor(logits, requires_grad=True)
        grads = backward(softmax_cross_entropy(t, labels, mask))
        assert np.all(grads[t][mask == 0.0] == 0.0)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    t = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=(2, 5))
    mask = np.ones((2, 5))
    mask[1, 4] = 0.0
    report = finite_difference_check(
        lambda: softmax_cross_entropy(t, labels, mask), {"logits": t}
    )
    assert report.max_rel_error < 1e-7
