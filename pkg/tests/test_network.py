import numpy as np
import pytest

from spdz_transfer.cnn.network import (
    Conv,
    Full,
    NetworkSpec,
    Pool,
    backward,
    conv_forward,
    evaluate,
    forward,
    get_network,
    init_params,
    pool_backward,
    pool_forward,
    sgd_step,
    softmax_cross_entropy,
    zero_params,
)
from spdz_transfer.errors import ShapeMismatch


def toy_spec(hooks=("pool2",)):
    layers = (Conv("conv1", 3, 2), Pool("pool2"), Full("full3", 3))
    return NetworkSpec("toy", layers, input_shape=(6, 6, 1), hooks=hooks)


def test_network_shape_chains():
    assert get_network("I").shapes() == [(24, 24, 6), (12, 12, 6), (8, 8, 12), (4, 4, 12), (10,)]
    assert get_network("II").shapes() == [(24, 24, 20), (12, 12, 20), (100,), (10,)]
    assert get_network("III").shapes() == [
        (28, 28, 6), (14, 14, 6), (10, 10, 16), (5, 5, 16), (1, 1, 120), (84,), (10,)
    ]
    assert get_network("I").hook_shapes() == {"pool2": (12, 12, 6), "pool4": (4, 4, 12)}


def test_bad_specs_rejected():
    with pytest.raises(ValueError):
        get_network("I", hooks=["conv1"])
    with pytest.raises(ValueError):
        get_network("IV")
    with pytest.raises(ShapeMismatch):
        NetworkSpec("bad", (Conv("c", 9, 1), Full("f", 2)), input_shape=(6, 6, 1))
    with pytest.raises(ShapeMismatch):
        forward(toy_spec(), init_params(toy_spec(), np.random.default_rng(0)), np.zeros((1, 5, 5, 1)))


def test_zero_weights_give_zero_logits(rng):
    spec = get_network("I")
    logits = forward(spec, zero_params(spec), rng.random((3, 28, 28, 1))).logits
    assert logits.shape == (3, 10) and not logits.any()


def test_identity_conv(rng):
    x = rng.normal(size=(2, 5, 5, 1))
    out, _ = conv_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1), 0)
    assert np.array_equal(out, x)


def test_pool_backward_routes_to_argmax():
    x = np.zeros((1, 2, 2, 1))
    x[0, 1, 0, 0] = 5.0
    out, cache = pool_forward(x, 2)
    assert out[0, 0, 0, 0] == 5.0
    dx = pool_backward(np.ones((1, 1, 1, 1)), 2, cache)
    expect = np.zeros_like(x)
    expect[0, 1, 0, 0] = 1.0
    assert np.array_equal(dx, expect)


def _flat_loss(spec, params, x, y):
    return softmax_cross_entropy(forward(spec, params, x).logits, y)[0]


@pytest.mark.parametrize("hooks", [(), ("pool2",)])
def test_gradient_matches_central_differences(hooks):
    rng = np.random.default_rng(7)
    spec = toy_spec(hooks)
    params = init_params(spec, rng)
    x = rng.normal(size=(4, 6, 6, 1))
    y = rng.integers(0, 3, size=4)
    fwd = forward(spec, params, x)
    _, dlogits = softmax_cross_entropy(fwd.logits, y)
    grads, _ = backward(spec, params, fwd, dlogits)
    h = 1e-5
    worst = 0.0
    for name, (w, b) in params.items():
        for which, arr in ((0, w), (1, b)):
            for idx in np.ndindex(arr.shape):
                def shifted(delta):
                    p = {k: (v[0].copy(), v[1].copy()) for k, v in params.items()}
                    p[name][which][idx] += delta
                    return _flat_loss(spec, p, x, y)

                num = (shifted(h) - shifted(-h)) / (2 * h)
                ana = grads[name][which][idx]
                # the floor covers gradients that are exactly zero (a conv bias
                # ahead of batch standardization), where the quotient is roundoff
                worst = max(worst, abs(num - ana) / max(abs(num) + abs(ana), 1e-6))
    assert worst < 1e-4


def test_hook_gradient_matches_input_perturbation():
    """Gradient reported at a hook equals the derivative of the loss w.r.t. an additive offset there."""
    rng = np.random.default_rng(3)
    spec = toy_spec()
    params = init_params(spec, rng)
    x = rng.normal(size=(2, 6, 6, 1))
    y = np.array([0, 2])
    fwd = forward(spec, params, x)
    _, dlogits = softmax_cross_entropy(fwd.logits, y)
    _, hook_grads = backward(spec, params, fwd, dlogits)
    g = hook_grads["pool2"]
    offset = rng.normal(size=g.shape)
    h = 1e-6

    def loss_at(t):
        logits = forward(spec, params, x, hook_fn=lambda name, a: a + t * offset).logits
        return softmax_cross_entropy(logits, y)[0]

    num = (loss_at(h) - loss_at(-h)) / (2 * h)
    assert num == pytest.approx(np.sum(g * offset), rel=1e-5)


def test_duplicated_sample_doubles_summed_gradient(rng):
    spec = toy_spec(())
    params = init_params(spec, rng)
    x = rng.normal(size=(1, 6, 6, 1))
    y = np.array([1])

    def summed_grad(batch_x, batch_y):
        fwd = forward(spec, params, batch_x)
        _, d = softmax_cross_entropy(fwd.logits, batch_y)
        return backward(spec, params, fwd, d * len(batch_y))[0]

    one = summed_grad(x, y)
    two = summed_grad(np.concatenate([x, x]), np.concatenate([y, y]))
    for k in one:
        assert np.allclose(two[k][0], 2 * one[k][0]) and np.allclose(two[k][1], 2 * one[k][1])


def test_confident_prediction_has_tiny_gradient():
    logits = np.array([[50.0, 0.0, 0.0]])
    loss, d = softmax_cross_entropy(logits, np.array([0]))
    assert loss < 1e-15 and np.max(np.abs(d)) < 1e-15


def test_random_network_is_near_chance(rng):
    spec = get_network("I")
    params = init_params(spec, rng)
    x = rng.random((1000, 28, 28, 1))
    y = rng.integers(0, 10, size=1000)
    assert abs(evaluate(spec, params, x, y) - 0.1) <= 0.03


def test_memorizes_ten_samples(rng):
    spec = toy_spec(()).with_dropout(1.0)
    params = init_params(spec, rng)
    x = rng.normal(size=(3, 6, 6, 1))
    y = np.array([0, 1, 2])
    for _ in range(500):
        fwd = forward(spec, params, x)
        _, d = softmax_cross_entropy(fwd.logits, y)
        params = sgd_step(params, backward(spec, params, fwd, d)[0], 0.5)
    assert evaluate(spec, params, x, y) == 1.0

    spec = get_network("I", dropout_keep=1.0)
    params = init_params(spec, rng)
    x = rng.random((10, 28, 28, 1))
    y = np.arange(10)
    for _ in range(300):
        fwd = forward(spec, params, x, train=True)
        _, d = softmax_cross_entropy(fwd.logits, y)
        params = sgd_step(params, backward(spec, params, fwd, d)[0], 0.1)
    assert evaluate(spec, params, x, y) == 1.0


def test_empty_test_set_is_an_error(rng):
    spec = get_network("I")
    with pytest.raises(ValueError):
        evaluate(spec, init_params(spec, rng), np.zeros((0, 28, 28, 1)), np.zeros(0, dtype=int))


def test_dropout_needs_rng(rng):
    spec = get_network("I")
    with pytest.raises(ValueError):
        forward(spec, init_params(spec, rng), np.zeros((1, 28, 28, 1)), train=True)
