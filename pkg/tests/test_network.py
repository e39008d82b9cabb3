"""Network math: causal convolution, forward pass, BCE, analytic gradients."""

import math

import numpy as np
import pytest

from promopt.network import (
    Batch,
    NetworkConfig,
    backward,
    bce_loss,
    causal_dilated_conv,
    forward,
    init_params,
    loss_and_grads,
)


def brute_force_conv(x, f, d):
    """Direct evaluation of out[k] = sum_i f[i] * x[k - d*i]."""
    out = np.zeros(len(x))
    for k in range(len(x)):
        acc = 0.0
        for i in range(len(f)):
            j = k - d * i
            if j >= 0:
                acc += f[i] * x[j]
        out[k] = acc
    return out


class TestCausalDilatedConv:
    def test_hand_case_dilation_1(self):
        np.testing.assert_array_equal(causal_dilated_conv([1, 2, 3, 4], [1, 1], 1), [1, 3, 5, 7])

    def test_hand_case_dilation_2(self):
        np.testing.assert_array_equal(causal_dilated_conv([1, 2, 3, 4], [1, 1], 2), [1, 2, 4, 6])

    def test_identity_filter(self):
        x = np.array([3.0, -1.0, 2.5, 0.0, 9.0])
        for d in (1, 2, 5):
            np.testing.assert_array_equal(causal_dilated_conv(x, [1.0], d), x)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            length = int(rng.integers(1, 30))
            taps = int(rng.integers(1, 6))
            d = int(rng.integers(1, 6))
            x = rng.normal(size=length)
            f = rng.normal(size=taps)
            np.testing.assert_array_equal(causal_dilated_conv(x, f, d), brute_force_conv(x, f, d))

    def test_no_future_dependence(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=12)
        f = rng.normal(size=3)
        base = causal_dilated_conv(x, f, 2)
        x2 = x.copy()
        x2[9:] = 100.0
        np.testing.assert_array_equal(causal_dilated_conv(x2, f, 2)[:9], base[:9])


class TestBceLoss:
    def test_confident_correct_goes_to_zero(self):
        assert bce_loss([1.0 - 1e-9], [1.0]) < 1e-8

    def test_half_probability(self):
        assert math.isclose(bce_loss([0.5], [1.0]), math.log(2.0), rel_tol=1e-12)

    def test_two_terms(self):
        assert math.isclose(bce_loss([0.9, 0.1], [1.0, 0.0]), -math.log(0.9), rel_tol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss([0.5, 0.5], [1.0])

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, 50)
        y = rng.integers(0, 2, 50).astype(float)
        assert bce_loss(p, y) >= 0.0


def tiny_config(temporal_cont_dim=5, static_cont_dim=3, n_lags=6):
    return NetworkConfig(
        static_vocab_sizes=(5, 4),
        temporal_vocab_sizes=(13,),
        static_cont_dim=static_cont_dim,
        temporal_cont_dim=temporal_cont_dim,
        n_lags=n_lags,
        static_embed_dims=(2, 2),
        temporal_embed_dims=(2,),
        kernel_size=2,
        dilations=(1, 2, 4),
        channels=(4, 4, 4),
        fc_widths=(8, 8, 8),
    )


def random_batch(config, n, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    return Batch(
        static_cat=rng.integers(0, np.array(config.static_vocab_sizes), size=(n, len(config.static_vocab_sizes))),
        temporal_cat=rng.integers(
            0, np.array(config.temporal_vocab_sizes), size=(n, config.n_lags, len(config.temporal_vocab_sizes))
        ),
        static_cont=rng.normal(size=(n, config.static_cont_dim)),
        temporal_cont=rng.normal(size=(n, config.n_lags, config.temporal_cont_dim)),
        labels=rng.integers(0, 2, size=n).astype(np.float64) if labels else None,
    )


class TestForward:
    def test_all_zero_weights_give_half(self):
        config = tiny_config()
        params = {k: np.zeros_like(v) for k, v in init_params(config, np.random.default_rng(0)).items()}
        batch = random_batch(config, 7)
        np.testing.assert_array_equal(forward(batch, params, config), np.full(7, 0.5))

    def test_duplicated_rows_identical_outputs(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(1))
        batch = random_batch(config, 3, seed=5)
        doubled = batch.take(np.array([0, 1, 2, 0, 1, 2]))
        probs = forward(doubled, params, config)
        np.testing.assert_array_equal(probs[:3], probs[3:])

    def test_output_length_and_range(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(2))
        probs = forward(random_batch(config, 11), params, config)
        assert probs.shape == (11,)
        assert np.all((probs > 0) & (probs < 1))

    def test_shape_mismatch_is_an_error(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(3))
        batch = random_batch(config, 4)
        batch.temporal_cont = batch.temporal_cont[:, :, :-1]
        with pytest.raises(ValueError):
            forward(batch, params, config)

    def test_conv_stack_is_causal_under_perturbation(self):
        # changing the last lag's continuous inputs must not change what the
        # network would compute at earlier time steps
        config = tiny_config()
        params = init_params(config, np.random.default_rng(4))
        from promopt.network import _conv_layer_forward

        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, config.n_lags, config.conv_input_dim))
        x_perturbed = x.copy()
        x_perturbed[:, -1, :] += 3.0

        def stack(seq):
            a = seq
            for l, d in enumerate(config.dilations):
                a = np.maximum(_conv_layer_forward(a, params[f"conv{l}_w"], params[f"conv{l}_b"], d), 0.0)
            return a

        np.testing.assert_array_equal(stack(x)[:, :-1, :], stack(x_perturbed)[:, :-1, :])


def finite_difference_grads(batch, params, config, h=1e-5):
    def loss_at(p):
        loss, _ = loss_and_grads(batch, p, config)
        return loss

    grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = loss_at(params)
            flat[i] = original - h
            down = loss_at(params)
            flat[i] = original
            grad_flat[i] = (up - down) / (2 * h)
        grads[name] = grad
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in analytic:
        a = analytic[name].reshape(-1)
        n = numeric[name].reshape(-1)
        for ai, ni in zip(a, n):
            scale = max(abs(ai), abs(ni))
            if scale < 1e-8:
                continue
            worst = max(worst, abs(ai - ni) / scale)
    return worst


class TestGradients:
    def test_matches_central_finite_differences(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(10))
        batch = random_batch(config, 4, seed=11)
        _, analytic = loss_and_grads(batch, params, config)
        numeric = finite_difference_grads(batch, params, config)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_unreferenced_embedding_row_has_zero_gradient(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(12))
        batch = random_batch(config, 4, seed=13)
        batch.static_cat[:, 0] = 1  # only row 1 of emb_s0 is touched
        grads = backward(batch, params, config)
        np.testing.assert_array_equal(grads["emb_s0"][0], 0.0)
        np.testing.assert_array_equal(grads["emb_s0"][2:], 0.0)
        assert np.any(grads["emb_s0"][1] != 0.0)

    def test_duplicating_batch_leaves_mean_gradients_unchanged(self):
        config = tiny_config()
        params = init_params(config, np.random.default_rng(14))
        batch = random_batch(config, 4, seed=15)
        doubled = batch.take(np.array([0, 1, 2, 3, 0, 1, 2, 3]))
        grads_single = backward(batch, params, config)
        grads_double = backward(doubled, params, config)
        for name in grads_single:
            np.testing.assert_allclose(grads_single[name], grads_double[name], rtol=1e-12, atol=1e-15)
