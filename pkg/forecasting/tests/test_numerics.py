import math

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from forecasting import numerics as nx
from forecasting.exceptions import (
    ConfigurationError, DimensionError, NumericalError, OracleError,
)


def attention_params(width, rng=None, identity=False):
    params = {}
    for proj in ('q', 'k', 'v', 'o'):
        w = np.eye(width) if identity else rng.normal(0.0, 0.5, size=(width, width))
        params[f'w_{proj}'] = nx.Tensor(w)
        params[f'b_{proj}'] = nx.Tensor(np.zeros(width) if identity else rng.normal(0.0, 0.1, size=width))
    return params


class Conv1dTests(SimpleTestCase):
    def test_identity_kernel_returns_input(self):
        out = nx.conv1d(nx.Tensor([[1.0, 2.0, 3.0]]), nx.Tensor([[[1.0]]]), nx.Tensor([0.0]))
        assert_array_equal(out.numpy(), [[1.0, 2.0, 3.0]])

    def test_two_tap_kernel(self):
        out = nx.conv1d(nx.Tensor([[1.0, 2.0, 3.0]]), nx.Tensor([[[1.0, 1.0]]]), nx.Tensor([0.0]))
        assert_array_equal(out.numpy(), [[3.0, 5.0]])

    def test_zero_kernel(self):
        out = nx.conv1d(nx.Tensor([[1.0, 2.0, 3.0]]), nx.Tensor([[[0.0, 0.0]]]), nx.Tensor([0.0]))
        assert_array_equal(out.numpy(), [[0.0, 0.0]])

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 7))
        k = rng.normal(size=(3, 2, 3))
        b = rng.normal(size=3)
        out = nx.conv1d(nx.Tensor(x), nx.Tensor(k), nx.Tensor(b), padding=1).numpy()

        padded = np.pad(x, ((0, 0), (1, 1)))
        expected = np.zeros((3, 7))
        for c in range(3):
            for t in range(7):
                expected[c, t] = b[c] + sum(k[c, i, w] * padded[i, t + w] for i in range(2) for w in range(3))
        assert_allclose(out, expected, atol=1e-12)

    def test_dilated_causal_padding_keeps_length(self):
        x = nx.Tensor(np.arange(8.0).reshape(1, 8))
        out = nx.conv1d(x, nx.Tensor([[[1.0, 0.0]]]), nx.Tensor([0.0]), padding=(2, 0), dilation=2)
        # first tap looks two steps back
        assert_array_equal(out.numpy(), [[0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]])

    def test_channel_mismatch(self):
        with self.assertRaises(DimensionError):
            nx.conv1d(nx.Tensor(np.zeros((2, 4))), nx.Tensor(np.zeros((1, 3, 2))), nx.Tensor([0.0]))

    def test_kernel_wider_than_padded_input(self):
        with self.assertRaises(ConfigurationError):
            nx.conv1d(nx.Tensor([[1.0, 2.0]]), nx.Tensor(np.ones((1, 1, 4))), nx.Tensor([0.0]))


class LayerNormTests(SimpleTestCase):
    def test_constant_input_normalizes_to_zero(self):
        out = nx.layer_norm(nx.Tensor([5.0, 5.0, 5.0]), nx.Tensor(np.ones(3)), nx.Tensor(np.zeros(3)))
        assert_array_equal(out.numpy(), [0.0, 0.0, 0.0])

    def test_population_variance(self):
        out = nx.layer_norm(nx.Tensor([1.0, 2.0, 3.0]), nx.Tensor(np.ones(3)), nx.Tensor(np.zeros(3)), eps=1e-12)
        assert_allclose(out.numpy(), [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_zero_scale_gives_beta(self):
        beta = np.array([0.5, -1.0, 2.0])
        x = nx.Tensor(np.random.default_rng(0).normal(size=(4, 3)))
        out = nx.layer_norm(x, nx.Tensor(np.zeros(3)), nx.Tensor(beta))
        assert_array_equal(out.numpy(), np.broadcast_to(beta, (4, 3)))

    def test_empty_axis(self):
        with self.assertRaises(DimensionError):
            nx.layer_norm(nx.Tensor(np.zeros((2, 0))), nx.Tensor(np.zeros(0)), nx.Tensor(np.zeros(0)))


class SoftmaxTests(SimpleTestCase):
    def test_uniform(self):
        assert_allclose(nx.softmax_last(nx.Tensor([2.0, 2.0, 2.0])).numpy(), [1 / 3] * 3)

    def test_log_two(self):
        assert_allclose(nx.softmax_last(nx.Tensor([0.0, math.log(2.0)])).numpy(), [1 / 3, 2 / 3])

    def test_large_inputs_do_not_overflow(self):
        out = nx.softmax_last(nx.Tensor([1000.0, 0.0])).numpy()
        self.assertAlmostEqual(out[0], 1.0)
        self.assertAlmostEqual(out[1], 0.0)

    def test_slices_sum_to_one(self):
        x = np.random.default_rng(1).uniform(-1e4, 1e4, size=(5, 7))
        sums = nx.softmax_last(nx.Tensor(x)).numpy().sum(axis=-1)
        assert_allclose(sums, np.ones(5), atol=1e-9)


class AttentionTests(SimpleTestCase):
    def test_single_token_reduces_to_value_and_output_projections(self):
        rng = np.random.default_rng(2)
        params = attention_params(4, rng)
        x = rng.normal(size=(1, 4))
        out = nx.multi_head_attention(nx.Tensor(x), params, heads=2).numpy()
        v = x @ params['w_v'].numpy() + params['b_v'].numpy()
        assert_allclose(out, v @ params['w_o'].numpy() + params['b_o'].numpy(), atol=1e-12)

    def test_identical_rows_give_identical_outputs(self):
        rng = np.random.default_rng(4)
        row = rng.normal(size=4)
        out = nx.multi_head_attention(nx.Tensor(np.tile(row, (3, 1))), attention_params(4, rng), heads=2).numpy()
        assert_allclose(out[0], out[1])
        assert_allclose(out[1], out[2])

    def test_identity_projections_match_hand_oracle(self):
        x = np.eye(2)
        out = nx.multi_head_attention(nx.Tensor(x), attention_params(2, identity=True), heads=1).numpy()
        scores = x @ x.T / math.sqrt(2.0)
        weights = np.exp(scores) / np.exp(scores).sum(axis=-1, keepdims=True)
        assert_allclose(out, weights @ x, atol=1e-12)
        high = math.exp(1 / math.sqrt(2.0))
        assert_allclose(out[0], [high / (high + 1), 1 / (high + 1)], atol=1e-12)

    def test_width_not_divisible_by_heads(self):
        with self.assertRaises(ConfigurationError):
            nx.multi_head_attention(nx.Tensor(np.zeros((2, 6))), attention_params(6, np.random.default_rng(0)), heads=4)


class AdamWTests(SimpleTestCase):
    def make_param(self, value):
        params = nx.ParameterSet()
        params.add('theta', np.array([value]))
        return params

    def test_zero_gradient_without_decay_is_identity(self):
        params = self.make_param(1.5)
        params['theta'].grad = np.zeros(1)
        optimizer = nx.AdamW(params, lr=0.1, weight_decay=0.0)
        optimizer.step()
        assert_array_equal(params['theta'].numpy(), [1.5])

    def test_decoupled_decay(self):
        params = self.make_param(1.0)
        params['theta'].grad = np.zeros(1)
        nx.AdamW(params, lr=0.1, weight_decay=0.01).step()
        assert_allclose(params['theta'].numpy(), [0.999])

    def test_first_step_moves_by_learning_rate(self):
        params = self.make_param(1.0)
        params['theta'].grad = np.ones(1)
        optimizer = nx.AdamW(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0)
        optimizer.step()
        assert_allclose(params['theta'].numpy(), [1.0 - 1e-3], atol=1e-10)
        self.assertEqual(optimizer.state.step, 1)
        self.assertTrue(np.all(optimizer.state.v['theta'] >= 0))

    def test_non_finite_gradient_names_parameter(self):
        params = self.make_param(1.0)
        params['theta'].grad = np.array([np.nan])
        with self.assertRaisesMessage(NumericalError, 'theta'):
            nx.AdamW(params).step()

    def test_frozen_parameters_are_skipped(self):
        params = self.make_param(1.0)
        params.freeze()
        self.assertEqual(nx.AdamW(params).named_params, [])

    def test_non_positive_learning_rate(self):
        with self.assertRaises(ConfigurationError):
            nx.AdamW(self.make_param(1.0), lr=0.0)


class TapeTests(SimpleTestCase):
    def test_sum_of_squares_gradient(self):
        x = nx.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with nx.Tape() as tape:
            loss = nx.sum_(nx.square(x))
        tape.backward(loss)
        assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_shared_input_accumulates(self):
        x = nx.Tensor([2.0], requires_grad=True)
        with nx.Tape() as tape:
            loss = nx.sum_(nx.add(nx.mul(x, x), x))
        tape.backward(loss)
        assert_allclose(x.grad, [5.0])

    def test_non_scalar_loss(self):
        x = nx.Tensor([1.0, 2.0], requires_grad=True)
        with nx.Tape() as tape:
            y = nx.mul(x, 2.0)
        with self.assertRaises(DimensionError):
            tape.backward(y)

    def test_non_finite_result_raises(self):
        with self.assertRaises(NumericalError):
            nx.div(nx.Tensor([1.0]), nx.Tensor([0.0]))


class GradCheckTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)

    def tensor(self, *shape):
        return nx.Tensor(self.rng.normal(size=shape))

    def assertGradOk(self, fn, inputs):
        self.assertLess(nx.grad_check(fn, inputs, epsilon=1e-5), 1e-4)

    def test_constant_function(self):
        x = self.tensor(3)
        self.assertLess(nx.grad_check(lambda: nx.mul(nx.sum_(x), 0.0), [x]), 1e-9)

    def test_sum_of_squares(self):
        x = nx.Tensor([1.0, 2.0, 3.0])
        self.assertLess(nx.grad_check(lambda: nx.sum_(nx.square(x)), [x]), 1e-6)

    def test_elementwise_and_broadcasting(self):
        a, b = self.tensor(3, 4), self.tensor(4)
        self.assertGradOk(lambda: nx.sum_(nx.div(nx.mul(nx.sub(a, b), a), nx.add(nx.square(b), 1.0))), [a, b])

    def test_matmul_and_linear(self):
        x, w, b = self.tensor(2, 3, 4), self.tensor(4, 5), self.tensor(5)
        self.assertGradOk(lambda: nx.mean(nx.square(nx.linear(x, w, b))), [x, w, b])

    def test_gelu(self):
        x = self.tensor(6)
        self.assertGradOk(lambda: nx.sum_(nx.gelu(x)), [x])

    def test_softmax(self):
        x, target = self.tensor(2, 5), self.tensor(2, 5)
        self.assertGradOk(lambda: nx.sum_(nx.mul(nx.softmax_last(x), target)), [x])

    def test_layer_norm(self):
        x, gamma, beta, target = self.tensor(3, 4), self.tensor(4), self.tensor(4), self.tensor(3, 4)
        self.assertGradOk(lambda: nx.sum_(nx.mul(nx.layer_norm(x, gamma, beta), target)), [x, gamma, beta])

    def test_conv1d(self):
        x, k, b = self.tensor(2, 3, 6), self.tensor(4, 3, 3), self.tensor(4)
        self.assertGradOk(lambda: nx.mean(nx.square(nx.conv1d(x, k, b, padding=(2, 0), dilation=2))), [x, k, b])

    def test_shape_ops(self):
        a, b = self.tensor(2, 3), self.tensor(2, 2)
        target = self.tensor(3, 4)

        def fn():
            joined = nx.concat([a, b], axis=-1)
            moved = nx.swapaxes(nx.reshape(joined, (2, 5, 1)), 0, 1)
            picked = nx.take(nx.reshape(moved, (5, 2)), slice(1, 4))
            return nx.sum_(nx.mul(nx.reshape(nx.concat([picked, picked], axis=-1), (3, 4)), target))

        self.assertGradOk(fn, [a, b])

    def test_attention(self):
        x = self.tensor(3, 4)
        params = attention_params(4, self.rng)
        self.assertGradOk(lambda: nx.mean(nx.square(nx.multi_head_attention(x, params, 2))),
                          [x, *params.values()])

    def test_non_deterministic_function(self):
        x = nx.Tensor([1.0])
        draws = iter(range(100))
        with self.assertRaises(OracleError):
            nx.grad_check(lambda: nx.add(nx.sum_(x), float(next(draws))), [x])

    def test_epsilon_out_of_range(self):
        x = nx.Tensor([1.0])
        with self.assertRaises(ConfigurationError):
            nx.grad_check(lambda: nx.sum_(x), [x], epsilon=1e-2)

    def test_restores_requires_grad(self):
        x = nx.Tensor([1.0, 2.0])
        nx.grad_check(lambda: nx.sum_(nx.square(x)), [x])
        self.assertFalse(x.requires_grad)
        self.assertIsNone(x.grad)


class ParameterSetTests(SimpleTestCase):
    def test_state_dict_roundtrip_and_fingerprint(self):
        params = nx.ParameterSet()
        params.add('a.w', np.ones((2, 2)))
        params.add('a.b', np.zeros(2))
        before = params.fingerprint()
        other = nx.ParameterSet()
        other.add('a.w', np.zeros((2, 2)))
        other.add('a.b', np.ones(2))
        other.load_state_dict(params.state_dict())
        self.assertEqual(other.fingerprint(), before)
        self.assertEqual(set(params.scope('a')), {'w', 'b'})
        self.assertEqual(params.num_values(), 6)

    def test_load_state_dict_mismatches(self):
        params = nx.ParameterSet()
        params.add('w', np.ones(2))
        with self.assertRaises(ConfigurationError):
            params.load_state_dict({'v': np.ones(2)})
        with self.assertRaises(DimensionError):
            params.load_state_dict({'w': np.ones(3)})

    def test_duplicate_name(self):
        params = nx.ParameterSet()
        params.add('w', np.ones(1))
        with self.assertRaises(ConfigurationError):
            params.add('w', np.ones(1))
