import math
import os.path
import unittest

import numpy as np
import torch

from hinge.rl.errors import CheckpointError, NetworkError
from hinge.rl.neuralcore import (DTYPE, CHECKPOINT_MAGIC, AdamState, Conv1DLayer, Conv1DLayerSpec, DenseLayerSpec,
                                 DenseStack, GaussianHead, RunningMeanStd, adam_step, conv1d_backward, conv1d_forward,
                                 dense_backward, dense_forward, gaussian_entropy, gaussian_log_prob, gaussian_sample,
                                 kl_standard_normal, load_state, make_generator, parameter_checksum, read_checkpoint,
                                 save_checkpoint)


here = os.path.abspath(os.path.dirname(__file__))


def _resource_path(resource_name):
    return os.path.join(here, "resources", resource_name)


def _numerical_gradient(f, x, h=1e-5):
    """
    Central differences of the scalar function *f* at the array *x*.
    """
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + h
        upper = f(x)
        x[index] = original - h
        lower = f(x)
        x[index] = original
        grad[index] = (upper - lower) / (2.0 * h)
    return grad


def _relative_error(analytic, numerical):
    analytic = np.asarray(analytic)
    return np.abs(analytic - numerical).max() / max(1e-8, np.abs(analytic).max(), np.abs(numerical).max())


class DenseOperations(unittest.TestCase):

    def test_identity(self):
        spec = DenseLayerSpec(4, 4, "identity")
        x = np.array([0.5, -1.0, 2.0, 3.0])
        np.testing.assert_allclose(x, dense_forward(spec, (np.eye(4), np.zeros(4)), x).numpy())

    def test_zero_input(self):
        spec = DenseLayerSpec(3, 5, "tanh")
        weight = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(np.zeros(5), dense_forward(spec, (weight, np.zeros(5)), np.zeros(3)).numpy())

    def test_shape_mismatch(self):
        spec = DenseLayerSpec(3, 2)
        with self.assertRaises(NetworkError):
            dense_forward(spec, (np.zeros((2, 3)), np.zeros(2)), np.zeros(4))
        with self.assertRaises(NetworkError):
            dense_forward(spec, (np.zeros((3, 2)), np.zeros(2)), np.zeros(3))
        with self.assertRaises(NetworkError):
            DenseLayerSpec(0, 2)
        with self.assertRaises(NetworkError):
            DenseLayerSpec(2, 2, "sigmoid")

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for activation in ("tanh", "softplus", "identity"):
            spec = DenseLayerSpec(4, 3, activation)
            weight, bias = rng.normal(size=(3, 4)), rng.normal(size=3)
            x = rng.normal(size=(2, 4))
            output_grad = rng.normal(size=(2, 3))

            def loss(w, b, inputs):
                return float((dense_forward(spec, (w, b), inputs).numpy() * output_grad).sum())

            input_grad, (weight_grad, bias_grad) = dense_backward(spec, (weight, bias), x, output_grad)
            self.assertLess(_relative_error(input_grad.numpy(), _numerical_gradient(lambda v: loss(weight, bias, v), x)),
                            1e-4)
            self.assertLess(_relative_error(weight_grad.numpy(),
                                            _numerical_gradient(lambda v: loss(v, bias, x), weight)), 1e-4)
            self.assertLess(_relative_error(bias_grad.numpy(), _numerical_gradient(lambda v: loss(weight, v, x), bias)),
                            1e-4)

    def test_stack_gradcheck(self):
        stack = DenseStack([5, 6, 3], "tanh", final_activation="identity", generator=make_generator(3))
        x = torch.randn(4, 5, dtype=DTYPE, generator=make_generator(4), requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(stack, (x,)))
        self.assertEqual(3, stack.out_dim)


class ConvOperations(unittest.TestCase):

    def test_zero_kernel(self):
        spec = Conv1DLayerSpec(2, 3, 4, 2, "identity")
        sequence = np.random.default_rng(2).normal(size=(2, 10))
        output = conv1d_forward(spec, (np.zeros((3, 2, 4)), np.array([0.5, -1.0, 2.0])), sequence).numpy()
        self.assertEqual((3, spec.output_length(10)), output.shape)
        np.testing.assert_array_equal(np.repeat([[0.5], [-1.0], [2.0]], 4, axis=1), output)

    def test_unit_kernel(self):
        spec = Conv1DLayerSpec(1, 1, 1, 1, "identity")
        sequence = np.array([[1.0, -2.0, 3.5, 0.25]])
        np.testing.assert_array_equal(sequence, conv1d_forward(spec, (np.ones((1, 1, 1)), np.zeros(1)),
                                                               sequence).numpy())

    def test_output_lengths(self):
        specs = [Conv1DLayerSpec(32, 32, 8, 4), Conv1DLayerSpec(32, 32, 5, 1), Conv1DLayerSpec(32, 32, 5, 1)]
        lengths = [50]
        for spec in specs:
            lengths.append(spec.output_length(lengths[-1]))
        self.assertEqual([50, 11, 7, 3], lengths)

        layer = Conv1DLayer(specs[0], generator=make_generator(0))
        self.assertEqual((2, 32, 11), tuple(layer(torch.zeros(2, 32, 50, dtype=DTYPE)).shape))

    def test_short_sequence(self):
        spec = Conv1DLayerSpec(1, 1, 5, 1)
        with self.assertRaises(NetworkError):
            spec.output_length(4)
        with self.assertRaises(NetworkError):
            conv1d_forward(spec, (np.ones((1, 1, 5)), np.zeros(1)), np.zeros((1, 4)))
        with self.assertRaises(NetworkError):
            conv1d_forward(spec, (np.ones((1, 1, 5)), np.zeros(1)), np.zeros((2, 8)))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        spec = Conv1DLayerSpec(2, 3, 3, 2, "tanh")
        weight, bias = rng.normal(size=(3, 2, 3)), rng.normal(size=3)
        sequence = rng.normal(size=(2, 9))
        output_grad = rng.normal(size=(3, spec.output_length(9)))

        def loss(w, b, inputs):
            return float((conv1d_forward(spec, (w, b), inputs).numpy() * output_grad).sum())

        input_grad, (weight_grad, bias_grad) = conv1d_backward(spec, (weight, bias), sequence, output_grad)
        self.assertLess(_relative_error(input_grad.numpy(),
                                        _numerical_gradient(lambda v: loss(weight, bias, v), sequence)), 1e-4)
        self.assertLess(_relative_error(weight_grad.numpy(),
                                        _numerical_gradient(lambda v: loss(v, bias, sequence), weight)), 1e-4)
        self.assertLess(_relative_error(bias_grad.numpy(),
                                        _numerical_gradient(lambda v: loss(weight, v, sequence), bias)), 1e-4)

    def test_layer_gradcheck(self):
        layer = Conv1DLayer(Conv1DLayerSpec(3, 2, 4, 2, "tanh"), generator=make_generator(6))
        x = torch.randn(2, 3, 12, dtype=DTYPE, generator=make_generator(7), requires_grad=True)
        self.assertTrue(torch.autograd.gradcheck(layer, (x,)))


class GaussianOperations(unittest.TestCase):

    def test_sample(self):
        mu = np.array([0.5, -1.0])
        np.testing.assert_array_equal(mu, gaussian_sample(mu, [0.3, 2.0], np.zeros(2)).numpy())
        np.testing.assert_allclose(mu, gaussian_sample(mu, [1e-12, 1e-12], [3.0, -3.0]).numpy(), atol=1e-10)

        eps = np.random.default_rng(8).standard_normal(100000)
        z = gaussian_sample(np.zeros(100000), np.ones(100000), eps).numpy()
        self.assertLess(abs(z.mean()), 0.02)
        self.assertLess(abs(z.var() - 1.0), 0.05)

        mu_t = torch.tensor([0.1, 0.2], dtype=DTYPE, requires_grad=True)
        sigma_t = torch.tensor([1.0, 2.0], dtype=DTYPE, requires_grad=True)
        gaussian_sample(mu_t, sigma_t, [0.5, -1.0]).sum().backward()
        np.testing.assert_array_equal([1.0, 1.0], mu_t.grad.numpy())
        np.testing.assert_array_equal([0.5, -1.0], sigma_t.grad.numpy())

    def test_invalid_sigma(self):
        with self.assertRaises(NetworkError):
            gaussian_sample([0.0], [0.0], [1.0])
        with self.assertRaises(NetworkError):
            gaussian_log_prob([0.0, 0.0], [1.0, -1.0], [0.0, 0.0])
        with self.assertRaises(NetworkError):
            kl_standard_normal([0.0], [-0.5])

    def test_log_prob(self):
        self.assertAlmostEqual(-0.5 * math.log(2.0 * math.pi), float(gaussian_log_prob([0.0], [1.0], [0.0])),
                               places=12)
        mu, sigma = np.array([0.3, -0.2]), np.array([0.5, 1.5])
        expected = sum(-0.5 * math.log(2.0 * math.pi * s * s) - 0.5 * ((x - m) / s) ** 2
                       for m, s, x in zip(mu, sigma, [1.0, 0.4]))
        self.assertAlmostEqual(expected, float(gaussian_log_prob(mu, sigma, [1.0, 0.4])), places=12)
        self.assertAlmostEqual(float(gaussian_log_prob(mu, sigma, mu + 0.7)),
                               float(gaussian_log_prob(mu, sigma, mu - 0.7)), places=12)

        mu_t = torch.tensor(mu, requires_grad=True)
        gaussian_log_prob(mu_t, sigma, mu).backward()
        np.testing.assert_allclose(np.zeros(2), mu_t.grad.numpy(), atol=1e-15)

    def test_entropy_and_kl(self):
        self.assertAlmostEqual(0.5 * math.log(2.0 * math.pi * math.e), float(gaussian_entropy([1.0])), places=12)
        self.assertAlmostEqual(0.0, float(kl_standard_normal(np.zeros(8), np.ones(8))), places=12)
        self.assertAlmostEqual(0.5 * (0.25 + 4.0 - math.log(4.0) - 1.0), float(kl_standard_normal([0.5], [2.0])),
                               places=12)

    def test_head(self):
        head = GaussianHead(6, 3, generator=make_generator(9))
        mu, sigma = head(torch.randn(10, 6, dtype=DTYPE, generator=make_generator(10)) * 100.0)
        self.assertEqual((10, 3), tuple(mu.shape))
        self.assertTrue(bool(torch.all(sigma > 0.0)))


class Optimisation(unittest.TestCase):

    def test_zero_gradient(self):
        parameter = torch.nn.Parameter(torch.tensor([1.0, -2.0], dtype=DTYPE))
        state = AdamState([parameter], 1e-3)
        adam_step(state, [np.zeros(2)])
        np.testing.assert_array_equal([1.0, -2.0], parameter.detach().numpy())

    def test_first_step_size(self):
        parameter = torch.nn.Parameter(torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE))
        state = AdamState([parameter], 1e-3)
        adam_step(state, [np.array([0.3, -4.0, 10.0])])
        np.testing.assert_allclose([1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3], parameter.detach().numpy(), atol=1e-10)
        self.assertEqual(1, state.step_count())

    def test_shape_mismatch(self):
        parameter = torch.nn.Parameter(torch.zeros(3, dtype=DTYPE))
        state = AdamState([parameter], 1e-3)
        with self.assertRaises(NetworkError):
            adam_step(state, [np.zeros(2)])
        with self.assertRaises(NetworkError):
            adam_step(state, [np.zeros(3), np.zeros(3)])

    def test_deterministic_trajectory(self):
        trajectories = []
        for _ in range(2):
            parameter = torch.nn.Parameter(torch.tensor([2.0, -1.0], dtype=DTYPE))
            state = AdamState([parameter], 0.05)
            values = []
            for _ in range(20):
                adam_step(state, [2.0 * parameter.detach()])
                values.append(parameter.detach().numpy().copy())
            trajectories.append(np.array(values))
        np.testing.assert_array_equal(trajectories[0], trajectories[1])
        self.assertLess(np.abs(trajectories[0][-1]).max(), 2.0)

    def test_running_mean_std(self):
        rng = np.random.default_rng(11)
        data = rng.normal(3.0, 2.0, size=3000)
        rms = RunningMeanStd()
        for batch in np.split(data, 6):
            rms.update(batch)
        rms.update([])
        self.assertAlmostEqual(data.mean(), rms.mean, places=3)
        self.assertAlmostEqual(data.var(), rms.var, places=3)
        self.assertAlmostEqual(math.sqrt(data.var()), rms.std(), places=3)


class Checkpoints(unittest.TestCase):

    def _stack(self, seed):
        return DenseStack([3, 4, 2], "tanh", generator=make_generator(seed))

    def test_initialisation_is_seeded(self):
        self.assertEqual(parameter_checksum(self._stack(1)), parameter_checksum(self._stack(1)))
        self.assertNotEqual(parameter_checksum(self._stack(1)), parameter_checksum(self._stack(2)))

    def test_save_and_load(self):
        filename = _resource_path("stack.ckpt")
        original = self._stack(1)
        save_checkpoint(filename, original, "stack", {"sizes": [3, 4, 2]}, {"seed": 1})
        descriptor, arrays = read_checkpoint(filename, "stack")
        self.assertEqual({"sizes": [3, 4, 2]}, descriptor["arguments"])
        self.assertEqual({"seed": 1}, descriptor["metadata"])
        self.assertEqual(list(original.state_dict()), list(arrays))

        restored = load_state(self._stack(2), arrays)
        self.assertEqual(parameter_checksum(original), parameter_checksum(restored))
        x = torch.randn(5, 3, dtype=DTYPE, generator=make_generator(0))
        torch.testing.assert_close(original(x), restored(x), rtol=0.0, atol=0.0)

        with self.assertRaises(CheckpointError):
            read_checkpoint(filename, "policy")
        with self.assertRaises(CheckpointError):
            load_state(DenseStack([3, 5, 2], generator=make_generator(0)), arrays)
        os.remove(filename)

    def test_corrupt_files(self):
        filename = _resource_path("stack.ckpt")
        save_checkpoint(filename, self._stack(1), "stack", {})
        with open(filename, 'rb') as f:
            data = f.read()

        for broken in (b"NOTACKPT" + data[8:], data[:-8], data + b"\0" * 8, data[:10]):
            with open(filename, 'wb') as f:
                f.write(broken)
            with self.assertRaises(CheckpointError):
                read_checkpoint(filename)
        self.assertTrue(data.startswith(CHECKPOINT_MAGIC))
        os.remove(filename)

        with self.assertRaises(CheckpointError):
            read_checkpoint(_resource_path("missing.ckpt"))

    def test_checksum_tracks_parameters(self):
        stack = self._stack(1)
        before = parameter_checksum(stack)
        with torch.no_grad():
            stack.layers[0].linear.bias.add_(1e-9)
        self.assertNotEqual(before, parameter_checksum(stack))


if __name__ == "__main__":
    unittest.main()
