import os.path
import unittest

from dataclasses import replace

import numpy as np
import torch

from hinge.rl.adaptation import (AdaptConfig, AdaptNet, AdaptationDataset, AdaptiveController, HistoryWindow,
                                 action_discrepancy, adapt_loss, collect_adaptation_data, finetune_adaptation,
                                 latent_error, load_adaptation, run_adaptive_policy, train_adaptation)
from hinge.rl.doorsim import DoorSimulator, SimConfig, scale_state
from hinge.rl.encoder_vae import VariationalAutoencoder
from hinge.rl.envdomain import mean_env
from hinge.rl.errors import CheckpointError, NetworkError, TrainingError
from hinge.rl.neuralcore import parameter_checksum
from hinge.rl.policy_ppo import PolicyNetwork


here = os.path.abspath(os.path.dirname(__file__))


def _resource_path(resource_name):
    return os.path.join(here, "resources", resource_name)


def _config(**kwargs):
    values = dict(window=40, lr=1e-3, batch_size=4, episodes=3, holdout_episodes=1, finetune_episodes=3, epochs=20,
                  finetune_epochs=20, sample_stride=5)
    values.update(kwargs)
    return AdaptConfig(**values)


class Window(unittest.TestCase):

    def test_zero_padding(self):
        history = HistoryWindow(5)
        np.testing.assert_array_equal(np.zeros((5, 14)), history.array())
        history.push(np.ones(12), [0.5, 0.1])
        history.push(2.0 * np.ones(12), [0.6, 0.2])
        window = history.array()
        self.assertEqual(2, len(history))
        np.testing.assert_array_equal(np.zeros((3, 14)), window[:3])
        np.testing.assert_array_equal(np.concatenate([np.ones(12), [0.5, 0.1]]), window[3])
        self.assertEqual(2.0, window[4, 0])

        for i in range(3, 8):
            history.push(float(i) * np.ones(12), [0.0, 0.0])
        np.testing.assert_array_equal([3.0, 4.0, 5.0, 6.0, 7.0], history.array()[:, 0])

        history.reset()
        self.assertEqual(0, len(history))
        with self.assertRaises(NetworkError):
            history.push(np.ones(12), [0.5])


class Network(unittest.TestCase):

    def test_forward(self):
        module = AdaptNet(seed=1)
        self.assertEqual([11, 7, 3], module.lengths)
        windows = np.random.default_rng(0).normal(size=(4, 50, 14))
        mu, sigma = module(windows)
        self.assertEqual((4, 8), tuple(mu.shape))
        self.assertEqual((4, 8), tuple(sigma.shape))
        self.assertTrue(bool(torch.all(sigma > 0.0)))

        mu_single, sigma_single = module(windows[2])
        self.assertEqual((8,), tuple(mu_single.shape))
        torch.testing.assert_close(mu[2], mu_single)

        again, _ = AdaptNet(seed=1)(windows)
        torch.testing.assert_close(mu, again, rtol=0.0, atol=0.0)

        with self.assertRaises(NetworkError):
            module(np.zeros((40, 14)))
        with self.assertRaises(NetworkError):
            module(np.zeros((50, 12)))

    def test_window_length(self):
        self.assertEqual([9, 5, 1], AdaptNet.conv_lengths(40))
        with self.assertRaises(TrainingError):
            AdaptConfig(window=30)
        with self.assertRaises(TrainingError):
            AdaptConfig(sample_stride=0)

    def test_adapt_loss(self):
        zero, one = np.zeros(8), np.ones(8)
        total, rec, reg = adapt_loss(zero, one, zero, one)
        self.assertEqual(0.0, float(total))

        mu_hat = zero.copy()
        mu_hat[5] = 0.5
        total, rec, reg = adapt_loss(zero, one, mu_hat, one)
        self.assertAlmostEqual(0.25, float(rec), places=12)

        total, rec, reg = adapt_loss(one, one, one, one)
        self.assertEqual(0.0, float(rec))
        self.assertAlmostEqual(4.0, float(reg), places=12)

        with self.assertRaises(NetworkError):
            adapt_loss(zero, zero, zero, one)
        with self.assertRaises(NetworkError):
            adapt_loss(zero, one, zero[:4], one)

    def test_save_and_load(self):
        module = AdaptNet(window=40, seed=2)
        filename = _resource_path("adaptation.ckpt")
        module.save(filename)
        restored = load_adaptation(filename)
        self.assertEqual(40, restored.window)
        self.assertEqual(parameter_checksum(module), parameter_checksum(restored))

        PolicyNetwork(hidden=8).save(filename)
        with self.assertRaises(CheckpointError):
            load_adaptation(filename)
        os.remove(filename)


class Training(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.policy = PolicyNetwork(hidden=16, seed=0)
        cls.encoder = VariationalAutoencoder(seed=0)
        cls.sim_config = SimConfig(max_steps=20)
        cls.dataset = collect_adaptation_data(cls.policy, cls.encoder, 3, np.random.default_rng(0), window=40,
                                              stride=5, sim_config=cls.sim_config)

    def test_collect(self):
        dataset = self.dataset
        self.assertEqual(12, len(dataset))
        self.assertEqual((12, 40, 14), dataset.windows.shape)
        self.assertEqual((12, 12), dataset.states.shape)
        self.assertEqual((12, 8), dataset.mu.shape)
        self.assertTrue(np.all(dataset.sigma > 0.0))

        # First sample of an episode: one real row, the rest zero padding.
        np.testing.assert_array_equal(np.zeros((39, 14)), dataset.windows[0, :39])
        np.testing.assert_array_equal(np.zeros(2), dataset.prev_actions[0])
        np.testing.assert_array_equal(dataset.mu[0], dataset.mu[3])
        self.assertFalse(np.array_equal(dataset.mu[0], dataset.mu[4]))

        subset = dataset.subset([1, 2])
        self.assertIsInstance(subset, AdaptationDataset)
        np.testing.assert_array_equal(dataset.windows[1:3], subset.windows)

        with self.assertRaises(TrainingError):
            collect_adaptation_data(PolicyNetwork("six_dof", hidden=8), self.encoder, 1, np.random.default_rng(0))

    def test_latent_error(self):
        module = AdaptNet(window=40, seed=3)
        with torch.no_grad():
            mu_hat, _ = module(self.dataset.windows)
        module_error, baseline_error = latent_error(module, self.dataset)
        self.assertAlmostEqual(float(((self.dataset.mu - mu_hat.numpy()) ** 2).sum(axis=1).mean()), module_error,
                               places=12)
        self.assertGreater(baseline_error, 0.0)

        constant = replace(self.dataset, mu=np.tile(self.dataset.mu[0], (len(self.dataset), 1)))
        self.assertLess(latent_error(module, constant)[1], 1e-20)

    def test_train(self):
        config = _config()
        module, curve = train_adaptation(self.policy, self.encoder, config, seed=1, sim_config=self.sim_config,
                                         dataset=self.dataset, holdout=self.dataset)
        self.assertEqual(config.epochs, len(curve))
        self.assertEqual({"epoch", "loss", "reconstruction", "regularisation", "holdout_latent_error",
                          "baseline_latent_error"}, set(curve[0]))
        self.assertLess(curve[-1]["loss"], curve[0]["loss"])
        self.assertTrue(all(row["loss"] >= 0.0 for row in curve))
        self.assertFalse(module.training)

        again, _ = train_adaptation(self.policy, self.encoder, config, seed=1, sim_config=self.sim_config,
                                    dataset=self.dataset, holdout=self.dataset)
        self.assertEqual(parameter_checksum(module), parameter_checksum(again))

    def test_train_collects(self):
        config = _config(episodes=1, holdout_episodes=0, epochs=1)
        module, curve = train_adaptation(self.policy, self.encoder, config, seed=2, sim_config=self.sim_config)
        self.assertEqual(1, len(curve))
        self.assertNotIn("holdout_latent_error", curve[0])

    def test_exact_latent_has_no_discrepancy(self):
        module = AdaptNet(window=40, seed=4)
        with torch.no_grad():
            mu_hat, sigma_hat = module(self.dataset.windows)
        matched = replace(self.dataset, mu=mu_hat.numpy(), sigma=sigma_hat.numpy())
        self.assertEqual(0.0, action_discrepancy(module, self.policy, matched))
        self.assertGreaterEqual(action_discrepancy(module, self.policy, self.dataset), 0.0)

    def test_finetune(self):
        config = _config()
        rho = AdaptNet(window=40, seed=5)
        rho_checksum = parameter_checksum(rho)
        policy_checksum = parameter_checksum(self.policy)
        rho_star, curve = finetune_adaptation(rho, self.policy, self.encoder, config, seed=1,
                                              sim_config=self.sim_config, dataset=self.dataset, holdout=self.dataset)

        self.assertEqual(policy_checksum, parameter_checksum(self.policy))
        self.assertTrue(all(p.requires_grad for p in self.policy.parameters()))
        self.assertEqual(rho_checksum, parameter_checksum(rho))
        self.assertNotEqual(rho_checksum, parameter_checksum(rho_star))

        self.assertEqual(config.finetune_epochs, len(curve))
        self.assertEqual({"epoch", "loss", "holdout_discrepancy"}, set(curve[0]))
        self.assertLess(curve[-1]["holdout_discrepancy"], action_discrepancy(rho, self.policy, self.dataset))


class Controller(unittest.TestCase):

    def test_run_adaptive_policy(self):
        module = AdaptNet(window=40, seed=6)
        policy = PolicyNetwork(hidden=16, seed=6)
        e = mean_env()
        runs = []
        for _ in range(2):
            simulator = DoorSimulator(SimConfig(max_steps=10))
            observation = simulator.reset(e)
            controller = AdaptiveController(module, policy, np.random.default_rng(7))
            rows, success = run_adaptive_policy(controller, simulator, observation, e.target_speed)
            runs.append(rows)
        self.assertEqual(10, len(runs[0]))
        self.assertFalse(success)
        self.assertEqual([row[0] for row in runs[0]], list(range(1, 11)))
        for first, second in zip(*runs):
            np.testing.assert_array_equal(first[3], second[3])
            np.testing.assert_array_equal(first[2], second[2])

        for row in runs[0]:
            self.assertTrue(0.05 < row[3][0] < 1.0)
            self.assertLess(abs(row[3][1]), 0.45)

    def test_mean_latent(self):
        module = AdaptNet(window=40, seed=8)
        policy = PolicyNetwork(hidden=16, seed=8)
        e = mean_env()
        simulator = DoorSimulator(SimConfig(max_steps=3))
        observation = simulator.reset(e)
        controller = AdaptiveController(module, policy, None, sample_latent=False)
        controller.reset(observation, e.target_speed)
        _, action = controller.act(observation)

        window = np.zeros((40, 14))
        window[-1, :12] = scale_state(observation.s)
        with torch.no_grad():
            mu_hat, _ = module(window)
            expected = policy.mean_action(mu_hat, np.concatenate([scale_state(observation.s), np.zeros(2)])).numpy()
        np.testing.assert_allclose(expected, action)


if __name__ == "__main__":
    unittest.main()
