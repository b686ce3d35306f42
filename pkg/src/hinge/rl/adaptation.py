"""
Adaptation module estimating the environment latent from a window of recent states and actions,
its supervised training against the encoder and its fine-tuning against the frozen policy's actions.
"""
import copy

from collections import deque
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from hinge.rl.config import pick
from hinge.rl.doorsim import DoorSimulator, scale_state
from hinge.rl.encoder_vae import LATENT_DIM
from hinge.rl.envdomain import PARAM_RANGES, normalize, sample_env
from hinge.rl.errors import NetworkError, TrainingError
from hinge.rl.kinematics import twist_from_action
from hinge.rl.logger import HingeLogger
from hinge.rl.neuralcore import (
    AdamState, Conv1DLayer, Conv1DLayerSpec, DenseStack, GaussianHead, as_tensor, gaussian_sample, kl_standard_normal,
    load_state, make_generator, parameter_checksum, read_checkpoint, save_checkpoint, squared_error)

logger = HingeLogger.getLogger()

STATE_DIM = 12
ACTION_DIM = 2
FEATURE_DIM = STATE_DIM + ACTION_DIM
CONV_SPECS = ((32, 32, 8, 4), (32, 32, 5, 1), (32, 32, 5, 1))
CHECKPOINT_KIND = "adaptation"


@dataclass
class AdaptConfig:
    window: int = 50
    lr: float = 1e-4
    batch_size: int = 256
    episodes: int = 200
    holdout_episodes: int = 20
    finetune_episodes: int = 500
    epochs: int = 20
    finetune_epochs: int = 20
    sample_stride: int = 10

    def __post_init__(self):
        try:
            AdaptNet.conv_lengths(self.window)
        except NetworkError:
            raise TrainingError(f"Window length {self.window} is too short for the convolution stack.")
        if min(self.batch_size, self.episodes, self.finetune_episodes, self.epochs, self.sample_stride) < 1:
            raise TrainingError("Adaptation batch size, episode counts, epochs and stride must be positive.")

    @classmethod
    def from_parameters(cls, parameters):
        return cls(**pick(parameters, cls, "adapt_"))


class HistoryWindow(object):
    """
    The last *n* per-step features [scaled state, previous action], oldest first,
    zero-padded at the front until *n* steps have been seen.
    """

    def __init__(self, n, feature_dim=FEATURE_DIM):
        self.n = n
        self.feature_dim = feature_dim
        self._rows = deque(maxlen=n)

    def reset(self):
        self._rows.clear()

    def push(self, state_scaled, a_prev):
        row = np.concatenate([np.asarray(state_scaled, dtype=float), np.asarray(a_prev, dtype=float)])
        if row.shape != (self.feature_dim,):
            raise NetworkError(f"History row needs {self.feature_dim} values, got {row.shape}.")
        self._rows.append(row)

    def __len__(self):
        return len(self._rows)

    def array(self):
        window = np.zeros((self.n, self.feature_dim))
        if self._rows:
            window[self.n - len(self._rows):] = np.array(self._rows)
        return window


class AdaptNet(nn.Module):
    """
    Per-step MLP 14 -> 32 -> 32, three 1-D convolutions over time, then a Gaussian head on the flattened map.
    """

    def __init__(self, window=50, feature_dim=FEATURE_DIM, hidden=32, latent_dim=LATENT_DIM, seed=0):
        super().__init__()
        self._arguments = {"window": window, "feature_dim": feature_dim, "hidden": hidden,
                           "latent_dim": latent_dim, "seed": seed}
        generator = make_generator(seed)
        self.window = window
        self.feature_dim = feature_dim
        self.mlp = DenseStack([feature_dim, hidden, hidden], "tanh", generator=generator)
        specs = [Conv1DLayerSpec(*spec) for spec in CONV_SPECS]
        if specs[0].in_channels != hidden:
            raise NetworkError(f"Per-step width {hidden} must match the convolution input channels.")
        self.convs = nn.ModuleList([Conv1DLayer(spec, generator=generator) for spec in specs])
        self.lengths = self.conv_lengths(window, specs)
        self.head = GaussianHead(specs[-1].out_channels * self.lengths[-1], latent_dim, generator=generator)

    @staticmethod
    def conv_lengths(window, specs=None):
        specs = [Conv1DLayerSpec(*spec) for spec in CONV_SPECS] if specs is None else specs
        lengths = []
        length = window
        for spec in specs:
            length = spec.output_length(length)
            lengths.append(length)
        return lengths

    def arguments(self):
        return dict(self._arguments)

    def forward(self, windows):
        """
        :param windows: Array (n, 14) or (batch, n, 14).
        :return: Tuple of (mu_hat, sigma_hat).
        """
        x = as_tensor(windows)
        single = x.dim() == 2
        if single:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[1] != self.window or x.shape[2] != self.feature_dim:
            raise NetworkError(f"Adaptation module expects windows ({self.window}, {self.feature_dim}), "
                               f"got shape {tuple(x.shape)}.")
        h = self.mlp(x).transpose(1, 2)
        for conv in self.convs:
            h = conv(h)
        mu, sigma = self.head(h.flatten(start_dim=1))
        return (mu[0], sigma[0]) if single else (mu, sigma)

    def save(self, filename, metadata=None):
        save_checkpoint(filename, self, CHECKPOINT_KIND, self.arguments(), metadata)


def load_adaptation(filename):
    descriptor, arrays = read_checkpoint(filename, CHECKPOINT_KIND)
    module = AdaptNet(**descriptor["arguments"])
    load_state(module, arrays)
    module.eval()
    return module


def adapt_loss(mu, sigma, mu_hat, sigma_hat):
    """
    Squared error to the encoder's (mu, sigma) plus KL of the estimate from the unit normal,
    averaged over any batch dimension.

    :return: Tuple of (total, reconstruction, regularisation).
    """
    mu, sigma, mu_hat, sigma_hat = as_tensor(mu), as_tensor(sigma), as_tensor(mu_hat), as_tensor(sigma_hat)
    if not mu.shape == sigma.shape == mu_hat.shape == sigma_hat.shape:
        raise NetworkError("Adaptation loss needs targets and estimates of the same shape.")
    if not bool(torch.all(sigma > 0.0)):
        raise NetworkError("Target standard deviations must be strictly positive.")
    rec = (squared_error(mu, mu_hat) + squared_error(sigma, sigma_hat)).mean()
    reg = kl_standard_normal(mu_hat, sigma_hat).mean()
    return rec + reg, rec, reg


@dataclass
class AdaptationDataset:
    """
    Samples recorded from base-policy rollouts, one row per recorded step.
    """
    windows: np.ndarray
    states: np.ndarray
    prev_actions: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __len__(self):
        return len(self.windows)

    def subset(self, indices):
        return AdaptationDataset(self.windows[indices], self.states[indices], self.prev_actions[indices],
                                 self.mu[indices], self.sigma[indices])


def collect_adaptation_data(policy, encoder, episodes, rng, window=50, stride=10, ranges=PARAM_RANGES,
                            sim_config=None):
    """
    Roll out the base policy acting on the encoder mean of each sampled door and record the
    history window, scaled state, previous action and encoder (mu, sigma) every *stride* steps.

    :param rng: numpy Generator drawing the doors.
    :return: AdaptationDataset.
    """
    if policy.action_dim != ACTION_DIM:
        raise TrainingError("Adaptation needs a two-action base policy.")
    simulator = DoorSimulator(sim_config)
    history = HistoryWindow(window)
    rows = {"windows": [], "states": [], "prev_actions": [], "mu": [], "sigma": []}
    for _ in range(episodes):
        e = sample_env(rng, ranges)
        with torch.no_grad():
            mu, sigma = encoder.encode(normalize(e))
        observation = simulator.reset(e, rng)
        history.reset()
        a_prev = np.zeros(ACTION_DIM)
        done = False
        while not done:
            state = scale_state(observation.s)
            history.push(state, a_prev)
            if observation.step_index % stride == 0:
                rows["windows"].append(history.array())
                rows["states"].append(state)
                rows["prev_actions"].append(a_prev.copy())
                rows["mu"].append(mu.numpy().copy())
                rows["sigma"].append(sigma.numpy().copy())
            with torch.no_grad():
                action = policy.mean_action(mu, np.concatenate([state, a_prev])).numpy()
            observation, done, _ = simulator.step(twist_from_action(action[0], action[1], e.target_speed))
            a_prev = action

    if not rows["windows"]:
        raise TrainingError("Adaptation rollouts recorded no samples.")
    return AdaptationDataset(**{key: np.array(values) for key, values in rows.items()})


def _minibatches(size, batch_size, generator):
    order = torch.randperm(size, generator=generator).numpy()
    for start in range(0, size, batch_size):
        yield order[start:start + batch_size]


def latent_error(module, dataset):
    """
    Mean squared distance between estimated and encoder latent means, and the same for the
    predict-the-mean baseline.

    :return: Tuple of (module error, baseline error).
    """
    with torch.no_grad():
        mu_hat, _ = module(dataset.windows)
    module_error = float(squared_error(dataset.mu, mu_hat).mean())
    baseline_error = float(((dataset.mu - dataset.mu.mean(axis=0)) ** 2).sum(axis=1).mean())
    return module_error, baseline_error


def train_adaptation(policy, encoder, config=None, seed=0, ranges=PARAM_RANGES, sim_config=None, dataset=None,
                     holdout=None):
    """
    Regress the adaptation module onto the encoder's (mu, sigma) from base-policy history windows.

    :return: Tuple of (AdaptNet, list of per-epoch curve *dict*).
    """
    config = AdaptConfig() if config is None else config
    rng = np.random.default_rng(seed)
    if dataset is None:
        dataset = collect_adaptation_data(policy, encoder, config.episodes, rng, config.window, config.sample_stride,
                                          ranges, sim_config)
    if holdout is None and config.holdout_episodes > 0:
        holdout = collect_adaptation_data(policy, encoder, config.holdout_episodes, rng, config.window,
                                          config.sample_stride, ranges, sim_config)
    if len(dataset) == 0:
        raise TrainingError("Adaptation training needs data.")

    generator = make_generator(seed)
    module = AdaptNet(config.window, seed=seed)
    optimizer = AdamState(module.parameters(), config.lr)
    curve = []
    for epoch in range(config.epochs):
        module.train()
        totals = np.zeros(3)
        batches = 0
        for indices in _minibatches(len(dataset), config.batch_size, generator):
            mu_hat, sigma_hat = module(dataset.windows[indices])
            total, rec, reg = adapt_loss(dataset.mu[indices], dataset.sigma[indices], mu_hat, sigma_hat)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            totals += [float(total), float(rec), float(reg)]
            batches += 1
        totals /= batches
        row = {"epoch": epoch, "loss": totals[0], "reconstruction": totals[1], "regularisation": totals[2]}
        if holdout is not None:
            row["holdout_latent_error"], row["baseline_latent_error"] = latent_error(module, holdout)
        curve.append(row)
        logger.info(f"Adaptation epoch {epoch}: loss {row['loss']:.5f}, reconstruction {row['reconstruction']:.5f}")

    module.eval()
    return module, curve


def _policy_actions(policy, latent, dataset_rows):
    inputs = np.concatenate([dataset_rows.states, dataset_rows.prev_actions], axis=1)
    return policy.mean_action(latent, inputs)


def action_discrepancy(module, policy, dataset):
    """
    Mean squared distance between the policy's actions given the encoder latent and given the
    module's latent mean.
    """
    with torch.no_grad():
        target = _policy_actions(policy, as_tensor(dataset.mu), dataset)
        mu_hat, _ = module(dataset.windows)
        estimate = _policy_actions(policy, mu_hat, dataset)
    return float(squared_error(target, estimate).mean())


def finetune_adaptation(rho, policy, encoder, config=None, seed=0, ranges=PARAM_RANGES, sim_config=None,
                        dataset=None, holdout=None):
    """
    Fine-tune a copy of *rho* so that the frozen policy acting on its latent mean reproduces the
    policy's actions on the encoder latent.

    :return: Tuple of (fine-tuned AdaptNet, list of per-epoch curve *dict*).
    """
    config = AdaptConfig() if config is None else config
    rng = np.random.default_rng([seed, 1])
    if dataset is None:
        dataset = collect_adaptation_data(policy, encoder, config.finetune_episodes, rng, config.window,
                                          config.sample_stride, ranges, sim_config)
    if holdout is None and config.holdout_episodes > 0:
        holdout = collect_adaptation_data(policy, encoder, config.holdout_episodes, rng, config.window,
                                          config.sample_stride, ranges, sim_config)
    if len(dataset) == 0:
        raise TrainingError("Fine-tuning needs data.")

    checksum = parameter_checksum(policy)
    requires_grad = [p.requires_grad for p in policy.parameters()]
    policy.requires_grad_(False)
    rho_star = copy.deepcopy(rho)
    optimizer = AdamState(rho_star.parameters(), config.lr)
    generator = make_generator(seed)
    curve = []
    try:
        with torch.no_grad():
            target = _policy_actions(policy, as_tensor(dataset.mu), dataset)
        for epoch in range(config.finetune_epochs):
            rho_star.train()
            total = 0.0
            batches = 0
            for indices in _minibatches(len(dataset), config.batch_size, generator):
                mu_hat, _ = rho_star(dataset.windows[indices])
                estimate = _policy_actions(policy, mu_hat, dataset.subset(indices))
                loss = squared_error(target[torch.as_tensor(indices)], estimate).mean()
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss)
                batches += 1
            row = {"epoch": epoch, "loss": total / batches}
            if holdout is not None:
                row["holdout_discrepancy"] = action_discrepancy(rho_star, policy, holdout)
            curve.append(row)
            logger.info(f"Fine-tuning epoch {epoch}: action discrepancy {row['loss']:.6f}")
    finally:
        for p, flag in zip(policy.parameters(), requires_grad):
            p.requires_grad_(flag)

    if parameter_checksum(policy) != checksum:
        raise TrainingError("Policy parameters changed during fine-tuning.")
    rho_star.eval()
    return rho_star, curve


class AdaptiveController(object):
    """
    Drives a frozen policy with latents estimated online from the history window.
    Sees only observations and the commanded door speed.
    """

    def __init__(self, module, policy, rng, sample_latent=True):
        self._module = module
        self._policy = policy
        self._rng = rng
        self._sample_latent = sample_latent
        self._history = HistoryWindow(module.window, module.feature_dim)
        self._a_prev = np.zeros(ACTION_DIM)
        self._target_speed = None

    def reset(self, observation, target_speed):
        self._history.reset()
        self._a_prev = np.zeros(ACTION_DIM)
        self._target_speed = target_speed

    def act(self, observation):
        """
        :return: Tuple of (gripper Twist, action array [r_hat, theta_hat]).
        """
        state = scale_state(observation.s)
        self._history.push(state, self._a_prev)
        with torch.no_grad():
            mu_hat, sigma_hat = self._module(self._history.array())
            if self._sample_latent:
                latent = gaussian_sample(mu_hat, sigma_hat, self._rng.standard_normal(mu_hat.shape[0]))
            else:
                latent = mu_hat
            action = self._policy.mean_action(latent, np.concatenate([state, self._a_prev])).numpy()
        self._a_prev = action
        return twist_from_action(action[0], action[1], self._target_speed), action


def run_adaptive_policy(controller, simulator, observation, target_speed):
    """
    Run one episode from a freshly reset *simulator* under *controller*.

    :return: List of (step, door_angle, s, action) rows, one per control step, and the success flag.
    """
    controller.reset(observation, target_speed)
    rows = []
    done = False
    while not done:
        twist, action = controller.act(observation)
        observation, done, _ = simulator.step(twist)
        rows.append((observation.step_index, observation.door_angle, observation.s.copy(), action))
    return rows, simulator.success()
