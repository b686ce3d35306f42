"""
The base policy: an actor-critic network over [latent, scaled state, previous action], the door-opening
reward, rollout collection across several simulators and the clipped PPO update.
"""
import enum
import math

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from hinge.rl.adaptation import AdaptNet, HistoryWindow
from hinge.rl.config import pick
from hinge.rl.doorsim import DoorSimulator, scale_state
from hinge.rl.encoder_vae import LATENT_DIM
from hinge.rl.envdomain import PARAM_RANGES, env_hash, mean_env, normalize, sample_env
from hinge.rl.errors import NetworkError, TrainingError
from hinge.rl.kinematics import Frame, Twist, clamp_theta, twist_from_action
from hinge.rl.logger import HingeLogger
from hinge.rl.neuralcore import (
    AdamState, DenseLayer, DenseLayerSpec, DenseStack, GaussianHead, RunningMeanStd, as_tensor, gaussian_entropy,
    gaussian_log_prob, gaussian_sample, load_state, make_generator, read_checkpoint, save_checkpoint)

logger = HingeLogger.getLogger()

STATE_DIM = 12
R_LOW = 0.05
R_HIGH = 1.0
THETA_BOUND = 0.45
LINEAR_BOUND = 0.5
ANGULAR_BOUND = 0.5
TAU_Y_FLOOR = 1e-3
CHECKPOINT_KIND = "policy"


class PolicyMode(enum.Enum):
    SINGLE_DOOR = "single_door"
    DOMAIN_RANDOMIZED = "domain_randomized"
    NO_ENCODER = "no_encoder"
    SIX_DOF = "six_dof"
    VELOCITY = "velocity"


_MODE_ALIASES = {
    "single": PolicyMode.SINGLE_DOOR,
    "dr": PolicyMode.DOMAIN_RANDOMIZED,
    "no-encoder": PolicyMode.NO_ENCODER,
    "6dof": PolicyMode.SIX_DOF,
}


def parse_mode(text):
    if isinstance(text, PolicyMode):
        return text
    if text in _MODE_ALIASES:
        return _MODE_ALIASES[text]
    try:
        return PolicyMode(text)
    except ValueError:
        raise TrainingError(f"Unknown policy mode {text}.")


@dataclass
class RewardWeights:
    k1: float = 1.0
    k2: float = 0.7
    k3: float = 0.7
    k4: float = 0.7
    k5: float = 0.3

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3, self.k4, self.k5) < 0.0:
            raise TrainingError("Reward weights must be non-negative.")

    @classmethod
    def from_parameters(cls, parameters):
        return cls(**pick(parameters, cls, "reward_"))


@dataclass
class PPOConfig:
    lr: float = 3e-4
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 256
    horizon: int = 2048
    workers: int = 8
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 2000000
    hidden: int = 64
    window: int = 50

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise TrainingError(f"Clip ratio must lie in (0, 1), got {self.clip}.")
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.gae_lambda <= 1.0):
            raise TrainingError("Discount and GAE lambda must lie in (0, 1].")
        if min(self.epochs, self.minibatch_size, self.horizon, self.workers, self.total_steps) < 1:
            raise TrainingError("PPO epochs, minibatch size, horizon, workers and steps must be positive.")

    @classmethod
    def from_parameters(cls, parameters):
        return cls(**pick(parameters, cls, "ppo_"))


def squash_action(raw, action_dim=2):
    """
    Map raw Gaussian actions into the bounded action box.
    Two actions become r_hat in (R_LOW, R_HIGH) and theta_hat in (-THETA_BOUND, THETA_BOUND);
    six actions become a gripper twist bounded per axis by LINEAR_BOUND and ANGULAR_BOUND.
    """
    raw = as_tensor(raw)
    if raw.shape[-1] != action_dim:
        raise NetworkError(f"Expected {action_dim} raw actions, got shape {tuple(raw.shape)}.")
    if action_dim == 2:
        r_hat = R_LOW + (R_HIGH - R_LOW) * torch.sigmoid(raw[..., 0])
        theta_hat = THETA_BOUND * torch.tanh(raw[..., 1])
        return torch.stack([r_hat, theta_hat], dim=-1)
    if action_dim == 6:
        return torch.cat([LINEAR_BOUND * torch.tanh(raw[..., :3]), ANGULAR_BOUND * torch.tanh(raw[..., 3:])], dim=-1)
    raise NetworkError(f"Unsupported action dimension {action_dim}.")


def _k5_term(torque, theta):
    tau_y = torque[1]
    if abs(tau_y) < TAU_Y_FLOOR:
        tau_y = math.copysign(TAU_Y_FLOOR, tau_y)
    return abs(torque[2] / tau_y + math.tan(clamp_theta(theta)))


def _wrench_penalty(wrench, theta, weights):
    force, torque = wrench.force, wrench.torque
    return (weights.k2 * abs(force[1]) + weights.k3 * abs(force[2]) + weights.k4 * abs(torque[0])
            + weights.k5 * _k5_term(torque, theta))


def reward(r, theta, r_hat, theta_hat, wrench, weights=None):
    """
    Supervised estimate error plus force-torque feedback, negated so that the best value is zero.

    :param r: True grasp radius.
    :param theta: True grasp angle, also used in the torque-ratio term.
    :param r_hat: Estimated radius.
    :param theta_hat: Estimated angle.
    :param wrench: Sensor Wrench in the gripper frame.
    :param weights: RewardWeights.
    """
    weights = RewardWeights() if weights is None else weights
    supervised = weights.k1 * ((r - r_hat) ** 2 + (theta - theta_hat) ** 2)
    return -(supervised + _wrench_penalty(wrench, theta, weights))


def reward_6dof(v_g, v_ideal, wrench, theta, weights=None):
    """
    Reward for twist-valued actions: squared twist error to the ideal twist plus the same force-torque feedback.
    """
    weights = RewardWeights() if weights is None else weights
    error = v_g.vector() - v_ideal.vector()
    return -(weights.k1 * float(error @ error) + _wrench_penalty(wrench, theta, weights))


class PolicyNetwork(nn.Module):
    """
    Shared tanh trunk with a Gaussian actor head over raw actions and a scalar value head.
    In the no-encoder mode the latent is replaced by a jointly trained history feature net
    with the adaptation module's structure.
    """

    def __init__(self, mode="domain_randomized", latent_dim=LATENT_DIM, hidden=64, window=50, seed=0):
        super().__init__()
        self.mode = parse_mode(mode)
        self._arguments = {"mode": self.mode.value, "latent_dim": latent_dim, "hidden": hidden, "window": window,
                           "seed": seed}
        generator = make_generator(seed)
        self.action_dim = 6 if self.mode == PolicyMode.SIX_DOF else 2
        self.latent_dim = latent_dim
        self.input_dim = latent_dim + STATE_DIM + self.action_dim
        self.window = window
        self.end_to_end = self.mode == PolicyMode.NO_ENCODER
        self.feature_net = AdaptNet(window, STATE_DIM + self.action_dim, latent_dim=latent_dim,
                                    seed=seed + 1) if self.end_to_end else None
        self.trunk = DenseStack([self.input_dim, hidden, hidden], "tanh", generator=generator)
        self.actor = GaussianHead(hidden, self.action_dim, generator=generator, gain=0.01)
        self.critic = DenseLayer(DenseLayerSpec(hidden, 1, "identity"), generator=generator)

    def arguments(self):
        return dict(self._arguments)

    def features(self, latent=None, windows=None):
        if self.end_to_end:
            if windows is None:
                raise NetworkError("The no-encoder policy needs history windows.")
            mu, _ = self.feature_net(windows)
            return mu
        if latent is None:
            raise NetworkError("The policy needs an environment latent.")
        return as_tensor(latent)

    def forward(self, latent, inputs, windows=None):
        """
        :param latent: Environment latent (8,) or (batch, 8), ignored in the no-encoder mode.
        :param inputs: Scaled state and previous action, (14,) or (batch, 14), 18 for six actions.
        :param windows: History windows for the no-encoder mode.
        :return: Tuple of (raw action mean, raw action sigma, value).
        """
        z = self.features(latent, windows)
        inputs = as_tensor(inputs)
        if z.dim() < inputs.dim():
            z = z.expand(*inputs.shape[:-1], z.shape[-1])
        x = torch.cat([z, inputs], dim=-1)
        if x.shape[-1] != self.input_dim:
            raise NetworkError(f"Policy expects {self.input_dim} inputs, got shape {tuple(x.shape)}.")
        h = self.trunk(x)
        mu, sigma = self.actor(h)
        return mu, sigma, self.critic(h).squeeze(-1)

    def squash(self, raw):
        return squash_action(raw, self.action_dim)

    def mean_action(self, latent, inputs, windows=None):
        mu, _, _ = self(latent, inputs, windows)
        return self.squash(mu)

    def save(self, filename, metadata=None):
        save_checkpoint(filename, self, CHECKPOINT_KIND, self.arguments(), metadata)


def load_policy(filename):
    descriptor, arrays = read_checkpoint(filename, CHECKPOINT_KIND)
    policy = PolicyNetwork(**descriptor["arguments"])
    load_state(policy, arrays)
    policy.eval()
    return policy


def action_to_twist(action, target_speed, action_dim=2):
    """
    Gripper-frame twist commanded by a squashed action.
    """
    if action_dim == 2:
        return twist_from_action(float(action[0]), float(action[1]), target_speed)
    return Twist.from_vector(action, Frame.GRIPPER)


def compute_gae(rewards, values, dones, last_values, gamma=0.99, lam=0.95):
    """
    Generalised advantage estimates over arrays shaped (T, ...).
    dones[t] marks that the episode ended after step t, so nothing is bootstrapped across it.

    :return: Tuple of (advantages, returns).
    """
    rewards, values = np.asarray(rewards, dtype=float), np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    advantages = np.zeros_like(rewards)
    gae = np.zeros_like(rewards[0])
    for t in reversed(range(len(rewards))):
        next_values = last_values if t == len(rewards) - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        advantages[t] = gae
    return advantages, advantages + values


@dataclass
class PPOSamples:
    """
    Flattened training samples for one update.
    """
    latents: torch.Tensor
    inputs: torch.Tensor
    windows: torch.Tensor
    raw_actions: torch.Tensor
    log_probs: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def __len__(self):
        return self.inputs.shape[0]

    def select(self, indices):
        pick_rows = (lambda t: None if t is None else t[indices])
        return PPOSamples(pick_rows(self.latents), self.inputs[indices], pick_rows(self.windows),
                          self.raw_actions[indices], self.log_probs[indices], self.advantages[indices],
                          self.returns[indices])


@dataclass
class RolloutBatch:
    """
    Arrays shaped (horizon, workers, ...) from one round of collection.
    """
    latents: np.ndarray
    windows: np.ndarray
    inputs: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    scaled_rewards: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    r_errors: np.ndarray
    theta_errors: np.ndarray
    episodes: list

    def samples(self, gamma, lam):
        advantages, returns = compute_gae(self.scaled_rewards, self.values, self.dones, self.last_values, gamma, lam)
        flat = (lambda a: None if a is None else as_tensor(a.reshape(-1, *a.shape[2:])))
        return PPOSamples(flat(self.latents), flat(self.inputs), flat(self.windows), flat(self.raw_actions),
                          flat(self.log_probs), flat(advantages), flat(returns))


def likelihood_ratio(policy, samples):
    mu, sigma, _ = policy(samples.latents, samples.inputs, samples.windows)
    return torch.exp(gaussian_log_prob(mu, sigma, samples.raw_actions) - samples.log_probs)


def ppo_update(policy, optimizer, samples, config, generator):
    """
    Clipped-surrogate PPO epochs over shuffled minibatches with normalised advantages.

    :return: *dict* of diagnostics averaged over minibatches.
    """
    if len(samples) == 0:
        raise TrainingError("PPO update needs a non-empty batch.")
    advantages = samples.advantages
    advantages = (advantages - advantages.mean()) / (advantages.std(unbiased=False) + 1e-8)
    samples = PPOSamples(samples.latents, samples.inputs, samples.windows, samples.raw_actions, samples.log_probs,
                         advantages, samples.returns)

    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "approx_kl": 0.0, "clip_fraction": 0.0}
    count = 0
    for _ in range(config.epochs):
        order = torch.randperm(len(samples), generator=generator)
        for start in range(0, len(samples), config.minibatch_size):
            batch = samples.select(order[start:start + config.minibatch_size])
            mu, sigma, value = policy(batch.latents, batch.inputs, batch.windows)
            log_prob = gaussian_log_prob(mu, sigma, batch.raw_actions)
            ratio = torch.exp(log_prob - batch.log_probs)
            clipped = torch.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip)
            policy_loss = -torch.min(ratio * batch.advantages, clipped * batch.advantages).mean()
            value_loss = 0.5 * ((value - batch.returns) ** 2).mean()
            entropy = gaussian_entropy(sigma).mean()
            loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), config.max_grad_norm)
            optimizer.step()

            with torch.no_grad():
                totals["policy_loss"] += float(policy_loss)
                totals["value_loss"] += float(value_loss)
                totals["entropy"] += float(entropy)
                totals["approx_kl"] += float((batch.log_probs - log_prob).mean())
                totals["clip_fraction"] += float(((ratio - 1.0).abs() > config.clip).double().mean())
            count += 1

    return {key: value / count for key, value in totals.items()}


class _Worker(object):

    def __init__(self, index, rng, sim_config, action_dim, window):
        self.index = index
        self.rng = rng
        self.simulator = DoorSimulator(sim_config)
        self.history = HistoryWindow(window, STATE_DIM + action_dim) if window else None
        self.action_dim = action_dim
        self.env = None
        self.latent = None
        self.observation = None
        self.state = None
        self.a_prev = None
        self.truth = None
        self.episode_return = 0.0
        self.episode_length = 0

    def observe(self, observation):
        self.observation = observation
        self.state = scale_state(observation.s)
        if self.history is not None:
            self.history.push(self.state, self.a_prev)

    def inputs(self):
        return np.concatenate([self.state, self.a_prev])


class PPOTrainer(object):
    """
    Trains a PolicyNetwork in one of the PolicyMode settings against several door simulators
    stepped in a fixed order.
    """

    def __init__(self, mode, config=None, encoder=None, seed=0, ranges=PARAM_RANGES, sim_config=None, weights=None):
        self._mode = parse_mode(mode)
        self._config = PPOConfig() if config is None else config
        self._encoder = encoder
        self._ranges = ranges
        self._weights = RewardWeights() if weights is None else weights
        if encoder is None and self._mode in (PolicyMode.SINGLE_DOOR, PolicyMode.DOMAIN_RANDOMIZED,
                                              PolicyMode.VELOCITY):
            raise TrainingError(f"Policy mode {self._mode.value} needs a trained encoder.")
        if encoder is None and self._mode == PolicyMode.SIX_DOF:
            logger.warning("Training the six-action policy without an encoder, the latent is zero.")

        torch.manual_seed(seed)
        self.policy = PolicyNetwork(self._mode, hidden=self._config.hidden, window=self._config.window, seed=seed)
        self._optimizer = AdamState(self.policy.parameters(), self._config.lr)
        self._generator = make_generator(seed)
        self._reward_rms = RunningMeanStd()
        self._running_returns = np.zeros(self._config.workers)
        self._steps = 0
        window = self._config.window if self.policy.end_to_end else 0
        self._workers = [_Worker(i, np.random.default_rng([seed, i]), sim_config, self.policy.action_dim, window)
                         for i in range(self._config.workers)]
        for worker in self._workers:
            self._new_episode(worker)

    def get_steps(self):
        return self._steps

    def _new_episode(self, worker):
        if self._mode == PolicyMode.SINGLE_DOOR:
            e = mean_env(self._ranges)
        else:
            e = sample_env(worker.rng, self._ranges)
            logger.debug(f"Worker {worker.index} new door {env_hash(e)[:12]}")
        worker.env = e
        if self._encoder is not None and not self.policy.end_to_end:
            with torch.no_grad():
                mu, sigma = self._encoder.encode(normalize(e))
                worker.latent = gaussian_sample(mu, sigma, worker.rng.standard_normal(mu.shape[0])).numpy()
        else:
            worker.latent = np.zeros(self.policy.latent_dim)
        worker.a_prev = np.zeros(self.policy.action_dim)
        if worker.history is not None:
            worker.history.reset()
        worker.observe(worker.simulator.reset(e, worker.rng))
        worker.truth = worker.simulator.ground_truth()
        worker.episode_return = 0.0
        worker.episode_length = 0

    def _policy_inputs(self):
        latents = np.array([w.latent for w in self._workers])
        inputs = np.array([w.inputs() for w in self._workers])
        windows = np.array([w.history.array() for w in self._workers]) if self.policy.end_to_end else None
        return latents, inputs, windows

    def _reward(self, worker, action, twist, wrench):
        r, theta = worker.truth
        if self._mode in (PolicyMode.SIX_DOF, PolicyMode.VELOCITY):
            ideal = twist_from_action(r, theta, worker.env.target_speed)
            return reward_6dof(twist, ideal, wrench, theta, self._weights)
        return reward(r, theta, float(action[0]), float(action[1]), wrench, self._weights)

    def collect_rollouts(self):
        """
        Step every worker for one horizon with actions sampled from the current policy.

        :return: RolloutBatch.
        """
        config = self._config
        horizon, count, action_dim = config.horizon, len(self._workers), self.policy.action_dim
        end_to_end = self.policy.end_to_end
        latents = np.zeros((horizon, count, self.policy.latent_dim))
        windows = np.zeros((horizon, count, config.window, STATE_DIM + action_dim)) if end_to_end else None
        inputs = np.zeros((horizon, count, STATE_DIM + action_dim))
        raw_actions = np.zeros((horizon, count, action_dim))
        log_probs, values, rewards, scaled, dones, r_errors, theta_errors = (
            np.zeros((horizon, count)) for _ in range(7))
        episodes = []

        for t in range(horizon):
            step_latents, step_inputs, step_windows = self._policy_inputs()
            with torch.no_grad():
                mu, sigma, value = self.policy(step_latents, step_inputs, step_windows)
                raw = mu + sigma * torch.randn(mu.shape, generator=self._generator, dtype=mu.dtype)
                log_prob = gaussian_log_prob(mu, sigma, raw)
                actions = self.policy.squash(raw).numpy()
            latents[t], inputs[t], raw_actions[t] = step_latents, step_inputs, raw.numpy()
            if end_to_end:
                windows[t] = step_windows
            log_probs[t], values[t] = log_prob.numpy(), value.numpy()

            for i, worker in enumerate(self._workers):
                action = actions[i]
                twist = action_to_twist(action, worker.env.target_speed, action_dim)
                observation, done, info = worker.simulator.step(twist)
                step_reward = self._reward(worker, action, twist, observation.wrench())
                if action_dim == 2:
                    r_errors[t, i] = abs(action[0] - worker.truth[0])
                    theta_errors[t, i] = abs(action[1] - worker.truth[1])
                else:
                    r_errors[t, i] = theta_errors[t, i] = np.nan
                rewards[t, i], dones[t, i] = step_reward, float(done)
                worker.episode_return += step_reward
                worker.episode_length += 1
                worker.a_prev = action
                worker.observe(observation)
                worker.truth = (info["r"], info["theta"])
                if done:
                    episodes.append({"worker": worker.index, "return": worker.episode_return,
                                     "length": worker.episode_length, "success": info["success"]})
                    self._new_episode(worker)

            self._running_returns = self._running_returns * config.gamma + rewards[t]
            self._reward_rms.update(self._running_returns)
            scaled[t] = rewards[t] / self._reward_rms.std()
            self._running_returns[dones[t] > 0.0] = 0.0

        step_latents, step_inputs, step_windows = self._policy_inputs()
        with torch.no_grad():
            _, _, last_values = self.policy(step_latents, step_inputs, step_windows)
        self._steps += horizon * count

        return RolloutBatch(latents, windows, inputs, raw_actions, log_probs, values, rewards, scaled, dones,
                            last_values.numpy(), r_errors, theta_errors, episodes)

    def update(self, batch):
        samples = batch.samples(self._config.gamma, self._config.gae_lambda)
        return ppo_update(self.policy, self._optimizer, samples, self._config, self._generator)

    def train(self, total_steps=None):
        """
        Alternate collection and update until *total_steps* environment steps have been taken.

        :return: List of per-update curve *dict*.
        """
        total_steps = self._config.total_steps if total_steps is None else total_steps
        per_update = self._config.horizon * self._config.workers
        updates = max(1, math.ceil(total_steps / per_update))
        curve = []
        for index in range(updates):
            batch = self.collect_rollouts()
            diagnostics = self.update(batch)
            finished = batch.episodes
            row = {
                "update": index,
                "steps": self._steps,
                "mean_reward": float(batch.rewards.mean()),
                "mean_r_error": float(np.mean(batch.r_errors)),
                "mean_theta_error": float(np.mean(batch.theta_errors)),
                "approx_kl": diagnostics["approx_kl"],
                "clip_fraction": diagnostics["clip_fraction"],
                "policy_loss": diagnostics["policy_loss"],
                "value_loss": diagnostics["value_loss"],
                "entropy": diagnostics["entropy"],
                "episodes": len(finished),
                "success_rate": float(np.mean([e["success"] for e in finished])) if finished else float("nan"),
            }
            curve.append(row)
            logger.info(f"Update {index} ({self._steps} steps): reward {row['mean_reward']:.4f}, "
                        f"|r error| {row['mean_r_error']:.4f}, |theta error| {row['mean_theta_error']:.4f}, "
                        f"KL {row['approx_kl']:.5f}, clip {row['clip_fraction']:.3f}")
        self.policy.eval()
        return curve


def train_base_policy(mode, config=None, encoder=None, seed=0, ranges=PARAM_RANGES, sim_config=None, weights=None,
                      total_steps=None):
    """
    :return: Tuple of (PolicyNetwork, list of per-update curve *dict*).
    """
    trainer = PPOTrainer(mode, config, encoder, seed, ranges, sim_config, weights)
    curve = trainer.train(total_steps)
    return trainer.policy, curve
