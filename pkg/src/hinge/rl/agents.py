"""
Controllers evaluated by the harness. Every agent sees observations and the commanded door speed;
agents marked privileged are also told the door parameters and true grasp at reset.
"""
import numpy as np
import torch

from hinge.rl.adaptation import AdaptiveController, HistoryWindow
from hinge.rl.doorsim import scale_state
from hinge.rl.envdomain import normalize
from hinge.rl.errors import ExperimentError
from hinge.rl.kinematics import twist_from_action
from hinge.rl.policy_ppo import R_HIGH, R_LOW, THETA_BOUND, action_to_twist


class Agent(object):
    privileged = False
    action_dim = 2

    def reset(self, observation, target_speed):
        raise NotImplementedError()

    def act(self, observation):
        """
        :return: Tuple of (gripper-frame Twist, action array).
        """
        raise NotImplementedError()

    def set_privileged(self, env, grasp):
        raise ExperimentError(f"{type(self).__name__} does not accept privileged information.")


class OracleAgent(Agent):
    """
    Commands the ideal twist for the true grasp.
    """
    privileged = True

    def __init__(self):
        self._grasp = None
        self._target_speed = None

    def set_privileged(self, env, grasp):
        self._grasp = grasp

    def reset(self, observation, target_speed):
        if self._grasp is None:
            raise ExperimentError("The oracle needs the true grasp before reset.")
        self._target_speed = target_speed

    def act(self, observation):
        r, theta = self._grasp
        return twist_from_action(r, theta, self._target_speed), np.array([r, theta])


class RandomAgent(Agent):

    def __init__(self, rng):
        self._rng = rng
        self._target_speed = None

    def reset(self, observation, target_speed):
        self._target_speed = target_speed

    def act(self, observation):
        action = np.array([self._rng.uniform(R_LOW, R_HIGH), self._rng.uniform(-THETA_BOUND, THETA_BOUND)])
        return twist_from_action(action[0], action[1], self._target_speed), action


class BasePolicyAgent(Agent):
    """
    Policy acting on the encoder's latent mean of the true door parameters.
    """
    privileged = True

    def __init__(self, policy, encoder=None):
        if policy.end_to_end:
            raise ExperimentError("Use EndToEndAgent for a no-encoder policy.")
        self._policy = policy
        self._encoder = encoder
        self.action_dim = policy.action_dim
        self._latent = None
        self._a_prev = None
        self._target_speed = None

    def set_privileged(self, env, grasp):
        if self._encoder is None:
            self._latent = np.zeros(self._policy.latent_dim)
            return
        with torch.no_grad():
            mu, _ = self._encoder.encode(normalize(env))
        self._latent = mu.numpy()

    def reset(self, observation, target_speed):
        if self._latent is None:
            raise ExperimentError("The base policy needs the door parameters before reset.")
        self._a_prev = np.zeros(self.action_dim)
        self._target_speed = target_speed

    def act(self, observation):
        inputs = np.concatenate([scale_state(observation.s), self._a_prev])
        with torch.no_grad():
            action = self._policy.mean_action(self._latent, inputs).numpy()
        self._a_prev = action
        return action_to_twist(action, self._target_speed, self.action_dim), action


class SixDofAgent(BasePolicyAgent):

    def __init__(self, policy, encoder=None):
        if policy.action_dim != 6:
            raise ExperimentError("SixDofAgent needs a six-action policy.")
        super().__init__(policy, encoder)


class AdaptiveAgent(Agent):
    """
    Adaptation module (original or fine-tuned) estimating the latent for a frozen policy.
    """

    def __init__(self, module, policy, rng, sample_latent=True):
        self._controller = AdaptiveController(module, policy, rng, sample_latent)

    def reset(self, observation, target_speed):
        self._controller.reset(observation, target_speed)

    def act(self, observation):
        return self._controller.act(observation)


class EndToEndAgent(Agent):
    """
    No-encoder policy whose feature net reads the history window directly.
    """

    def __init__(self, policy):
        if not policy.end_to_end:
            raise ExperimentError("EndToEndAgent needs a no-encoder policy.")
        self._policy = policy
        self._history = HistoryWindow(policy.window, policy.feature_net.feature_dim)
        self._a_prev = np.zeros(2)
        self._target_speed = None

    def reset(self, observation, target_speed):
        self._history.reset()
        self._a_prev = np.zeros(2)
        self._target_speed = target_speed

    def act(self, observation):
        state = scale_state(observation.s)
        self._history.push(state, self._a_prev)
        with torch.no_grad():
            action = self._policy.mean_action(None, np.concatenate([state, self._a_prev]),
                                              self._history.array()).numpy()
        self._a_prev = action
        return twist_from_action(action[0], action[1], self._target_speed), action
