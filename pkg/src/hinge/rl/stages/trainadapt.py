"""
Train the adaptation module from base policy rollouts.
"""
import numpy as np

from hinge.rl.adaptation import AdaptConfig, action_discrepancy, collect_adaptation_data, latent_error, train_adaptation
from hinge.rl.base import BaseStage
from hinge.rl.doorsim import SimConfig
from hinge.rl.encoder_vae import load_vae
from hinge.rl.envdomain import PARAM_RANGES
from hinge.rl.policy_ppo import load_policy


def collect_holdout(policy, encoder, config, seed, sim_config):
    """
    Hold-out rollouts drawn from their own random stream, None when no hold-out episodes are configured.
    """
    if config.holdout_episodes < 1:
        return None
    return collect_adaptation_data(policy, encoder, config.holdout_episodes, np.random.default_rng([seed, 2]),
                                   config.window, config.sample_stride, PARAM_RANGES, sim_config)


class StageRunner(BaseStage):
    """
    Regress the adaptation module onto the encoder distribution and write ``adaptation.ckpt``,
    ``curve.csv`` and ``metrics.csv`` with the hold-out latent and action errors.
    """

    def _run(self):
        config = AdaptConfig.from_parameters(self._parameters)
        sim_config = SimConfig.from_parameters(self._parameters)
        policy = load_policy(self._checkpoint("policy"))
        encoder = load_vae(self._checkpoint("encoder"))

        holdout = collect_holdout(policy, encoder, config, self._seed, sim_config)
        module, curve = train_adaptation(policy, encoder, config, self._seed, PARAM_RANGES, sim_config,
                                         holdout=holdout)

        metrics = {"window": config.window, "holdout_samples": 0 if holdout is None else len(holdout)}
        if holdout is not None:
            metrics["latent_error"], metrics["baseline_latent_error"] = latent_error(module, holdout)
            metrics["action_discrepancy"] = action_discrepancy(module, policy, holdout)

        module.save(self._form_full_filename("adaptation.ckpt"), {"seed": self._seed, "stage": "train_adapt"})
        self._write_rows("curve.csv", curve, "train_adapt", "adaptation_curve")
        self._write_rows("metrics.csv", [metrics], "train_adapt", "adaptation_metrics")
