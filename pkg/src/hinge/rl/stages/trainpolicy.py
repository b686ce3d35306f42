"""
Train a base policy with PPO.
"""
from hinge.rl.base import BaseStage
from hinge.rl.doorsim import SimConfig
from hinge.rl.encoder_vae import load_vae
from hinge.rl.policy_ppo import PolicyMode, PPOConfig, RewardWeights, parse_mode, train_base_policy


class StageRunner(BaseStage):
    """
    Train the policy of the configured mode and write ``policy.ckpt`` and the per-update ``curve.csv``.

    Modes other than the no-encoder policy read the ``encoder`` checkpoint, which is optional for six actions.
    """

    def _run(self):
        mode = parse_mode(self._parameter("mode", PolicyMode.DOMAIN_RANDOMIZED.value))
        config = PPOConfig.from_parameters(self._parameters)

        encoder = None
        if mode != PolicyMode.NO_ENCODER:
            filename = self._checkpoint("encoder", required=mode != PolicyMode.SIX_DOF)
            encoder = None if filename is None else load_vae(filename)

        steps = self._parameter("steps")
        policy, curve = train_base_policy(mode, config, encoder, self._seed,
                                          sim_config=SimConfig.from_parameters(self._parameters),
                                          weights=RewardWeights.from_parameters(self._parameters),
                                          total_steps=None if steps is None else int(steps))

        policy.save(self._form_full_filename("policy.ckpt"), {"seed": self._seed, "stage": "train_policy"})
        self._write_rows("curve.csv", curve, "train_policy", f"policy_curve_{mode.value}")
