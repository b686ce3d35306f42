"""
Evaluate a single agent on the evaluation door sequence.
"""
import numpy as np

from hinge.rl.adaptation import load_adaptation
from hinge.rl.agents import (AdaptiveAgent, BasePolicyAgent, EndToEndAgent, OracleAgent, RandomAgent,
                             SixDofAgent)
from hinge.rl.base import BaseStage
from hinge.rl.doorsim import SimConfig
from hinge.rl.encoder_vae import load_vae
from hinge.rl.errors import ConfigurationError
from hinge.rl.harness import (EVAL_MIN_SPEED, evaluate, evaluation_ranges, write_episode_csv,
                              write_episode_trajectory, write_metrics_csv)
from hinge.rl.policy_ppo import RewardWeights, load_policy

VARIANTS = ("oracle", "random", "bp", "ap", "fap", "e2e", "6dof")


class StageRunner(BaseStage):
    """
    Write ``metrics.csv``, ``episodes.csv`` and the first episode's ``trajectory.csv`` for one agent variant.
    """

    def _agent(self, variant):
        rng = np.random.default_rng([self._seed, 1000])
        if variant == "oracle":
            return OracleAgent()
        if variant == "random":
            return RandomAgent(rng)
        if variant == "bp":
            return BasePolicyAgent(load_policy(self._checkpoint("policy")), load_vae(self._checkpoint("encoder")))
        if variant in ("ap", "fap"):
            key = "adaptation" if variant == "ap" else "finetuned_adaptation"
            return AdaptiveAgent(load_adaptation(self._checkpoint(key)), load_policy(self._checkpoint("policy")), rng,
                                 bool(self._parameter("sample_latent", True)))
        if variant == "e2e":
            return EndToEndAgent(load_policy(self._checkpoint("no_encoder_policy")))
        if variant == "6dof":
            encoder = self._checkpoint("encoder", required=False)
            return SixDofAgent(load_policy(self._checkpoint("six_dof_policy")),
                               None if encoder is None else load_vae(encoder))
        raise ConfigurationError(f"Unknown evaluation variant {variant}, expected one of {', '.join(VARIANTS)}.")

    def _run(self):
        variant = str(self._parameter("variant", "bp"))
        agent = self._agent(variant)
        ranges = evaluation_ranges(float(self._parameter("eval_min_speed", EVAL_MIN_SPEED)))
        report, records = evaluate(agent, int(self._parameter("episodes", 20)), self._seed, ranges,
                                   SimConfig.from_parameters(self._parameters),
                                   bool(self._parameter("per_episode", False)),
                                   RewardWeights.from_parameters(self._parameters), keep_rows=True)

        header = self._header("eval", f"evaluation_{variant}", [record.env_hash for record in records])
        write_metrics_csv(self._form_full_filename("metrics.csv"), {variant: report}, header)
        write_episode_csv(self._form_full_filename("episodes.csv"), {variant: records}, header)
        write_episode_trajectory(self._form_full_filename("trajectory.csv"), records[0], agent.action_dim, header)
