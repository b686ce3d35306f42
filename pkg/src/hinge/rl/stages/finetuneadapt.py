"""
Fine-tune a trained adaptation module against the frozen base policy.
"""
import numpy as np

from hinge.rl.adaptation import (AdaptConfig, AdaptiveController, action_discrepancy, finetune_adaptation,
                                 load_adaptation, run_adaptive_policy)
from hinge.rl.base import BaseStage
from hinge.rl.doorsim import DoorSimulator, SimConfig
from hinge.rl.encoder_vae import load_vae
from hinge.rl.envdomain import PARAM_RANGES, mean_env
from hinge.rl.logger import HingeLogger
from hinge.rl.neuralcore import parameter_checksum
from hinge.rl.policy_ppo import load_policy
from hinge.rl.stages.trainadapt import collect_holdout

logger = HingeLogger.getLogger()


class StageRunner(BaseStage):
    """
    Write ``finetuned_adaptation.ckpt``, the per-epoch ``curve.csv`` and ``metrics.csv`` with the
    hold-out action discrepancy before and after fine-tuning and the policy checksum on both sides, and ``trajectory.csv`` of the fine-tuned module opening the mean door.
    """

    def _run(self):
        config = AdaptConfig.from_parameters(self._parameters)
        sim_config = SimConfig.from_parameters(self._parameters)
        policy = load_policy(self._checkpoint("policy"))
        encoder = load_vae(self._checkpoint("encoder"))
        rho = load_adaptation(self._checkpoint("adaptation"))

        checksum_before = parameter_checksum(policy)
        holdout = collect_holdout(policy, encoder, config, self._seed, sim_config)
        discrepancy_before = float("nan") if holdout is None else action_discrepancy(rho, policy, holdout)
        rho_star, curve = finetune_adaptation(rho, policy, encoder, config, self._seed, PARAM_RANGES, sim_config,
                                              holdout=holdout)
        discrepancy_after = float("nan") if holdout is None else action_discrepancy(rho_star, policy, holdout)

        metrics = {
            "discrepancy_before": discrepancy_before,
            "discrepancy_after": discrepancy_after,
            "policy_checksum_before": checksum_before,
            "policy_checksum_after": parameter_checksum(policy),
        }
        logger.info(f"Action discrepancy {discrepancy_before:.6f} before, {discrepancy_after:.6f} after fine-tuning")

        rho_star.save(self._form_full_filename("finetuned_adaptation.ckpt"),
                      {"seed": self._seed, "stage": "finetune_adapt"})
        self._write_rows("curve.csv", curve, "finetune_adapt", "finetune_curve")
        self._write_rows("metrics.csv", [metrics], "finetune_adapt", "finetune_metrics")
        self._write_rows("trajectory.csv", self._mean_door_trajectory(rho_star, policy, sim_config), "finetune_adapt",
                         "finetune_trajectory")

    def _mean_door_trajectory(self, module, policy, sim_config):
        e = mean_env()
        simulator = DoorSimulator(sim_config)
        observation = simulator.reset(e)
        controller = AdaptiveController(module, policy, None, sample_latent=False)
        rows, success = run_adaptive_policy(controller, simulator, observation, e.target_speed)
        logger.info(f"Fine-tuned module on the mean door: {len(rows)} steps, success {success}")
        table = []
        for step, door_angle, s, action in rows:
            row = {"step": step, "door_angle": door_angle}
            row.update({f"s{i}": value for i, value in enumerate(np.asarray(s, dtype=float))})
            row.update({f"a{i}": value for i, value in enumerate(np.asarray(action, dtype=float))})
            table.append(row)
        return table
