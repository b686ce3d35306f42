"""
Run one of the named comparisons over identical door sequences.
"""
from hinge.rl.base import BaseStage
from hinge.rl.doorsim import SimConfig
from hinge.rl.harness import (EVAL_MIN_SPEED, ExperimentSpec, compare_bp_ap_fap, run_ablation, write_comparison_csv,
                              write_episode_csv, write_metrics_csv)

CHECKPOINT_KEYS = ("encoder", "policy", "single_door_policy", "no_encoder_policy", "six_dof_policy",
                   "velocity_policy", "adaptation", "finetuned_adaptation")


class StageRunner(BaseStage):
    """
    Write ``comparison.csv`` (metrics by arm), ``metrics.csv`` (one row per arm) and ``episodes.csv``.
    """

    def _run(self):
        spec = ExperimentSpec(
            name=str(self._parameter("experiment", "sd_vs_dr")),
            checkpoints={key: self._parameter(key) for key in CHECKPOINT_KEYS if self._parameter(key) is not None},
            episodes=int(self._parameter("episodes", 20)),
            seed=self._seed,
            eval_min_speed=float(self._parameter("eval_min_speed", EVAL_MIN_SPEED)),
            per_episode=bool(self._parameter("per_episode", False)),
            sample_latent=bool(self._parameter("sample_latent", True)))
        compare = compare_bp_ap_fap if spec.name == "ap_vs_fap" else run_ablation
        reports, records = compare(spec, sim_config=SimConfig.from_parameters(self._parameters))

        door_hashes = [record.env_hash for record in next(iter(records.values()))]
        header = self._header(spec.name, spec.experiment().table, door_hashes)
        write_comparison_csv(self._form_full_filename("comparison.csv"), reports, header)
        write_metrics_csv(self._form_full_filename("metrics.csv"), reports, header)
        write_episode_csv(self._form_full_filename("episodes.csv"), records, header)
