"""
Train the environment encoder.
"""
import numpy as np

from hinge.rl.base import BaseStage
from hinge.rl.encoder_vae import VAEConfig, holdout_metrics, sample_dataset, train_vae
from hinge.rl.logger import HingeLogger

logger = HingeLogger.getLogger()


class StageRunner(BaseStage):
    """
    Train a VAE on uniformly sampled doors and write ``encoder.ckpt``, the per-epoch ``curve.csv``
    and ``metrics.csv`` with the hold-out reconstruction error and the latent probe R².
    """

    def _run(self):
        config = VAEConfig.from_parameters(self._parameters)
        dataset = sample_dataset(np.random.default_rng(self._seed), config.dataset_size)
        vae, curve = train_vae(dataset, config, self._seed)

        metrics = holdout_metrics(vae, dataset, config)
        metrics.update({"epochs": config.epochs, "dataset_size": config.dataset_size, "kl_weight": config.kl_weight})
        logger.info(f"Encoder hold-out MSE {metrics['holdout_mse']:.5f}, probe R2 {metrics['probe_r2']:.4f}")

        vae.save(self._form_full_filename("encoder.ckpt"), {"seed": self._seed, "stage": "train_vae"})
        self._write_rows("curve.csv", curve, "train_vae", "encoder_curve")
        self._write_rows("metrics.csv", [metrics], "train_vae", "encoder_metrics")
