"""
Variational autoencoder compressing normalised environment parameters (16 values) to an
8-dimensional environment latent.
"""
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from hinge.rl.config import pick
from hinge.rl.envdomain import FIELD_NAMES, PARAM_RANGES, normalize, sample_env
from hinge.rl.errors import NetworkError, TrainingError
from hinge.rl.logger import HingeLogger
from hinge.rl.neuralcore import (
    DTYPE, AdamState, DenseStack, GaussianHead, as_tensor, gaussian_sample, kl_standard_normal, load_state,
    make_generator, read_checkpoint, save_checkpoint, squared_error)

logger = HingeLogger.getLogger()

ENV_DIM = len(FIELD_NAMES)
LATENT_DIM = 8
CHECKPOINT_KIND = "vae"


@dataclass
class VAEConfig:
    latent_dim: int = LATENT_DIM
    hidden: int = 16
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 256
    dataset_size: int = 100000
    holdout_fraction: float = 0.1
    probe_ridge: float = 1e-3
    kl_weight: float = 0.01
    kl_warmup_epochs: int = 10

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.dataset_size < 1:
            raise TrainingError("VAE epochs, batch size and dataset size must be positive.")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise TrainingError(f"Hold-out fraction must lie in [0, 1), got {self.holdout_fraction}.")
        if self.kl_weight <= 0.0 or self.kl_warmup_epochs < 0:
            raise TrainingError("KL weight must be positive and the warm-up non-negative.")

    @classmethod
    def from_parameters(cls, parameters):
        return cls(**pick(parameters, cls, "vae_"))


class VariationalAutoencoder(nn.Module):
    """
    Encoder 16 -> 16 -> 16 -> (mu, sigma) and a mirrored decoder latent -> 16 -> 16 -> 16.
    """

    def __init__(self, latent_dim=LATENT_DIM, hidden=16, seed=0):
        super().__init__()
        self._arguments = {"latent_dim": latent_dim, "hidden": hidden, "seed": seed}
        generator = make_generator(seed)
        self.latent_dim = latent_dim
        self.encoder = DenseStack([ENV_DIM, hidden, hidden], "tanh", generator=generator)
        self.head = GaussianHead(hidden, latent_dim, generator=generator)
        self.decoder = DenseStack([latent_dim, hidden, hidden, ENV_DIM], "tanh", final_activation="identity",
                                  generator=generator)

    def arguments(self):
        return dict(self._arguments)

    def encode(self, e_normalized):
        """
        :param e_normalized: Normalised parameters, shape (16,) or (batch, 16).
        :return: Tuple of (mu, sigma).
        """
        x = as_tensor(e_normalized)
        if x.shape[-1] != ENV_DIM:
            raise NetworkError(f"Encoder expects {ENV_DIM} environment values, got shape {tuple(x.shape)}.")
        return self.head(self.encoder(x))

    def decode(self, z):
        z = as_tensor(z)
        if z.shape[-1] != self.latent_dim:
            raise NetworkError(f"Decoder expects {self.latent_dim} latent values, got shape {tuple(z.shape)}.")
        return self.decoder(z)

    def forward(self, e_normalized, eps):
        mu, sigma = self.encode(e_normalized)
        z = gaussian_sample(mu, sigma, eps)
        return self.decode(z), mu, sigma

    def sample_latent(self, e_normalized, eps):
        mu, sigma = self.encode(e_normalized)
        return gaussian_sample(mu, sigma, eps)

    def reconstruct(self, e_normalized):
        mu, _ = self.encode(e_normalized)
        return self.decode(mu)

    def save(self, filename, metadata=None):
        save_checkpoint(filename, self, CHECKPOINT_KIND, self.arguments(), metadata)


def load_vae(filename):
    descriptor, arrays = read_checkpoint(filename, CHECKPOINT_KIND)
    vae = VariationalAutoencoder(**descriptor["arguments"])
    load_state(vae, arrays)
    vae.eval()
    return vae


def vae_loss(e, e_hat, mu, sigma, kl_weight=1.0):
    """
    Reconstruction squared error plus KL divergence from the unit normal, averaged over any batch dimension.
    The total weighs the KL term by *kl_weight*.

    :return: Tuple of (total, reconstruction, regularisation) scalar tensors.
    """
    e, e_hat, mu, sigma = as_tensor(e), as_tensor(e_hat), as_tensor(mu), as_tensor(sigma)
    if e.shape[-1] != ENV_DIM or e_hat.shape != e.shape:
        raise NetworkError(f"Reconstruction shapes {tuple(e.shape)} and {tuple(e_hat.shape)} do not match.")
    if mu.shape != sigma.shape:
        raise NetworkError(f"Latent shapes {tuple(mu.shape)} and {tuple(sigma.shape)} do not match.")
    rec = squared_error(e, e_hat).mean()
    reg = kl_standard_normal(mu, sigma).mean()
    return rec + kl_weight * reg, rec, reg


def sample_dataset(rng, size, ranges=PARAM_RANGES):
    """
    :return: Array (size, 16) of normalised parameters drawn with sample_env.
    """
    return np.array([normalize(sample_env(rng, ranges), ranges) for _ in range(size)])


def reconstruction_mse(vae, e_normalized):
    """
    Mean squared reconstruction error per normalised coordinate, decoding the latent mean.
    """
    with torch.no_grad():
        e = as_tensor(e_normalized)
        return float(((vae.reconstruct(e) - e) ** 2).mean())


def latent_probe_r2(z_fit, e_fit, z_eval=None, e_eval=None, ridge=1e-3):
    """
    Fit a ridge regression from latents to normalised parameters and report the coefficient
    of determination averaged over the 16 coordinates.

    :param z_fit: Latents (N, k) used to fit the probe.
    :param e_fit: Targets (N, 16).
    :param z_eval: Latents of a held-out set, defaults to the fit set.
    :param e_eval: Targets of the held-out set.
    :param ridge: L2 penalty on the weights, the bias is not penalised.
    :return: Mean R^2.
    """
    z_fit, e_fit = np.asarray(z_fit, dtype=float), np.asarray(e_fit, dtype=float)
    z_eval = z_fit if z_eval is None else np.asarray(z_eval, dtype=float)
    e_eval = e_fit if e_eval is None else np.asarray(e_eval, dtype=float)
    if len(z_fit) == 0 or len(z_eval) == 0:
        raise TrainingError("Latent probe needs non-empty data.")

    design = np.hstack([z_fit, np.ones((len(z_fit), 1))])
    penalty = ridge * np.eye(design.shape[1])
    penalty[-1, -1] = 0.0
    weights = np.linalg.solve(design.T @ design + penalty, design.T @ e_fit)

    prediction = np.hstack([z_eval, np.ones((len(z_eval), 1))]) @ weights
    residual = ((e_eval - prediction) ** 2).sum(axis=0)
    total = ((e_eval - e_eval.mean(axis=0)) ** 2).sum(axis=0)
    r2 = 1.0 - residual / np.where(total > 0.0, total, 1.0)
    return float(r2.mean())


def kl_schedule(config, epoch):
    """
    KL weight for *epoch*, ramped linearly up to config.kl_weight over the warm-up epochs.

    Summed squared error against a unit-weight KL is minimised by a decoder that ignores the latent when
    every coordinate has variance 1/3, so the weight stays well below one.
    """
    if config.kl_warmup_epochs == 0:
        return config.kl_weight
    return config.kl_weight * min(1.0, (epoch + 1) / config.kl_warmup_epochs)


def holdout_metrics(vae, dataset, config=None):
    """
    Hold-out reconstruction MSE and latent probe R², with the split train_vae uses: the probe is fitted
    on the training part and scored on the hold-out part.

    The probe R² of k latents over independent coordinates cannot exceed k / 16.

    :return: *dict* with holdout_mse and probe_r2.
    """
    config = VAEConfig() if config is None else config
    dataset = np.asarray(dataset, dtype=float)
    holdout_size = int(round(config.holdout_fraction * len(dataset)))
    fit, holdout = dataset[holdout_size:], dataset[:holdout_size]
    if holdout_size == 0:
        holdout = fit
    with torch.no_grad():
        z_fit = vae.encode(fit)[0].numpy()
        z_holdout = vae.encode(holdout)[0].numpy()
    return {
        "holdout_mse": reconstruction_mse(vae, holdout),
        "probe_r2": latent_probe_r2(z_fit, fit, z_holdout, holdout, config.probe_ridge),
    }


def train_vae(dataset, config=None, seed=0):
    """
    Train a VAE on normalised environment parameters.

    :param dataset: Array (N, 16) from sample_dataset.
    :param config: VAEConfig.
    :param seed: Seeds initialisation, shuffling and reparameterisation noise.
    :return: Tuple of (VariationalAutoencoder, list of per-epoch curve *dict*).
    """
    config = VAEConfig() if config is None else config
    data = as_tensor(dataset)
    if data.dim() != 2 or data.shape[0] == 0:
        raise TrainingError("VAE training needs a non-empty (N, 16) dataset.")

    generator = make_generator(seed)
    holdout_size = int(round(config.holdout_fraction * data.shape[0]))
    if holdout_size >= data.shape[0]:
        raise TrainingError("Hold-out set leaves no training data.")
    train_data, holdout = data[holdout_size:], data[:holdout_size]

    vae = VariationalAutoencoder(config.latent_dim, config.hidden, seed)
    optimizer = AdamState(vae.parameters(), config.lr)
    curve = []
    for epoch in range(config.epochs):
        vae.train()
        kl_weight = kl_schedule(config, epoch)
        order = torch.randperm(train_data.shape[0], generator=generator)
        totals = np.zeros(3)
        batches = 0
        for start in range(0, train_data.shape[0], config.batch_size):
            batch = train_data[order[start:start + config.batch_size]]
            eps = torch.randn(batch.shape[0], config.latent_dim, generator=generator, dtype=DTYPE)
            e_hat, mu, sigma = vae(batch, eps)
            total, rec, reg = vae_loss(batch, e_hat, mu, sigma, kl_weight)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            totals += [float(total), float(rec), float(reg)]
            batches += 1

        totals /= batches
        row = {"epoch": epoch, "kl_weight": kl_weight, "loss": totals[0], "reconstruction": totals[1],
               "regularisation": totals[2],
               "holdout_mse": reconstruction_mse(vae, holdout) if holdout_size else float("nan")}
        curve.append(row)
        logger.info(f"VAE epoch {epoch}: loss {row['loss']:.5f}, reconstruction {row['reconstruction']:.5f}, "
                    f"KL {row['regularisation']:.5f}, hold-out MSE {row['holdout_mse']:.5f}")

    vae.eval()
    return vae, curve
