"""Mini-batch ADAM training of the autoencoder on sampled normal patches."""

import logging
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..models.config import ArchitectureSpec, CwssimConfig, PatchSampler, TrainConfig
from ..models.errors import ConfigurationError, TrainingDivergedError
from ..models.results import TrainingHistory
from ..utils.data_loader import DataLoader, DatasetIndex, PatchSet, sample_patches
from ..utils.log_config import progress_enabled
from ..utils.seeding import SHUFFLE, derive_rng
from .network import ModelParams, backward, forward, init_model
from .optimizer import adam_step, init_adam
from .similarity import ReconstructionLoss, make_loss

logger = logging.getLogger(__name__)


class Trainer:
    """Runs the epoch/batch loop for one TrainConfig."""

    def __init__(
        self,
        cfg: TrainConfig,
        architecture: Optional[ArchitectureSpec] = None,
        cwssim: Optional[CwssimConfig] = None,
    ):
        """
        Initialize the trainer and build the selected loss.

        Args:
            cfg: Training hyperparameters; ``seed`` defaults to 0 when unset
            architecture: Autoencoder layout (default architecture if omitted)
            cwssim: Window settings for the CW-SSIM loss

        Raises:
            ConfigurationError: If the patch size does not fit the architecture.
        """
        self.cfg = cfg
        self.seed = 0 if cfg.seed is None else cfg.seed
        self.architecture = architecture or ArchitectureSpec.default()
        trace = self.architecture.spatial_trace(cfg.patch_size)
        if trace is None or trace[-1] != cfg.patch_size:
            raise ConfigurationError(
                f"patch size {cfg.patch_size} is not divisible by "
                f"2**{self.architecture.encoder_depth}"
            )
        self.loss: ReconstructionLoss = make_loss(
            cfg.loss,
            decomposer=cfg.decomposer_for_patches(),
            cwssim=cwssim,
            ssim=cfg.ssim,
        )

    def sample(self, index: DatasetIndex, loader: Optional[DataLoader] = None) -> PatchSet:
        sampler = PatchSampler(
            patch_size=self.cfg.patch_size, count=self.cfg.patch_count, rng_seed=self.seed
        )
        patches = sample_patches(index, sampler, loader)
        if len(patches) == 0:
            raise ConfigurationError("training needs at least one patch")
        return patches

    def fit(
        self, patches: PatchSet, params: Optional[ModelParams] = None
    ) -> Tuple[ModelParams, TrainingHistory]:
        """Train for ``cfg.epochs`` epochs over ``patches``.

        Raises:
            TrainingDivergedError: If a batch loss is non-finite.
            TrainingError: If a gradient is non-finite.
        """
        cfg = self.cfg
        params = params or init_model(self.architecture, self.seed)
        state = init_adam(params)
        shuffle_rng = derive_rng(self.seed, SHUFFLE)
        n = len(patches)
        history = TrainingHistory(loss=cfg.loss)
        show_progress = progress_enabled(logger)

        for epoch in range(cfg.epochs):
            lr = cfg.learning_rate_at(epoch)
            order = shuffle_rng.permutation(n)
            starts = range(0, n, cfg.batch_size)
            total = 0.0
            bar = tqdm(
                starts,
                desc=f"epoch {epoch + 1}/{cfg.epochs}",
                unit="batch",
                leave=False,
                disable=not show_progress,
            )
            for batch, start in enumerate(bar):
                indices = order[start : start + cfg.batch_size]
                x = patches.batch(indices)
                _, y, cache = forward(x, params)
                values, grad = self.loss.value_and_grad(x, y)
                batch_loss = float(np.mean(values))
                if not np.isfinite(batch_loss):
                    raise TrainingDivergedError(epoch, batch, batch_loss)
                grads = backward(cache, grad / len(indices), threads=cfg.threads)
                params, state = adam_step(params, grads, state, lr)
                total += float(np.sum(values))
                bar.set_postfix(loss=f"{batch_loss:.4f}")

            epoch_loss = total / n
            history.epoch_losses.append(epoch_loss)
            history.learning_rates.append(lr)
            logger.info(
                "Epoch %d/%d: mean %s loss %.6f (lr %.3g)",
                epoch + 1,
                cfg.epochs,
                cfg.loss,
                epoch_loss,
                lr,
            )

        params = params.with_metadata(params.epochs_seen + cfg.epochs, self.seed)
        return params, history


def train(
    index: DatasetIndex,
    cfg: TrainConfig,
    architecture: Optional[ArchitectureSpec] = None,
    cwssim: Optional[CwssimConfig] = None,
    loader: Optional[DataLoader] = None,
) -> Tuple[ModelParams, TrainingHistory]:
    """Sample patches from ``index`` and train a fresh model on them."""
    trainer = Trainer(cfg, architecture, cwssim)
    return trainer.fit(trainer.sample(index, loader))
