"""sklearn-style facade: fit on a dataset directory, predict separations.

Wraps the training loop and inference path behind the estimator protocol so
the separator composes with pipelines and parameter search (get_params /
set_params come from BaseEstimator).
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import TrainConfig
from .generative import SamplerConfig
from .inference import SeparationResult, separate
from .training import load_checkpoint, train


class GenerativeSeparator(BaseEstimator):
    """Visually-conditioned generative source separator.

    Parameters mirror TrainConfig / SamplerConfig; ``variant`` selects the
    generative core ('ddpm' or 'fm'). fit(X) expects X to be a dataset root
    directory (wav files plus meta.csv); predict takes (mixture, condition)
    pairs and returns SeparationResult objects.
    """

    def __init__(
        self,
        variant: str = "ddpm",
        steps: int | None = None,
        silence_threshold: float = 0.002,
        guidance: bool = True,
        seed: int = 0,
        lr: float = 1e-4,
        train_steps: int = 500,
        batch_size: int = 4,
        loss: str = "l1",
        geometry: str = "desk",
        base_channels: int = 16,
        ca_variant: str = "r_tf_t",
        fim_variant: str = "local_global",
        out_dir: str | None = None,
    ):
        self.variant = variant
        self.steps = steps
        self.silence_threshold = silence_threshold
        self.guidance = guidance
        self.seed = seed
        self.lr = lr
        self.train_steps = train_steps
        self.batch_size = batch_size
        self.loss = loss
        self.geometry = geometry
        self.base_channels = base_channels
        self.ca_variant = ca_variant
        self.fim_variant = fim_variant
        self.out_dir = out_dir

    def fit(self, X, y=None):
        """Train on the dataset rooted at X (a directory path)."""
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="vgsep_")
        config = TrainConfig(
            data_root=str(X),
            out_dir=str(out_dir),
            variant=self.variant,
            loss=self.loss,
            lr=self.lr,
            batch_size=self.batch_size,
            train_steps=self.train_steps,
            seed=self.seed,
            geometry=self.geometry,
            base_channels=self.base_channels,
            ca_variant=self.ca_variant,
            fim_variant=self.fim_variant,
        )
        self.checkpoint_path_ = train(config)
        self.checkpoint_ = load_checkpoint(self.checkpoint_path_)
        return self

    def _sampler(self) -> SamplerConfig:
        return SamplerConfig(
            variant=self.variant,
            steps=self.steps,
            silence_threshold=self.silence_threshold,
            seed=self.seed,
            guidance_enabled=self.guidance,
        )

    def separate(self, mixture, condition) -> SeparationResult:
        if not hasattr(self, "checkpoint_"):
            raise NotFittedError("call fit() or load() before separating")
        return separate(self.checkpoint_, mixture, condition, self._sampler())

    def predict(self, X):
        """X: (mixture, condition) pair or a list of such pairs."""
        if isinstance(X, tuple):
            return self.separate(*X)
        return [self.separate(mixture, condition) for mixture, condition in X]

    def load(self, checkpoint_path: str | Path):
        """Attach an existing checkpoint instead of fitting."""
        self.checkpoint_path_ = Path(checkpoint_path)
        self.checkpoint_ = load_checkpoint(self.checkpoint_path_)
        self.variant = self.checkpoint_.variant
        return self
