"""Visually-conditioned generative source separation.

Two interchangeable generative cores (iterative denoising and continuous
flow) share one conditional Separation U-Net over scaled magnitude
spectrograms, with silence-mask-guided sampling and projection-based
separation metrics.
"""

from .audio import (
    ComplexSpectrogram,
    MixturePair,
    ScaledSpectrogram,
    SpectrogramConfig,
    Waveform,
    istft,
    load_wav,
    mix_and_separate,
    save_wav,
    scale_magnitude,
    stft,
    unscale_magnitude,
)
from .config import TrainConfig
from .data import SyntheticDatasetSpec, generate_synthetic_dataset, load_dataset
from .estimator import GenerativeSeparator
from .evaluation import MetricReport, bss_eval
from .generative import (
    NoiseSchedule,
    SamplerConfig,
    TrainingBatch,
    apply_silence_guidance,
    ddim_sample,
    ddpm_forward_sample,
    ddpm_loss,
    euler_solve,
    fm_loss,
    fm_path_sample,
    make_schedule,
    silence_mask,
)
from .inference import SeparationResult, evaluate, separate, sweep_steps
from .training import Checkpoint, SeparationModel, build_model, load_checkpoint, save_checkpoint, train
from .unet import SeparationUNet, UNetConfig
from .visual import (
    CategoryFrameEncoder,
    TemporalTransformer,
    ThumbnailFrameEncoder,
    VisualClip,
    aggregate,
    encode_frames,
)

__version__ = "0.1.0"
