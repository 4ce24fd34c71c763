"""Training configuration and the flat key=value config-file format.

Every key in the config file mirrors a CLI flag; command-line values win on
conflict. The file format is deliberately flat INI-style text:

    variant = fm
    train_steps = 800
    lr = 1e-4
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .audio import SpectrogramConfig
from .unet import UNetConfig

GEOMETRIES = ("desk", "full")


def spectrogram_config(geometry: str) -> SpectrogramConfig:
    if geometry == "desk":
        return SpectrogramConfig.desk()
    if geometry == "full":
        return SpectrogramConfig()
    raise ValueError(f"unknown geometry {geometry!r}, expected one of {GEOMETRIES}")


@dataclass
class TrainConfig:
    """One training run: generative variant, optimizer, data, and model width."""

    data_root: str = "data"
    out_dir: str = "runs/default"
    variant: str = "ddpm"
    loss: str = "l1"
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 4
    train_steps: int = 500
    total_steps: int = 1000  # diffusion schedule length (ddpm only)
    seed: int = 0
    geometry: str = "desk"
    base_channels: int = 16
    ca_variant: str = "r_tf_t"
    fim_variant: str = "local_global"
    max_frames: int = 8
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.loss not in ("l1", "l2"):
            raise ValueError("loss must be 'l1' or 'l2'")
        if self.variant not in ("ddpm", "fm"):
            raise ValueError("variant must be 'ddpm' or 'fm'")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        if self.batch_size < 1 or self.train_steps < 1:
            raise ValueError("batch_size and train_steps must be >= 1")

    @property
    def spectrogram(self) -> SpectrogramConfig:
        return spectrogram_config(self.geometry)

    @property
    def unet(self) -> UNetConfig:
        return UNetConfig(
            base_channels=self.base_channels,
            ca_variant=self.ca_variant,
            fim_variant=self.fim_variant,
        )


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment; blank lines ignored."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (expected key = value): {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def train_config_from(values: dict[str, str], overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig from string values plus typed overrides (CLI wins)."""
    kwargs = {}
    typed = {f.name: f.type for f in fields(TrainConfig)}
    for key, raw in values.items():
        if key not in typed:
            raise ValueError(f"unknown config key {key!r}")
        kind = typed[key]
        if kind in ("int", int):
            kwargs[key] = int(raw)
        elif kind in ("float", float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kwargs)
