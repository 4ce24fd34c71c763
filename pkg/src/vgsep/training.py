"""Training loop (both variants) and the checkpoint archive format.

Each step samples a batch of clip pairs, builds mixtures in the waveform
domain, and accumulates the variant's loss for BOTH sources of every pair
(two forward/backward passes) before a single optimizer step. All randomness
flows through one torch.Generator whose state is checkpointed, so a resumed
run continues the exact loss trajectory.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .audio import SpectrogramConfig, mix_and_separate
from .config import TrainConfig
from .data import load_clip, load_dataset
from .generative import (
    NoiseSchedule,
    TrainingBatch,
    ddpm_loss,
    fm_loss,
    make_schedule,
    schedule_from_betas,
)
from .unet import SeparationUNet, UNetConfig
from .visual import CategoryFrameEncoder, TemporalTransformer

CHECKPOINT_FORMAT_VERSION = 1


class SeparationModel(nn.Module):
    """Separation U-Net plus the temporal transformer that aggregates conditions."""

    def __init__(self, unet: SeparationUNet, aggregator: TemporalTransformer):
        super().__init__()
        self.unet = unet
        self.aggregator = aggregator

    def condition(self, frame_embeddings: torch.Tensor) -> torch.Tensor:
        return self.aggregator(frame_embeddings)

    def forward(self, x_t, x_mix, v, t):
        return self.unet(x_t, x_mix, v, t)


def build_model(
    variant: str,
    unet_config: UNetConfig,
    total_steps: int = 1000,
    max_frames: int = 8,
    seed: int = 0,
) -> SeparationModel:
    torch.manual_seed(seed)
    unet = SeparationUNet(unet_config, variant=variant, total_steps=total_steps)
    aggregator = TemporalTransformer(unet_config.condition_dim, max_frames=max_frames)
    return SeparationModel(unet, aggregator)


@dataclass
class Checkpoint:
    """A loaded archive: enough to run inference or resume training."""

    model: SeparationModel
    variant: str
    schedule: NoiseSchedule | None
    spectrogram: SpectrogramConfig
    unet_config: UNetConfig
    encoder: CategoryFrameEncoder
    step: int
    optimizer_state: dict | None
    generator_state: torch.Tensor | None
    train_config: dict


def save_checkpoint(
    path: str | Path,
    model: SeparationModel,
    config: TrainConfig,
    encoder: CategoryFrameEncoder,
    step: int,
    optimizer: torch.optim.Optimizer | None = None,
    generator: torch.Generator | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if model.unet.variant != config.variant:
        raise ValueError(
            f"model variant {model.unet.variant!r} does not match config {config.variant!r}"
        )
    schedule = make_schedule(config.total_steps) if config.variant == "ddpm" else None
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "variant": config.variant,
        "schedule_betas": schedule.beta if schedule is not None else None,
        "unet_config": asdict(config.unet),
        "spectrogram_config": asdict(config.spectrogram),
        "encoder": {
            "kind": "category",
            "num_categories": encoder.num_categories,
            "output_dim": encoder.output_dim,
            "seed": encoder.seed,
        },
        "max_frames": config.max_frames,
        "total_steps": config.total_steps,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "generator_state": generator.get_state() if generator is not None else None,
        "step": step,
        "train_config": asdict(config),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format version {version!r} not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    unet_config = UNetConfig(**{
        **payload["unet_config"],
        "channel_multipliers": tuple(payload["unet_config"]["channel_multipliers"]),
    })
    model = build_model(
        payload["variant"], unet_config, payload["total_steps"], payload["max_frames"]
    )
    model.load_state_dict(payload["model_state"])
    model.eval()
    enc = payload["encoder"]
    encoder = CategoryFrameEncoder(enc["num_categories"], enc["output_dim"], enc["seed"])
    schedule = (
        schedule_from_betas(np.asarray(payload["schedule_betas"]))
        if payload["schedule_betas"] is not None
        else None
    )
    return Checkpoint(
        model=model,
        variant=payload["variant"],
        schedule=schedule,
        spectrogram=SpectrogramConfig(**payload["spectrogram_config"]),
        unet_config=unet_config,
        encoder=encoder,
        step=payload["step"],
        optimizer_state=payload["optimizer_state"],
        generator_state=payload["generator_state"],
        train_config=payload["train_config"],
    )


class _PairGrids:
    """Lazy cache of mixture triples as float32 tensors, keyed by clip index pair."""

    def __init__(self, waves, spectro: SpectrogramConfig):
        self.waves = waves
        self.spectro = spectro
        self.cache: dict[tuple[int, int], tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = {}

    def get(self, i: int, j: int):
        key = (i, j) if i < j else (j, i)
        if key not in self.cache:
            pair = mix_and_separate(self.waves[key[0]], self.waves[key[1]], self.spectro)
            self.cache[key] = tuple(
                torch.from_numpy(g.grid.astype(np.float32))
                for g in (pair.x_mix, pair.x_1, pair.x_2)
            )
        x_mix, x_a, x_b = self.cache[key]
        return (x_mix, x_a, x_b) if (i, j) == key else (x_mix, x_b, x_a)


def train(config: TrainConfig, resume_from: str | Path | None = None) -> Path:
    """Run the loop, write loss logs and checkpoints, return the final checkpoint path.

    The per-step CSV (step, loss, lr, wall_time) lands next to the checkpoints
    in config.out_dir.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spectro = config.spectrogram

    records = load_dataset(config.data_root, split="train")
    waves = [load_clip(r, spectro.segment_length, spectro.sample_rate) for r in records]
    categories = [r.category for r in records]
    n_categories = max(categories) + 1
    pair_indices = [
        (i, j)
        for i in range(len(records))
        for j in range(i + 1, len(records))
        if categories[i] != categories[j] or n_categories == 1
    ]
    if not pair_indices:
        raise ValueError("dataset yields no mixable clip pairs")
    grids = _PairGrids(waves, spectro)

    model = build_model(
        config.variant, config.unet, config.total_steps, config.max_frames, config.seed
    )
    encoder = CategoryFrameEncoder(n_categories, config.unet.condition_dim, seed=config.seed)
    cat_embeddings = torch.from_numpy(encoder.encode(list(range(n_categories)))).unsqueeze(1)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=(config.adam_beta1, config.adam_beta2)
    )
    generator = torch.Generator().manual_seed(config.seed)
    schedule = make_schedule(config.total_steps) if config.variant == "ddpm" else None
    start_step = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.variant != config.variant:
            raise ValueError(f"cannot resume {ckpt.variant} checkpoint as {config.variant}")
        model.load_state_dict(ckpt.model.state_dict())
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        if ckpt.generator_state is not None:
            generator.set_state(ckpt.generator_state)
        start_step = ckpt.step

    model.train()
    log_path = out_dir / "loss_log.csv"
    log_mode = "a" if resume_from is not None and log_path.exists() else "w"
    t0 = time.time()
    with open(log_path, log_mode, newline="") as log_file:
        log = csv.writer(log_file)
        if log_mode == "w":
            log.writerow(["step", "loss", "lr", "wall_time"])
        for step in range(start_step, start_step + config.train_steps):
            idx = torch.randint(0, len(pair_indices), (config.batch_size,), generator=generator)
            chosen = [pair_indices[i] for i in idx.tolist()]
            triples = [grids.get(i, j) for i, j in chosen]
            x_mix = torch.stack([t[0] for t in triples])
            sources = (
                (torch.stack([t[1] for t in triples]), [categories[i] for i, _ in chosen]),
                (torch.stack([t[2] for t in triples]), [categories[j] for _, j in chosen]),
            )

            optimizer.zero_grad()
            total = 0.0
            for x_target, cats in sources:
                v = model.condition(cat_embeddings[cats])
                batch = TrainingBatch(x_target=x_target, x_mix=x_mix, v=v)
                if config.variant == "ddpm":
                    loss = ddpm_loss(model, batch, schedule, generator, norm=config.loss)
                else:
                    loss = fm_loss(model, batch, generator, norm=config.loss)
                loss.backward()
                total += float(loss.detach())
            optimizer.step()
            log.writerow([step + 1, f"{total:.6f}", config.lr, f"{time.time() - t0:.3f}"])

            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(
                    out_dir / f"checkpoint_{step + 1:06d}.pt",
                    model, config, encoder, step + 1, optimizer, generator,
                )

    final = save_checkpoint(
        out_dir / "checkpoint_final.pt",
        model, config, encoder, start_step + config.train_steps, optimizer, generator,
    )
    return final
