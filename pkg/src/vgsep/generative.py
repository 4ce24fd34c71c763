"""Generative cores over scaled spectrogram space.

Two interchangeable paradigms drive the same conditional network:

* iterative denoising: noise schedule, forward corruption
  x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, noise-prediction loss, and a
  deterministic accelerated sampler over an evenly spaced timestep subset;
* continuous flow: linear path x_t = t x1 + (1 - t) x0 with target velocity
  x1 - x0, velocity-regression loss, and forward Euler integration of
  dx/dt = v(x, t, c) from t=0 (noise) to t=1 (data).

Both samplers share silence-mask guidance: grid bins where the scaled mixture
falls below a threshold are overwritten each step with mixture content noised
to the sampler's current level, which pins provably-silent regions to the
mixture instead of letting the model hallucinate there.

The ``model`` argument everywhere is a callable
``model(x_t, x_mix, v, t) -> prediction`` operating on (B, H, W) grids.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

VARIANT_ALIASES = {
    "ddpm": "ddpm",
    "ddpm_ddim": "ddpm",
    "fm": "fm",
    "fm_euler": "fm",
}
DEFAULT_STEPS = {"ddpm": 15, "fm": 2}
DEFAULT_SILENCE_THRESHOLD = 0.002

ModelFn = Callable[[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


def canonical_variant(variant: str) -> str:
    try:
        return VARIANT_ALIASES[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}, expected one of {sorted(VARIANT_ALIASES)}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables for the denoising variant (1-indexed timesteps)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    @property
    def total_steps(self) -> int:
        return len(self.beta)

    def __post_init__(self):
        beta = self.beta
        if len(beta) < 1:
            raise ValueError("schedule needs at least one step")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("beta values must lie strictly in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if np.any(self.beta_tilde < 0) or np.any(self.beta_tilde > beta + 1e-12):
            raise ValueError("posterior variances must lie in [0, beta_t]")

    def alpha_bar_at(self, t: int) -> float:
        """abar_t with the convention abar_0 = 1 (zero noise)."""
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"timestep {t} outside [0, {self.total_steps}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def schedule_from_betas(betas) -> NoiseSchedule:
    """Derive alpha / alpha_bar / posterior-variance tables from explicit betas."""
    beta = np.asarray(betas, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_tilde = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar, beta_tilde=beta_tilde)


def make_schedule(total_steps: int = 1000, kind: str = "linear") -> NoiseSchedule:
    """Build the default linear schedule, beta from 1e-4 to 0.02 over total_steps."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    return schedule_from_betas(np.linspace(1e-4, 0.02, total_steps))


@dataclass
class SamplerConfig:
    """Inference-time knobs; steps default to 15 (ddpm) / 2 (fm) when unset."""

    variant: str = "ddpm"
    steps: int | None = None
    silence_threshold: float = DEFAULT_SILENCE_THRESHOLD
    seed: int = 0
    guidance_enabled: bool = True

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.steps is None:
            self.steps = DEFAULT_STEPS[self.variant]
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.silence_threshold < 0:
            raise ValueError("silence threshold must be >= 0")


@dataclass
class TrainingBatch:
    """Aligned (clean target, mixture, condition vector) batch, grids in [0, 1]."""

    x_target: torch.Tensor  # (B, H, W)
    x_mix: torch.Tensor  # (B, H, W)
    v: torch.Tensor  # (B, C)

    def __post_init__(self):
        if self.x_target.shape != self.x_mix.shape:
            raise ValueError("target/mixture shape mismatch")
        if self.x_target.shape[0] != self.v.shape[0]:
            raise ValueError("batch size mismatch between grids and conditions")
        for name, grid in (("x_target", self.x_target), ("x_mix", self.x_mix)):
            if grid.min() < 0 or grid.max() > 1:
                raise ValueError(f"{name} must lie in [0, 1]")


def _gather(table: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    vals = torch.as_tensor(table, dtype=like.dtype, device=like.device)[t - 1]
    return vals.reshape(-1, *([1] * (like.dim() - 1)))


def ddpm_forward_sample(
    x0: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Corrupt x0 to noise level t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    t = torch.as_tensor(t, dtype=torch.long)
    if t.dim() == 0:
        t = t.expand(x0.shape[0]) if x0.dim() > 2 else t.reshape(1)
    if t.min() < 1 or t.max() > schedule.total_steps:
        raise ValueError(f"timestep outside [1, {schedule.total_steps}]")
    abar = _gather(schedule.alpha_bar, t, x0)
    return abar.sqrt() * x0 + (1.0 - abar).sqrt() * eps


def fm_path_sample(x0: torch.Tensor, x1: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    """Linear interpolation path: t x1 + (1 - t) x0 for t in [0, 1]."""
    t = torch.as_tensor(t, dtype=x0.dtype)
    if t.min() < 0 or t.max() > 1:
        raise ValueError("flow time must lie in [0, 1]")
    if t.dim() > 0:
        t = t.reshape(-1, *([1] * (x0.dim() - 1)))
    return t * x1 + (1.0 - t) * x0


def _reduce(err: torch.Tensor, norm: str) -> torch.Tensor:
    if norm == "l1":
        return err.abs().mean()
    if norm == "l2":
        return err.square().mean()
    raise ValueError(f"unknown norm {norm!r}, expected 'l1' or 'l2'")


def ddpm_loss(
    model: ModelFn,
    batch: TrainingBatch,
    schedule: NoiseSchedule,
    generator: torch.Generator | None = None,
    norm: str = "l1",
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """Noise-prediction loss: per item draw t ~ U{1..T}, eps ~ N(0, I), score |eps - model(...)|.

    norm='l1' is the default (robust to the near-zero-dominated magnitude
    distribution); norm='l2' is kept for the loss ablation. t and eps may be
    injected in place of the random draws (oracle tests).
    """
    b = batch.x_target.shape[0]
    if t is None:
        t = torch.randint(1, schedule.total_steps + 1, (b,), generator=generator)
    if eps is None:
        eps = torch.randn(batch.x_target.shape, generator=generator, dtype=batch.x_target.dtype)
    x_t = ddpm_forward_sample(batch.x_target, t, eps, schedule)
    pred = model(x_t, batch.x_mix, batch.v, t)
    return _reduce(eps - pred, norm)


def fm_loss(
    model: ModelFn,
    batch: TrainingBatch,
    generator: torch.Generator | None = None,
    norm: str = "l1",
    t: torch.Tensor | None = None,
    x0: torch.Tensor | None = None,
) -> torch.Tensor:
    """Velocity-regression loss along the linear path: target field is x1 - x0.

    t and x0 may be injected in place of the random draws (oracle tests).
    """
    b = batch.x_target.shape[0]
    if t is None:
        t = torch.rand((b,), generator=generator, dtype=batch.x_target.dtype)
    if x0 is None:
        x0 = torch.randn(batch.x_target.shape, generator=generator, dtype=batch.x_target.dtype)
    x_t = fm_path_sample(x0, batch.x_target, t)
    target = batch.x_target - x0
    pred = model(x_t, batch.x_mix, batch.v, t)
    return _reduce(pred - target, norm)


def silence_mask(x_mix: torch.Tensor, delta: float) -> torch.Tensor:
    """Indicator of mixture bins quieter than delta (1 = silent) in the scaled domain."""
    if delta < 0:
        raise ValueError("silence threshold must be >= 0")
    if x_mix.min() < 0 or x_mix.max() > 1:
        raise ValueError("mixture grid must lie in [0, 1]")
    return (x_mix < delta).to(x_mix.dtype)


def noised_mixture(
    x_mix: torch.Tensor,
    t: float | int,
    variant: str,
    schedule: NoiseSchedule | None,
    generator: torch.Generator | None,
) -> torch.Tensor:
    """Mixture content perturbed to the sampler's current noise level.

    ddpm: forward corruption at integer t (t=0 means the clean mixture);
    fm: linear path position at float t (t=1 means the clean mixture).
    Fresh noise is drawn on every call.
    """
    variant = canonical_variant(variant)
    if variant == "ddpm":
        t = int(t)
        if t == 0:
            return x_mix
        eps = torch.randn(x_mix.shape, generator=generator, dtype=x_mix.dtype)
        return ddpm_forward_sample(x_mix, t, eps, schedule)
    if t == 1.0:
        return x_mix
    x0 = torch.randn(x_mix.shape, generator=generator, dtype=x_mix.dtype)
    return fm_path_sample(x0, x_mix, float(t))


def apply_silence_guidance(
    x_pred: torch.Tensor,
    x_mix: torch.Tensor,
    mask: torch.Tensor,
    t: float | int,
    variant: str,
    schedule: NoiseSchedule | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Blend: silent bins take noised mixture content, the rest keep the prediction."""
    mix_t = noised_mixture(x_mix, t, variant, schedule, generator)
    return mask * mix_t + (1.0 - mask) * x_pred


def _ddim_taus(total_steps: int, n: int) -> np.ndarray:
    if n > total_steps:
        raise ValueError(f"steps {n} exceeds schedule length {total_steps}")
    taus = np.unique(np.round(np.linspace(0, total_steps, n + 1)).astype(int))
    assert taus[0] == 0 and taus[-1] == total_steps and len(taus) == n + 1
    return taus


@torch.no_grad()
def ddim_sample(
    model: ModelFn,
    x_mix: torch.Tensor,
    v: torch.Tensor,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    generator: torch.Generator | None = None,
    x_init: torch.Tensor | None = None,
    clamp: bool = True,
) -> torch.Tensor:
    """Deterministic accelerated sampling over an evenly spaced timestep subset.

    Runs config.steps updates from pure noise down to noise level zero. Each
    update re-estimates x0 from the current noise prediction and moves to the
    next (lower) level without injected randomness, so a fixed seed gives a
    bitwise-identical output. With clamp on (the default), the intermediate x0
    estimates are clipped to the [0, 1] data domain and the noise estimate
    re-derived from the clipped value, the standard stabilization for bounded
    data. Guidance, when enabled, is applied after every update at the
    destination noise level; on the last step that level is zero and masked
    bins become exactly the mixture.
    """
    if config.variant != "ddpm":
        raise ValueError("ddim_sample requires a ddpm-variant SamplerConfig")
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    x = (
        x_init.clone()
        if x_init is not None
        else torch.randn(x_mix.shape, generator=generator, dtype=x_mix.dtype)
    )
    mask = silence_mask(x_mix, config.silence_threshold) if config.guidance_enabled else None
    taus = _ddim_taus(schedule.total_steps, config.steps)
    batch = x_mix.shape[0]
    for i in range(len(taus) - 1, 0, -1):
        t_cur, t_prev = int(taus[i]), int(taus[i - 1])
        ab_cur = schedule.alpha_bar_at(t_cur)
        ab_prev = schedule.alpha_bar_at(t_prev)
        t_batch = torch.full((batch,), t_cur, dtype=torch.long)
        eps_hat = model(x, x_mix, v, t_batch)
        x0_hat = (x - np.sqrt(1.0 - ab_cur) * eps_hat) / np.sqrt(ab_cur)
        if clamp:
            x0_hat = x0_hat.clamp(0.0, 1.0)
            eps_hat = (x - np.sqrt(ab_cur) * x0_hat) / np.sqrt(1.0 - ab_cur)
        x = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat
        if mask is not None:
            x = apply_silence_guidance(x, x_mix, mask, t_prev, "ddpm", schedule, generator)
    return x.clamp(0.0, 1.0) if clamp else x


@torch.no_grad()
def euler_solve(
    model: ModelFn,
    x_mix: torch.Tensor,
    v: torch.Tensor,
    config: SamplerConfig,
    generator: torch.Generator | None = None,
    x_init: torch.Tensor | None = None,
    clamp: bool = True,
) -> torch.Tensor:
    """Forward Euler integration of the learned velocity field from t=0 to t=1.

    The field is evaluated at the start of each interval (t = i/N) and the
    state advanced by v * (1/N). Guidance, when enabled, runs after each step
    at the arrival time (i+1)/N; at t=1 masked bins become exactly the mixture.
    """
    if config.variant != "fm":
        raise ValueError("euler_solve requires an fm-variant SamplerConfig")
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    x = (
        x_init.clone()
        if x_init is not None
        else torch.randn(x_mix.shape, generator=generator, dtype=x_mix.dtype)
    )
    mask = silence_mask(x_mix, config.silence_threshold) if config.guidance_enabled else None
    n = config.steps
    dt = 1.0 / n
    batch = x_mix.shape[0]
    for i in range(n):
        # i / n rather than i * dt so the final guidance time is exactly 1.0
        t_batch = torch.full((batch,), i / n, dtype=x.dtype)
        x = x + model(x, x_mix, v, t_batch) * dt
        if mask is not None:
            x = apply_silence_guidance(x, x_mix, mask, (i + 1) / n, "fm", None, generator)
    return x.clamp(0.0, 1.0) if clamp else x


@torch.no_grad()
def ddpm_ancestral_sample(
    model: ModelFn,
    x_mix: torch.Tensor,
    v: torch.Tensor,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    generator: torch.Generator | None = None,
    x_init: torch.Tensor | None = None,
    clamp: bool = True,
) -> torch.Tensor:
    """Stochastic full-length reverse chain, kept as a reference for tests.

    x_prev = (x - (1 - a_t) / sqrt(1 - abar_t) eps_hat) / sqrt(a_t) + sqrt(btilde_t) z
    for t = T..1, with z = 0 on the final step.
    """
    if generator is None:
        generator = torch.Generator().manual_seed(config.seed)
    x = (
        x_init.clone()
        if x_init is not None
        else torch.randn(x_mix.shape, generator=generator, dtype=x_mix.dtype)
    )
    mask = silence_mask(x_mix, config.silence_threshold) if config.guidance_enabled else None
    batch = x_mix.shape[0]
    for t in range(schedule.total_steps, 0, -1):
        a_t = float(schedule.alpha[t - 1])
        ab_t = schedule.alpha_bar_at(t)
        t_batch = torch.full((batch,), t, dtype=torch.long)
        eps_hat = model(x, x_mix, v, t_batch)
        x = (x - (1.0 - a_t) / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(a_t)
        if t > 1:
            z = torch.randn(x.shape, generator=generator, dtype=x.dtype)
            x = x + np.sqrt(float(schedule.beta_tilde[t - 1])) * z
        if mask is not None:
            x = apply_silence_guidance(x, x_mix, mask, t - 1, "ddpm", schedule, generator)
    return x.clamp(0.0, 1.0) if clamp else x
