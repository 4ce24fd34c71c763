"""Waveform <-> scaled spectrogram pipeline.

All generative modeling happens on square magnitude grids in [0, 1]:
    native magnitude --(log(1+x) * sigma, clip)--> scaled --(bilinear)--> grid x grid
Inversion runs the same stages backwards, and waveforms are rebuilt with the
mixture phase at native STFT resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .validation import (
    check_finite,
    check_nonnegative,
    check_same_shape,
    check_unit_range,
    check_waveform,
)

DEFAULT_SAMPLE_RATE = 11025


@dataclass(frozen=True)
class SpectrogramConfig:
    """STFT geometry plus the magnitude compression factor.

    The default is the full-scale geometry (Hann 1022 / hop 256, 256x256
    grids); ``desk()`` returns a CPU-sized variant with the same structure.
    """

    sample_rate: int = DEFAULT_SAMPLE_RATE
    window: int = 1022
    hop: int = 256
    grid_size: int = 256
    sigma: float = 0.15
    segment_length: int = 65536

    def __post_init__(self):
        if self.window < 2 or self.hop < 1 or self.hop > self.window:
            raise ValueError(f"bad STFT geometry: window={self.window}, hop={self.hop}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def freq_bins(self) -> int:
        return self.window // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window:
            raise ValueError("input too short: need at least one full window")
        return (num_samples - self.window) // self.hop + 1

    @staticmethod
    def desk() -> "SpectrogramConfig":
        """Small geometry trainable on a laptop CPU: 64x64 grids, ~1.5 s clips."""
        return SpectrogramConfig(window=254, hop=64, grid_size=64, segment_length=16384)


@dataclass
class Waveform:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = check_waveform(self.samples, self.sample_rate)
        peak = np.abs(self.samples).max() if self.samples.size else 0.0
        if peak > 1.0:
            self.samples = self.samples / peak

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class ComplexSpectrogram:
    """Magnitude/phase pair at native STFT resolution (freq_bins x frames)."""

    magnitude: np.ndarray
    phase: np.ndarray
    window: int
    hop: int

    def __post_init__(self):
        check_same_shape(self.magnitude, self.phase, "magnitude/phase")
        check_nonnegative(self.magnitude, "magnitude")


@dataclass
class ScaledSpectrogram:
    """Square grid in [0, 1], the domain of both generative cores."""

    grid: np.ndarray
    sigma: float = 0.15
    native_frames: int | None = None  # frame count before resampling, for inversion

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError(f"grid must be 2-D, got shape {self.grid.shape}")
        check_unit_range(self.grid, "scaled spectrogram", atol=1e-9)


@dataclass
class MixturePair:
    """Supervised training triple built from two clips (mixture made in the waveform domain)."""

    x_mix: ScaledSpectrogram
    x_1: ScaledSpectrogram
    x_2: ScaledSpectrogram
    phase_mix: np.ndarray
    v_1: object = None
    v_2: object = None


def hann_window(n: int) -> np.ndarray:
    # periodic Hann, the standard analysis window for STFT processing
    return get_window("hann", n, fftbins=True).astype(np.float64)


def stft(wave: Waveform | np.ndarray, config: SpectrogramConfig) -> ComplexSpectrogram:
    """Hann-windowed STFT without padding.

    Frames start at multiples of ``hop``; the number of frames is
    (len - window) // hop + 1. Raises on inputs shorter than one window.
    """
    samples = wave.samples if isinstance(wave, Waveform) else check_waveform(wave, 1, "samples")
    n_frames = config.num_frames(len(samples))
    win = hann_window(config.window)
    idx = np.arange(config.window)[None, :] + config.hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * win[None, :]
    spec = np.fft.rfft(frames, axis=1).T  # (freq_bins, n_frames)
    return ComplexSpectrogram(
        magnitude=np.abs(spec), phase=np.angle(spec), window=config.window, hop=config.hop
    )


def istft(magnitude: np.ndarray, phase: np.ndarray, config: SpectrogramConfig) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft` using the same Hann/hop.

    Output length is window + (frames - 1) * hop. Interior samples (at least
    half a window away from either end) reconstruct the input to float
    precision; edges are attenuated by reduced window overlap.
    """
    magnitude = check_nonnegative(np.asarray(magnitude, dtype=np.float64), "magnitude")
    phase = check_finite(np.asarray(phase, dtype=np.float64), "phase")
    check_same_shape(magnitude, phase, "magnitude/phase")
    if magnitude.shape[0] != config.freq_bins:
        raise ValueError(
            f"magnitude has {magnitude.shape[0]} frequency rows, expected {config.freq_bins}"
        )
    n_frames = magnitude.shape[1]
    win = hann_window(config.window)
    spec = magnitude * np.exp(1j * phase)
    frames = np.fft.irfft(spec.T, n=config.window, axis=1)  # (n_frames, window)
    frames *= win[None, :]

    length = config.window + (n_frames - 1) * config.hop
    out = np.zeros(length)
    norm = np.zeros(length)
    win_sq = win * win
    for k in range(n_frames):
        sl = slice(k * config.hop, k * config.hop + config.window)
        out[sl] += frames[k]
        norm[sl] += win_sq
    out /= np.maximum(norm, 1e-12)
    return Waveform(np.clip(out, -1.0, 1.0) if np.abs(out).max() > 1.0 else out, config.sample_rate)


def bilinear_resize(grid: np.ndarray, out_rows: int, out_cols: int) -> np.ndarray:
    """Separable bilinear resampling with endpoints mapped to endpoints.

    Exact on constant inputs and the identity when sizes match.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError("bilinear_resize expects a 2-D grid")

    def resample_axis(x: np.ndarray, n_out: int, axis: int) -> np.ndarray:
        n_in = x.shape[axis]
        if n_in == n_out:
            return x
        if n_out == 1:
            pos = np.array([0.5 * (n_in - 1)])
        else:
            pos = np.linspace(0.0, n_in - 1, n_out)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        w = pos - lo
        x_lo = np.take(x, lo, axis=axis)
        x_hi = np.take(x, hi, axis=axis)
        shape = [1, 1]
        shape[axis] = n_out
        w = w.reshape(shape)
        return x_lo * (1.0 - w) + x_hi * w

    return resample_axis(resample_axis(grid, out_rows, 0), out_cols, 1)


def scale_magnitude(magnitude: np.ndarray, config: SpectrogramConfig) -> ScaledSpectrogram:
    """Compress a native magnitude grid into the [0, 1] model domain.

    Applies clip(log(1 + x) * sigma, 0, 1) entrywise at native resolution,
    then bilinearly resamples to grid_size x grid_size. Compression precedes
    resampling so the resampled grid is still a convex combination of in-range
    values.
    """
    magnitude = check_nonnegative(np.asarray(magnitude, dtype=np.float64), "magnitude")
    scaled = np.clip(np.log1p(magnitude) * config.sigma, 0.0, 1.0)
    grid = bilinear_resize(scaled, config.grid_size, config.grid_size)
    return ScaledSpectrogram(grid=grid, sigma=config.sigma, native_frames=magnitude.shape[1])


def unscale_magnitude(
    scaled: ScaledSpectrogram, config: SpectrogramConfig, num_frames: int | None = None
) -> np.ndarray:
    """Invert :func:`scale_magnitude` back to a native magnitude grid.

    Resamples to freq_bins x num_frames first, then applies exp(x / sigma) - 1.
    Any negative values after inversion are clamped to zero.
    """
    frames = num_frames if num_frames is not None else scaled.native_frames
    if frames is None:
        raise ValueError("num_frames required when the spectrogram records no native frame count")
    native = bilinear_resize(scaled.grid, config.freq_bins, frames)
    magnitude = np.expm1(native / scaled.sigma)
    return np.maximum(magnitude, 0.0)


def mix_and_separate(w1: Waveform, w2: Waveform, config: SpectrogramConfig) -> MixturePair:
    """Build a supervised triple by summing waveforms and transforming all three.

    The mixture spectrogram is computed from w1 + w2 in the time domain, not
    from magnitude addition, so interference between the sources is real.
    """
    if len(w1) != len(w2):
        raise ValueError(f"length mismatch: {len(w1)} vs {len(w2)}")
    if w1.sample_rate != w2.sample_rate:
        raise ValueError("sample rate mismatch")
    mix = np.asarray(w1.samples) + np.asarray(w2.samples)
    spec_mix = stft(mix, config)
    spec_1 = stft(w1, config)
    spec_2 = stft(w2, config)
    return MixturePair(
        x_mix=scale_magnitude(spec_mix.magnitude, config),
        x_1=scale_magnitude(spec_1.magnitude, config),
        x_2=scale_magnitude(spec_2.magnitude, config),
        phase_mix=spec_mix.phase,
    )


def fit_segment(samples: np.ndarray, segment_length: int, seed: int = 0) -> np.ndarray:
    """Standardize to a fixed length: zero-pad short clips, crop long ones at a seeded offset."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == segment_length:
        return samples
    if len(samples) < segment_length:
        out = np.zeros(segment_length)
        out[: len(samples)] = samples
        return out
    offset = np.random.default_rng(seed).integers(0, len(samples) - segment_length + 1)
    return samples[offset : offset + segment_length]


def load_wav(path: str | Path, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a WAV file as mono float in [-1, 1], polyphase-resampled to target_rate."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        x = data / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if rate != target_rate:
        frac = Fraction(target_rate, rate).limit_denominator(1000)
        x = resample_poly(x, frac.numerator, frac.denominator)
    return Waveform(x, target_rate)


def save_wav(path: str | Path, wave: Waveform) -> None:
    """Write 16-bit PCM mono."""
    pcm = np.clip(wave.samples, -1.0, 1.0)
    wavfile.write(path, wave.sample_rate, (pcm * 32767.0).astype(np.int16))


def dump_scaled_spectrogram(path: str | Path, scaled: ScaledSpectrogram, source: str = "") -> None:
    """Debug dump: raw row-major float32 grid plus a '.hdr' sidecar with sigma/provenance."""
    path = Path(path)
    path.write_bytes(scaled.grid.astype("<f4").tobytes(order="C"))
    rows, cols = scaled.grid.shape
    header = (
        f"rows={rows}\ncols={cols}\nsigma={scaled.sigma}\n"
        f"native_frames={scaled.native_frames if scaled.native_frames is not None else ''}\n"
        f"source={source}\n"
    )
    path.with_suffix(path.suffix + ".hdr").write_text(header)


def load_scaled_spectrogram(path: str | Path) -> ScaledSpectrogram:
    path = Path(path)
    fields = {}
    for line in path.with_suffix(path.suffix + ".hdr").read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    rows, cols = int(fields["rows"]), int(fields["cols"])
    grid = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(rows, cols).astype(np.float64)
    native = int(fields["native_frames"]) if fields.get("native_frames") else None
    return ScaledSpectrogram(grid=grid, sigma=float(fields["sigma"]), native_frames=native)
