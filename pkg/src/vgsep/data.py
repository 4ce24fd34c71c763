"""Synthetic dataset: category-coded test signals standing in for real clips.

Each category owns a signal family (sine, dual-tone chord, linear chirp,
amplitude-modulated tone) confined to its own frequency band; bands are
pairwise disjoint so conditioning on the category id is informative. Every
clip carries its category id as the visual condition. Layout on disk:

    <root>/<category>/<clip>.wav
    <root>/meta.csv          # clip, category, split
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, fit_segment, load_wav, save_wav

FAMILIES = ("sine", "chord", "chirp", "am_tone")
DEFAULT_BANDS = ((250.0, 450.0), (700.0, 1100.0), (1500.0, 2500.0), (3000.0, 4200.0))


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_categories: int = 4
    clips_per_category: int = 4
    duration: int = 16384  # samples
    sample_rate: int = 11025
    # keeps the scaled floor well below the default 0.002 silence threshold
    noise_floor: float = 1e-4
    seed: int = 0
    bands: tuple[tuple[float, float], ...] = ()
    test_fraction: float = 0.25

    def __post_init__(self):
        if not 1 <= self.n_categories <= len(FAMILIES):
            raise ValueError(f"n_categories must be in [1, {len(FAMILIES)}]")
        bands = self.bands or DEFAULT_BANDS[: self.n_categories]
        if len(bands) < self.n_categories:
            raise ValueError("need one frequency band per category")
        ordered = sorted(bands)
        for (lo1, hi1), (lo2, hi2) in zip(ordered, ordered[1:]):
            if hi1 >= lo2:
                raise ValueError(f"overlapping category bands: ({lo1}, {hi1}) and ({lo2}, {hi2})")
        for lo, hi in bands:
            if not 0 < lo < hi < self.sample_rate / 2:
                raise ValueError(f"band ({lo}, {hi}) outside (0, nyquist)")
        object.__setattr__(self, "bands", tuple(bands))


@dataclass
class ClipRecord:
    name: str
    path: Path
    category: int
    split: str


def synthesize_clip(spec: SyntheticDatasetSpec, category: int, index: int) -> np.ndarray:
    """Deterministic clip for (spec.seed, category, index)."""
    rng = np.random.default_rng([spec.seed, category, index])
    n = spec.duration
    t = np.arange(n) / spec.sample_rate
    lo, hi = spec.bands[category]
    family = FAMILIES[category % len(FAMILIES)]
    # two-clip sums stay inside [-1, 1], so mixtures never need renormalizing
    amp = rng.uniform(0.35, 0.5)
    phase = rng.uniform(0, 2 * np.pi)

    if family == "sine":
        f = rng.uniform(lo, hi)
        signal = np.sin(2 * np.pi * f * t + phase)
    elif family == "chord":
        ratio = 1.45
        f = rng.uniform(lo, hi / ratio)
        signal = 0.5 * (
            np.sin(2 * np.pi * f * t + phase)
            + np.sin(2 * np.pi * ratio * f * t + rng.uniform(0, 2 * np.pi))
        )
    elif family == "chirp":
        f0 = rng.uniform(lo, lo + 0.3 * (hi - lo))
        f1 = rng.uniform(hi - 0.3 * (hi - lo), hi)
        # linear sweep f0 -> f1 over the clip
        signal = np.sin(2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t[-1] * t * t) + phase)
    else:  # am_tone
        f = rng.uniform(lo + 100.0, hi - 100.0)
        f_mod = rng.uniform(3.0, 9.0)
        envelope = 0.5 * (1.0 + np.sin(2 * np.pi * f_mod * t))
        signal = envelope * np.sin(2 * np.pi * f * t + phase)

    clip = amp * signal + spec.noise_floor * rng.standard_normal(n)
    return np.clip(clip, -1.0, 1.0)


def generate_synthetic_dataset(spec: SyntheticDatasetSpec, root: str | Path) -> Path:
    """Write WAVs and meta.csv under root; byte-identical for a fixed spec."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_test = int(np.ceil(spec.test_fraction * spec.clips_per_category)) if spec.test_fraction else 0
    rows = []
    for cat in range(spec.n_categories):
        cat_dir = root / str(cat)
        cat_dir.mkdir(exist_ok=True)
        for idx in range(spec.clips_per_category):
            name = f"cat{cat}_clip{idx}"
            wav_path = cat_dir / f"{name}.wav"
            save_wav(wav_path, Waveform(synthesize_clip(spec, cat, idx), spec.sample_rate))
            split = "test" if idx >= spec.clips_per_category - n_test else "train"
            rows.append((name, cat, split))
    meta = root / "meta.csv"
    with open(meta, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip", "category", "split"])
        writer.writerows(rows)
    return meta


def load_dataset(root: str | Path, split: str = "all") -> list[ClipRecord]:
    """Read meta.csv; split is 'train', 'test', or 'all'."""
    root = Path(root)
    meta = root / "meta.csv"
    if not meta.exists():
        raise FileNotFoundError(f"no meta.csv under {root}")
    records = []
    with open(meta, newline="") as fh:
        for row in csv.DictReader(fh):
            if split != "all" and row["split"] != split:
                continue
            cat = int(row["category"])
            records.append(
                ClipRecord(row["clip"], root / str(cat) / f"{row['clip']}.wav", cat, row["split"])
            )
    if not records:
        raise ValueError(f"dataset at {root} has no clips for split {split!r}")
    return records


def load_clip(record: ClipRecord, segment_length: int, sample_rate: int) -> Waveform:
    wave = load_wav(record.path, target_rate=sample_rate)
    # crc32 rather than hash(): crop offsets must not depend on PYTHONHASHSEED
    offset_seed = zlib.crc32(record.name.encode())
    return Waveform(fit_segment(wave.samples, segment_length, seed=offset_seed), sample_rate)


def mixture_pairs(
    records: list[ClipRecord], n_pairs: int, seed: int = 0
) -> list[tuple[ClipRecord, ClipRecord]]:
    """Seeded clip pairs for evaluation; cross-category whenever more than one category exists."""
    rng = np.random.default_rng(seed)
    cats = {r.category for r in records}
    candidates = [
        (a, b)
        for i, a in enumerate(records)
        for b in records[i + 1 :]
        if a.category != b.category or len(cats) == 1
    ]
    if not candidates:
        raise ValueError("no valid clip pairs in dataset")
    idx = rng.permutation(len(candidates))[:n_pairs]
    return [candidates[i] for i in idx]
