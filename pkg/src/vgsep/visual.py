"""Per-frame visual encoding and temporal aggregation into one condition vector.

Real backbones (CLIP / ResNet image encoders) sit behind the FrameEncoder
interface; the toy encoders here are seeded linear projections good enough to
exercise the conditioning pathway at desk scale. Aggregation is a shallow
transformer (three encoder layers, one decoder layer with a single learned
query) followed by a mean over frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
import torch.nn as nn

from .validation import check_finite


@dataclass
class VisualClip:
    """K frames of one kind: raw 'category' ids, 'image' thumbnails, or 'embedding' vectors."""

    frames: Sequence
    kind: str = "category"

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("clip must contain at least one frame")
        if self.kind not in ("category", "image", "embedding"):
            raise ValueError(f"unknown frame kind {self.kind!r}")


@runtime_checkable
class FrameEncoder(Protocol):
    output_dim: int

    def encode(self, frames: Sequence) -> np.ndarray: ...


class CategoryFrameEncoder:
    """Category id -> fixed seeded projection of its one-hot vector.

    Deterministic across calls and processes for a given (num_categories,
    output_dim, seed), which keeps the desk-scale conditioning pathway
    identical to what a real backbone would feed.
    """

    def __init__(self, num_categories: int, output_dim: int, seed: int = 0):
        self.num_categories = num_categories
        self.output_dim = output_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((num_categories, output_dim)) / np.sqrt(output_dim)

    def encode(self, frames: Sequence[int]) -> np.ndarray:
        ids = np.asarray(frames, dtype=int)
        if ids.ndim != 1:
            raise ValueError("category frames must be a flat sequence of ids")
        if ids.min() < 0 or ids.max() >= self.num_categories:
            raise ValueError(f"category id outside [0, {self.num_categories})")
        return self.projection[ids].astype(np.float32)


class ThumbnailFrameEncoder:
    """Flattened grayscale thumbnails -> seeded linear projection."""

    def __init__(self, output_dim: int, seed: int = 0, thumb_size: int = 8):
        self.output_dim = output_dim
        self.thumb_size = thumb_size
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((thumb_size * thumb_size, output_dim)) / thumb_size

    def encode(self, frames: Sequence[np.ndarray]) -> np.ndarray:
        out = []
        for frame in frames:
            arr = np.asarray(frame, dtype=np.float64)
            if arr.shape != (self.thumb_size, self.thumb_size):
                raise ValueError(f"expected {self.thumb_size}x{self.thumb_size} thumbnails")
            out.append(arr.reshape(-1) @ self.projection)
        return np.stack(out).astype(np.float32)


def encode_frames(clip: VisualClip, encoder: FrameEncoder | None = None) -> np.ndarray:
    """(K, C) per-frame embeddings, order preserving.

    Precomputed-embedding clips pass through unchanged; other kinds require an
    encoder whose output_dim defines C.
    """
    if clip.kind == "embedding":
        emb = np.asarray(clip.frames, dtype=np.float32)
        if emb.ndim == 1:
            emb = emb[None, :]
        if emb.ndim != 2:
            raise ValueError("embedding clips must be (K, C) arrays")
        return check_finite(emb, "frame embeddings")
    if encoder is None:
        raise ValueError(f"{clip.kind!r} frames need a FrameEncoder")
    emb = encoder.encode(clip.frames)
    if emb.shape != (len(clip.frames), encoder.output_dim):
        raise ValueError("encoder returned wrong shape")
    return emb


class TemporalTransformer(nn.Module):
    """Self-attention aggregation of frame embeddings into one condition vector.

    Three encoder layers contextualize the K frames (with learned positions);
    a single learned query attends over them through one decoder layer and its
    output is broadcast-added to the per-frame features before the mean over
    K. Dropout stays at zero so inference is deterministic.
    """

    def __init__(self, dim: int, heads: int = 4, max_frames: int = 32):
        super().__init__()
        self.dim = dim
        self.max_frames = max_frames
        self.positions = nn.Parameter(torch.zeros(max_frames, dim))
        layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=3)
        self.query = nn.Parameter(torch.randn(1, 1, dim) / dim**0.5)
        self.decoder = nn.TransformerDecoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True
        )

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        """(B, K, C) or (K, C) frame embeddings -> (B, C) or (C,) condition."""
        squeeze = embeddings.dim() == 2
        if squeeze:
            embeddings = embeddings.unsqueeze(0)
        b, k, c = embeddings.shape
        if c != self.dim:
            raise ValueError(f"embedding dim {c} does not match transformer dim {self.dim}")
        if not 1 <= k <= self.max_frames:
            raise ValueError(f"frame count {k} outside [1, {self.max_frames}]")
        h = self.encoder(embeddings + self.positions[:k].unsqueeze(0))
        pooled = self.decoder(self.query.expand(b, 1, c), h)
        v = (h + pooled).mean(dim=1)
        return v.squeeze(0) if squeeze else v


def aggregate(embeddings, transformer: TemporalTransformer) -> torch.Tensor:
    """Condition vector from (K, C) or (B, K, C) embeddings (numpy or torch)."""
    if isinstance(embeddings, np.ndarray):
        embeddings = torch.as_tensor(embeddings, dtype=next(transformer.parameters()).dtype)
    return transformer(embeddings)


def write_embedding_file(path: str | Path, embeddings: np.ndarray, encoder_name: str = "") -> None:
    """Per-clip flat binary of K x C float32, with a text sidecar naming K, C, encoder."""
    emb = np.asarray(embeddings, dtype=np.float32)
    if emb.ndim == 1:
        emb = emb[None, :]
    path = Path(path)
    path.write_bytes(emb.astype("<f4").tobytes(order="C"))
    k, c = emb.shape
    path.with_suffix(path.suffix + ".hdr").write_text(f"K={k}\nC={c}\nencoder={encoder_name}\n")


def read_embedding_file(path: str | Path) -> tuple[np.ndarray, str]:
    path = Path(path)
    fields = {}
    for line in path.with_suffix(path.suffix + ".hdr").read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    k, c = int(fields["K"]), int(fields["C"])
    emb = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(k, c).copy()
    return emb, fields.get("encoder", "")
