"""Separation metrics by orthogonal-projection decomposition.

The estimate is split into a part explained by the target reference, a part
explained by the other references, and a residual:

    s_target = <est, ref_j> / <ref_j, ref_j> * ref_j
    e_interf = P_refs(est) - s_target          (P = least-squares projection)
    e_artif  = est - P_refs(est)

    SDR = 10 log10(|s_target|^2 / |e_interf + e_artif|^2)
    SIR = 10 log10(|s_target|^2 / |e_interf|^2)
    SAR = 10 log10(|s_target + e_interf|^2 / |e_artif|^2)

This is the instantaneous (distortion-filter length 1) flavor of the standard
decomposition, so absolute dB values are not comparable to toolkits that fit
512-tap filters; rankings and deltas on the same data are.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean, median

import numpy as np

from .validation import check_finite

DB_CAP = 100.0


def _db_ratio(num: float, den: float) -> float:
    if num <= 0.0:
        return -DB_CAP
    if den <= 0.0:
        return DB_CAP
    return float(np.clip(10.0 * math.log10(num / den), -DB_CAP, DB_CAP))


def decompose(
    estimate: np.ndarray, references: list[np.ndarray] | np.ndarray, target_index: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split estimate into (s_target, e_interf, e_artif); the three sum back to it."""
    estimate = check_finite(np.asarray(estimate, dtype=np.float64), "estimate")
    refs = [check_finite(np.asarray(r, dtype=np.float64), "reference") for r in references]
    if not 0 <= target_index < len(refs):
        raise ValueError(f"target_index {target_index} out of range for {len(refs)} references")
    for r in refs:
        if r.shape != estimate.shape:
            raise ValueError("estimate and references must share one length")
    target = refs[target_index]
    target_energy = float(target @ target)
    if target_energy <= 0.0:
        raise ValueError("degenerate reference: target has zero energy")

    s_target = (estimate @ target) / target_energy * target
    ref_matrix = np.stack(refs, axis=1)
    coeffs, *_ = np.linalg.lstsq(ref_matrix, estimate, rcond=None)
    projected = ref_matrix @ coeffs
    e_interf = projected - s_target
    e_artif = estimate - projected
    return s_target, e_interf, e_artif


def bss_eval(
    estimate: np.ndarray, references: list[np.ndarray] | np.ndarray, target_index: int
) -> tuple[float, float, float]:
    """(SDR, SIR, SAR) in dB for an estimate of references[target_index], capped at +/-100."""
    s_target, e_interf, e_artif = decompose(estimate, references, target_index)
    target_e = float(s_target @ s_target)
    interf_e = float(e_interf @ e_interf)
    artif_e = float(e_artif @ e_artif)
    distortion = e_interf + e_artif
    sdr = _db_ratio(target_e, float(distortion @ distortion))
    sir = _db_ratio(target_e, interf_e)
    wanted = s_target + e_interf
    sar = _db_ratio(float(wanted @ wanted), artif_e)
    return sdr, sir, sar


@dataclass
class MetricRow:
    mixture: str
    source: str
    method: str  # "model" or "mixture" (the mixture-as-estimate baseline)
    sdr: float
    sir: float
    sar: float


@dataclass
class MetricReport:
    """Per-(mixture, source) metric rows plus dataset-level aggregates."""

    rows: list[MetricRow] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def add(self, mixture: str, source: str, method: str, sdr: float, sir: float, sar: float):
        self.rows.append(MetricRow(mixture, source, method, sdr, sir, sar))

    def aggregates(self, method: str = "model") -> dict[str, float]:
        rows = [r for r in self.rows if r.method == method]
        if not rows:
            return {}
        out = {}
        for name in ("sdr", "sir", "sar"):
            vals = [getattr(r, name) for r in rows]
            out[f"mean_{name}"] = mean(vals)
            out[f"median_{name}"] = median(vals)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mixture", "source", "method", "sdr", "sir", "sar"])
            for r in self.rows:
                writer.writerow([r.mixture, r.source, r.method, f"{r.sdr:.4f}", f"{r.sir:.4f}", f"{r.sar:.4f}"])
            for method in sorted({r.method for r in self.rows}):
                agg = self.aggregates(method)
                writer.writerow(
                    ["__mean__", "", method]
                    + [f"{agg[f'mean_{name}']:.4f}" for name in ("sdr", "sir", "sar")]
                )

    def format_table(self) -> str:
        lines = [f"{'mixture':<24}{'source':<10}{'method':<10}{'SDR':>8}{'SIR':>8}{'SAR':>8}"]
        for r in self.rows:
            lines.append(
                f"{r.mixture:<24}{r.source:<10}{r.method:<10}{r.sdr:>8.2f}{r.sir:>8.2f}{r.sar:>8.2f}"
            )
        for method in sorted({r.method for r in self.rows}):
            agg = self.aggregates(method)
            if agg:
                lines.append(
                    f"{'mean':<24}{'':<10}{method:<10}"
                    f"{agg['mean_sdr']:>8.2f}{agg['mean_sir']:>8.2f}{agg['mean_sar']:>8.2f}"
                )
        return "\n".join(lines)
