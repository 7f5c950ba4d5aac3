"""Reconstruction quality measures and descriptive statistics.

Error fractions exclude target pixels valued 0 (inversion line / unknown)
from numerator and denominator alike.  The band error restricts to the
equator band rows from ``geometry.band_masks`` -- the single source of
truth for the +-40 degree belt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, band_masks
from .rasters import FilamentMask, PolarityMap


@dataclass(frozen=True)
class ErrorReport:
    e_total: float  # mismatch fraction over the whole map
    e_band: float   # mismatch fraction within |latitude| <= 40 deg
    n_total: int    # evaluable pixels, whole map
    n_band: int     # evaluable pixels, equator band


def error_fractions(pred: PolarityMap, target: PolarityMap, spec: GridSpec) -> ErrorReport:
    """Fractions of incorrectly predicted polarity, whole map and equator band."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch: pred {pred.data.shape}, target {target.data.shape}")
    if pred.data.shape != (spec.height, spec.width):
        raise ValueError(f"maps {pred.data.shape} do not match grid {spec.height}x{spec.width}")
    if np.any(pred.data == 0):
        raise ValueError("prediction must be fully binarized (no zeros)")
    evaluable = target.data != 0
    wrong = (pred.data != target.data) & evaluable
    n_total = int(evaluable.sum())
    _, _, equator = band_masks(spec)
    band_eval = evaluable & equator
    n_band = int(band_eval.sum())
    e_total = float(wrong.sum() / n_total) if n_total else math.nan
    e_band = float((wrong & equator).sum() / n_band) if n_band else math.nan
    return ErrorReport(e_total, e_band, n_total, n_band)


def pixel_counts(filaments: FilamentMask, pil: FilamentMask) -> tuple[int, int, float]:
    """(filament pixel count, inversion-line pixel count, their ratio).

    The ratio is NaN when the inversion line is empty.
    """
    if filaments.data.shape != pil.data.shape:
        raise ValueError("filament and inversion-line masks must have the same shape")
    n_fil = int(filaments.data.sum())
    n_pil = int(pil.data.sum())
    ratio = n_fil / n_pil if n_pil else math.nan
    return n_fil, n_pil, ratio


def pearson(xs, ys) -> float:
    """Sample Pearson correlation; raises on constant or too-short series."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("series must be 1D and equally long")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc ** 2))
    sy = np.sqrt(np.sum(yc ** 2))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for a constant series")
    return float(np.sum(xc * yc) / (sx * sy))


def format_report_row(map_id: str, report: ErrorReport, n_fil: int, n_pil: int, ratio: float) -> str:
    """One text-table row: ``map_id e_total e_band n_filament n_pil ratio``."""
    ratio_s = f"{ratio:.6g}" if not math.isnan(ratio) else "nan"
    return f"{map_id} {report.e_total:.6g} {report.e_band:.6g} {n_fil} {n_pil} {ratio_s}"
