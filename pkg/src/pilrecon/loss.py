"""The training objective over a pixel partition, and its df derivative.

Six normalized terms, each with unit pixel measure:

* t1 neutrality      |sum f| / N           (total field should be neutral)
* t2 filament zero   mean_F f^2            (filaments on the zero level)
* t3 bipolarity      mean_{C\\F} |f|        (maximized: enters total with -)
* t4 pole prior      [sum_N (f-p_N)^2 + sum_S (f-p_S)^2] / (4 (N_N + N_S))
* t5 gradient norm   mean_F ||grad f||^2   (maximized: enters total with -)
* tref reference     mean_i (f(r_i) - p_i)^2

total = l1*t1 + l2*t2 - l3*t3 + l4*t4 - l5*t5 + lref*tref.  The first four
terms are bounded by construction (t1..t4 in [0, 1], tref in [0, 4]): each
is normalized by its maximum attainable value, so the multipliers start
from equal footing.

``evaluate`` also works on stratified mini-batches: the partition's index
arrays then point into the batch, and per-stratum population counts scale
the sums so every term stays an unbiased estimate of its full-batch value.

The derivative d total / d f is exact, with the usual subgradient
conventions sign(0) = 0 for |.| at the origin.  t5 depends on f only
through its spatial gradient, so it contributes nothing to d/df; its
parameter gradient is handled by the trainer through the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, ReferencePointSet, band_masks, latitude_of_row
from .rasters import FilamentMask


@dataclass(frozen=True)
class LossWeights:
    neutrality: float = 1.0
    filament_zero: float = 1.0
    bipolarity: float = 1.0
    pole_prior: float = 1.0
    gradient_norm: float = 0.0
    reference: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")


@dataclass
class LossBreakdown:
    t1: float
    t2: float
    t3: float
    t4: float
    t5: float
    tref: float
    total: float

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.t1, self.t2, self.t3, self.t4, self.t5, self.tref, self.total))

    def as_dict(self) -> dict:
        return dict(t1=self.t1, t2=self.t2, t3=self.t3, t4=self.t4, t5=self.t5,
                    tref=self.tref, total=self.total)


@dataclass
class PixelPartition:
    """Index bookkeeping for one evaluation batch.

    Index arrays address rows of the ``f_values`` passed to ``evaluate``.
    ``pop_*`` are the corresponding population sizes on the full map; they
    equal the index-array lengths for a full batch and exceed them for a
    stratified sample.  ``pixel_weights``, when set (full batch only),
    carries per-pixel measure weights such as cos(latitude).
    """

    fil_idx: np.ndarray
    nonfil_idx: np.ndarray
    north_idx: np.ndarray
    south_idx: np.ndarray
    pole_north: float
    pole_south: float
    ref_idx: np.ndarray
    ref_pol: np.ndarray
    pop_fil: int
    pop_nonfil: int
    pop_north: int
    pop_south: int
    pixel_weights: np.ndarray | None = None

    @property
    def pop_all(self) -> int:
        return self.pop_fil + self.pop_nonfil


def build_partition(
    filaments: FilamentMask,
    spec: GridSpec,
    refs: ReferencePointSet,
    poles: tuple[float, float],
    cos_latitude: bool = False,
) -> PixelPartition:
    """Full-map partition in row-major flat pixel indices."""
    if (filaments.height, filaments.width) != (spec.height, spec.width):
        raise ValueError(
            f"filament mask {filaments.height}x{filaments.width} does not match grid "
            f"{spec.height}x{spec.width}"
        )
    p_n, p_s = poles
    if p_n not in (-1, 1) or p_s not in (-1, 1):
        raise ValueError(f"pole polarities must be +1 or -1, got {poles}")
    refs.check_bounds(spec)
    flat = filaments.data.ravel()
    fil_idx = np.flatnonzero(flat)
    nonfil_idx = np.flatnonzero(~flat)
    north, south, _ = band_masks(spec)
    north_idx = np.flatnonzero(north.ravel())
    south_idx = np.flatnonzero(south.ravel())
    rows, cols, pol = refs.as_arrays()
    ref_idx = rows * spec.width + cols
    weights = None
    if cos_latitude:
        lat = latitude_of_row(spec, np.arange(spec.height))
        weights = np.repeat(np.cos(np.radians(lat)), spec.width)
    return PixelPartition(
        fil_idx=fil_idx,
        nonfil_idx=nonfil_idx,
        north_idx=north_idx,
        south_idx=south_idx,
        pole_north=float(p_n),
        pole_south=float(p_s),
        ref_idx=ref_idx,
        ref_pol=pol,
        pop_fil=len(fil_idx),
        pop_nonfil=len(nonfil_idx),
        pop_north=len(north_idx),
        pop_south=len(south_idx),
        pixel_weights=weights,
    )


def evaluate(
    f_values: np.ndarray,
    spatial_grads: np.ndarray | None,
    partition: PixelPartition,
    weights: LossWeights,
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown and d total / d f for one batch of field values.

    ``spatial_grads``, when given, holds (df/dx, df/dy, df/dz) rows for the
    partition's filament indices (in order) and feeds the t5 value.
    """
    f = np.asarray(f_values)
    if f.ndim != 1:
        raise ValueError(f"f_values must be 1D, got shape {f.shape}")
    if np.any(np.abs(f) > 1.0) or not np.all(np.isfinite(f)):
        raise ValueError("f values must lie in [-1, 1]")
    part = partition
    d = np.zeros_like(f)
    w = part.pixel_weights

    n_fil, n_nonfil = len(part.fil_idx), len(part.nonfil_idx)
    f_fil = f[part.fil_idx]
    f_nonfil = f[part.nonfil_idx]

    if w is None:
        scale_fil = part.pop_fil / n_fil if n_fil else 0.0
        scale_nonfil = part.pop_nonfil / n_nonfil if n_nonfil else 0.0
        total_measure = part.pop_all

        mean_est = (f_fil.sum() * scale_fil + f_nonfil.sum() * scale_nonfil) / total_measure
        t1 = abs(mean_est)
        sgn = np.sign(mean_est)
        if n_fil:
            d[part.fil_idx] += weights.neutrality * sgn * scale_fil / total_measure
        d[part.nonfil_idx] += weights.neutrality * sgn * scale_nonfil / total_measure

        t2 = float(np.mean(f_fil ** 2)) if n_fil else 0.0
        if n_fil:
            d[part.fil_idx] += weights.filament_zero * 2.0 * f_fil / n_fil

        t3 = float(np.mean(np.abs(f_nonfil))) if n_nonfil else 0.0
        if n_nonfil:
            d[part.nonfil_idx] += -weights.bipolarity * np.sign(f_nonfil) / n_nonfil

        n_poles = part.pop_north + part.pop_south
        if n_poles:
            f_n = f[part.north_idx]
            f_s = f[part.south_idx]
            sc_n = part.pop_north / len(part.north_idx) if len(part.north_idx) else 0.0
            sc_s = part.pop_south / len(part.south_idx) if len(part.south_idx) else 0.0
            t4 = (np.sum((f_n - part.pole_north) ** 2) * sc_n
                  + np.sum((f_s - part.pole_south) ** 2) * sc_s) / (4.0 * n_poles)
            if len(part.north_idx):
                d[part.north_idx] += weights.pole_prior * 2.0 * (f_n - part.pole_north) * sc_n / (4.0 * n_poles)
            if len(part.south_idx):
                d[part.south_idx] += weights.pole_prior * 2.0 * (f_s - part.pole_south) * sc_s / (4.0 * n_poles)
        else:
            t4 = 0.0
    else:
        # cos-latitude (or custom) pixel measure; full-batch partitions only
        if part.pop_fil != n_fil or part.pop_nonfil != n_nonfil:
            raise ValueError("pixel_weights require a full-batch partition")
        w_fil = w[part.fil_idx]
        w_nonfil = w[part.nonfil_idx]
        total_measure = w.sum()
        mean_est = (np.sum(w_fil * f_fil) + np.sum(w_nonfil * f_nonfil)) / total_measure
        t1 = abs(mean_est)
        sgn = np.sign(mean_est)
        d[part.fil_idx] += weights.neutrality * sgn * w_fil / total_measure
        d[part.nonfil_idx] += weights.neutrality * sgn * w_nonfil / total_measure

        m_fil = w_fil.sum()
        t2 = float(np.sum(w_fil * f_fil ** 2) / m_fil) if n_fil else 0.0
        if n_fil:
            d[part.fil_idx] += weights.filament_zero * 2.0 * w_fil * f_fil / m_fil

        m_nonfil = w_nonfil.sum()
        t3 = float(np.sum(w_nonfil * np.abs(f_nonfil)) / m_nonfil) if n_nonfil else 0.0
        if n_nonfil:
            d[part.nonfil_idx] += -weights.bipolarity * w_nonfil * np.sign(f_nonfil) / m_nonfil

        w_n = w[part.north_idx]
        w_s = w[part.south_idx]
        m_poles = w_n.sum() + w_s.sum()
        if m_poles > 0:
            f_n = f[part.north_idx]
            f_s = f[part.south_idx]
            t4 = (np.sum(w_n * (f_n - part.pole_north) ** 2)
                  + np.sum(w_s * (f_s - part.pole_south) ** 2)) / (4.0 * m_poles)
            d[part.north_idx] += weights.pole_prior * 2.0 * w_n * (f_n - part.pole_north) / (4.0 * m_poles)
            d[part.south_idx] += weights.pole_prior * 2.0 * w_s * (f_s - part.pole_south) / (4.0 * m_poles)
        else:
            t4 = 0.0

    if spatial_grads is not None and n_fil:
        grads = np.asarray(spatial_grads)
        if grads.shape != (n_fil, 3):
            raise ValueError(f"spatial_grads shape {grads.shape}, expected ({n_fil}, 3)")
        t5 = float(np.mean(np.sum(grads ** 2, axis=1)))
    else:
        t5 = 0.0

    n_ref = len(part.ref_idx)
    if n_ref:
        resid = f[part.ref_idx] - part.ref_pol
        tref = float(np.mean(resid ** 2))
        np.add.at(d, part.ref_idx, weights.reference * 2.0 * resid / n_ref)
    else:
        tref = 0.0

    total = (weights.neutrality * t1 + weights.filament_zero * t2
             - weights.bipolarity * t3 + weights.pole_prior * t4
             - weights.gradient_norm * t5 + weights.reference * tref)
    return LossBreakdown(float(t1), float(t2), float(t3), float(t4), t5, tref, float(total)), d
