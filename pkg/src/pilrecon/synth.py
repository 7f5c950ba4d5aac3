"""Synthetic ground-truth worlds for end-to-end testing.

A world is a smooth random field g(phi, z) on the cylinder, built from a
handful of trigonometric modes that are exactly 2*pi-periodic in longitude
(so the raster's left and right edges are samples of one continuous
function).  The sign of g is the true polarity map, the zero crossings of g
form the true inversion line, and the observed "filaments" are contiguous
fragments carved out of that line.  Everything is a deterministic function
of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rasters import FilamentMask, PolarityMap

FRAGMENT_MEAN_RUN_PX = 20  # geometric run-length mean for filament fragments


@dataclass(frozen=True)
class SynthSpec:
    height: int
    width: int
    harmonics: int = 3
    max_wavenumber: int = 2
    fragment_fraction: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.harmonics < 1:
            raise ValueError("harmonics must be >= 1")
        if self.max_wavenumber < 1:
            raise ValueError("max_wavenumber must be >= 1")
        if not 0.0 <= self.fragment_fraction <= 1.0:
            raise ValueError("fragment_fraction must lie in [0, 1]")


def sample_modes(rng: np.random.Generator, harmonics: int, max_wavenumber: int) -> list[tuple]:
    """Random modes (amplitude, m, n, lon_phase, lat_phase).

    Longitudinal wavenumbers m are >= 1 so every mode has zero mean over the
    cylinder; amplitudes fall off as 1/k so large-scale structure dominates.
    """
    modes = []
    for k in range(1, harmonics + 1):
        amp = rng.uniform(0.5, 1.0) / k
        m = int(rng.integers(1, max_wavenumber + 1))
        n = int(rng.integers(0, max_wavenumber + 1))
        lon_phase = rng.uniform(0.0, 2.0 * np.pi)
        lat_phase = rng.uniform(0.0, 2.0 * np.pi)
        modes.append((amp, m, n, lon_phase, lat_phase))
    return modes


def evaluate_modes(height: int, width: int, modes) -> np.ndarray:
    """Field values at pixel centers: sum_k a_k cos(m_k phi + psi_k) cos(n_k pi z / 2 + chi_k)."""
    phi = 2.0 * np.pi * (np.arange(width) + 0.5) / width
    z = 1.0 - 2.0 * (np.arange(height) + 0.5) / height
    g = np.zeros((height, width))
    for amp, m, n, lon_phase, lat_phase in modes:
        g += amp * np.outer(np.cos(n * np.pi * z / 2.0 + lat_phase), np.cos(m * phi + lon_phase))
    return g


def inversion_line(g: np.ndarray) -> np.ndarray:
    """Pixels where g crosses zero between 4-neighbors (plus exact zeros).

    Each crossing is marked once, on the first pixel in raster order, so the
    line stays one pixel wide; columns wrap (the field is periodic in
    longitude), rows do not.
    """
    s = np.sign(g)
    pil = s == 0.0
    pil |= s * np.roll(s, -1, axis=1) < 0
    pil[:-1, :] |= s[:-1, :] * s[1:, :] < 0
    return pil


def carve_fragments(pil: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Contiguous runs along the inversion line covering ``fraction`` of it.

    The line is decomposed into chains by a greedy walk over 8-connected
    pixels (column-wrapped); runs with geometric lengths (mean 20 px) start
    at random uncovered pixels and extend along their chain until exactly
    round(fraction * n_pil) pixels are covered.
    """
    height, width = pil.shape
    pts = np.argwhere(pil)
    n = len(pts)
    out = np.zeros_like(pil)
    if n == 0 or fraction == 0.0:
        return out
    index_of = {(int(r), int(c)): i for i, (r, c) in enumerate(pts)}
    visited = np.zeros(n, dtype=bool)
    chains: list[list[int]] = []
    chain_pos = np.zeros((n, 2), dtype=np.int64)  # (chain id, offset in chain)
    steps = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    for start in rng.permutation(n):
        if visited[start]:
            continue
        chain = [int(start)]
        visited[start] = True
        r, c = pts[start]
        while True:
            nxt = None
            for dr, dc in steps:
                j = index_of.get((int(r) + dr, (int(c) + dc) % width))
                if j is not None and not visited[j]:
                    nxt = j
                    break
            if nxt is None:
                break
            visited[nxt] = True
            chain.append(int(nxt))
            r, c = pts[nxt]
        cid = len(chains)
        for off, j in enumerate(chain):
            chain_pos[j] = (cid, off)
        chains.append(chain)

    target_count = int(round(fraction * n))
    covered = np.zeros(n, dtype=bool)
    count = 0
    while count < target_count:
        start = int(rng.choice(np.flatnonzero(~covered)))
        cid, off = chain_pos[start]
        run = int(rng.geometric(1.0 / FRAGMENT_MEAN_RUN_PX))
        chain = chains[cid]
        for j in chain[off:off + run]:
            if not covered[j]:
                covered[j] = True
                count += 1
                if count >= target_count:
                    break
    sel = pts[covered]
    out[sel[:, 0], sel[:, 1]] = True
    return out


def generate(spec: SynthSpec) -> tuple[PolarityMap, FilamentMask, FilamentMask]:
    """(target polarity, true inversion line, observed filament fragments)."""
    rng = np.random.default_rng(spec.seed)
    modes = sample_modes(rng, spec.harmonics, spec.max_wavenumber)
    g = evaluate_modes(spec.height, spec.width, modes)
    target = PolarityMap(np.sign(g).astype(np.int8))
    pil = inversion_line(g)
    filaments = carve_fragments(pil, spec.fragment_fraction, rng)
    return target, FilamentMask(pil), FilamentMask(filaments)
