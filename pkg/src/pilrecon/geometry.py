"""Raster geometry: pixel -> 3D embedding, latitude bands, reference grids.

A synoptic map is a height x width raster, row 0 at the northern edge.
Pixels are addressed by their centers, i.e. (row + 0.5, col + 0.5), so no
pixel sits exactly on a pole or on the longitude seam.  The default
embedding wraps the raster onto a unit-radius cylinder with a small angular
gap between the left and right edges (the two edges of a synoptic map are
similar but not identical, so they must not be glued together).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

LATITUDE_MODES = ("equal-angle", "sine-latitude")
EMBEDDINGS = ("cylinder", "sphere", "plane")

POLE_BAND_DEG = 80.0    # |latitude| above this belongs to a pole band
EQUATOR_BAND_DEG = 40.0  # |latitude| up to this belongs to the equator band


@dataclass(frozen=True)
class GridSpec:
    """Raster dimensions plus the parameters of the 3D embedding.

    ``gap_px`` is the number of phantom pixel columns inserted between the
    right and left edges of the cylindrical fold-out; ``None`` picks the
    default ``width // 64`` (8 px for a 512-wide map, keeping the angular
    distortion under 2 percent).
    """

    height: int
    width: int
    gap_px: int | None = None
    latitude_mode: str = "equal-angle"
    embedding: str = "cylinder"
    z_half_height: float = 1.0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.height}x{self.width}")
        if self.gap_px is None:
            object.__setattr__(self, "gap_px", self.width // 64)
        if self.gap_px < 0:
            raise ValueError(f"gap_px must be >= 0, got {self.gap_px}")
        if self.latitude_mode not in LATITUDE_MODES:
            raise ValueError(f"latitude_mode must be one of {LATITUDE_MODES}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"embedding must be one of {EMBEDDINGS}")

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class ReferencePointSet:
    """Pixels with externally supplied polarity (+1 or -1, never 0)."""

    points: tuple[tuple[int, int, int], ...]
    provenance: str = "user"  # grid | user | file

    def __post_init__(self):
        seen = set()
        for row, col, pol in self.points:
            if pol not in (-1, 1):
                raise ValueError(f"reference polarity must be +1 or -1, got {pol} at ({row}, {col})")
            if (row, col) in seen:
                raise ValueError(f"duplicate reference point ({row}, {col})")
            seen.add((row, col))
        if self.provenance not in ("grid", "user", "file"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.points)

    def check_bounds(self, spec: GridSpec) -> None:
        for row, col, _ in self.points:
            if not (0 <= row < spec.height and 0 <= col < spec.width):
                raise ValueError(f"reference point ({row}, {col}) outside {spec.height}x{spec.width} grid")

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(rows, cols, polarities) as numpy arrays; empty arrays when no points."""
        if not self.points:
            return (np.zeros(0, dtype=np.int64),) * 2 + (np.zeros(0, dtype=np.float64),)
        arr = np.asarray(self.points)
        return arr[:, 0], arr[:, 1], arr[:, 2].astype(np.float64)


def _check_index(spec: GridSpec, row, col) -> None:
    row = np.asarray(row)
    col = np.asarray(col)
    if np.any(row < 0) or np.any(row >= spec.height):
        raise IndexError(f"row index out of range for height {spec.height}")
    if np.any(col < 0) or np.any(col >= spec.width):
        raise IndexError(f"col index out of range for width {spec.width}")


def latitude_of_row(spec: GridSpec, row) -> np.ndarray | float:
    """Latitude in degrees of a pixel-center row; row 0 is northernmost.

    equal-angle rows are evenly spaced in latitude; sine-latitude rows are
    evenly spaced in sin(latitude) (equal-area rows).
    """
    _check_index(spec, row, 0)
    frac = 1.0 - (2.0 * np.asarray(row, dtype=np.float64) + 1.0) / spec.height
    if spec.latitude_mode == "equal-angle":
        lat = 90.0 * frac
    else:
        lat = np.degrees(np.arcsin(frac))
    return float(lat) if np.isscalar(row) or np.ndim(row) == 0 else lat


def embed_pixel(spec: GridSpec, row, col):
    """Map pixel indices (scalars or arrays) to (x, y, z) embedding coordinates.

    cylinder: phi = 2*pi*(col + 0.5) / (width + gap_px), radius 1,
              z = z_half_height * (1 - 2*(row + 0.5)/height).
    sphere:   unit sphere at the row's latitude.
    plane:    unit square, z = 0.
    """
    _check_index(spec, row, col)
    row = np.asarray(row, dtype=np.float64)
    col = np.asarray(col, dtype=np.float64)
    if spec.embedding == "plane":
        x = (col + 0.5) / spec.width
        y = (row + 0.5) / spec.height
        z = np.zeros_like(x)
        return x, y, z
    phi = 2.0 * np.pi * (col + 0.5) / (spec.width + spec.gap_px)
    if spec.embedding == "cylinder":
        z = spec.z_half_height * (1.0 - 2.0 * (row + 0.5) / spec.height)
        return np.cos(phi), np.sin(phi), z
    theta = np.radians(latitude_of_row(spec, row.astype(np.int64)))
    return np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)


def embed_all(spec: GridSpec, dtype=np.float64) -> np.ndarray:
    """Coordinates of every pixel center, shape (height*width, 3), row-major."""
    rows, cols = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    x, y, z = embed_pixel(spec, rows.ravel(), cols.ravel())
    return np.stack([x, y, z], axis=1).astype(dtype)


def band_masks(spec: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(north, south, equator) boolean rasters; each is constant along rows.

    North band: latitude > 80 deg; south band: latitude < -80 deg;
    equator band: |latitude| <= 40 deg.
    """
    lat = latitude_of_row(spec, np.arange(spec.height))
    north = np.broadcast_to((lat > POLE_BAND_DEG)[:, None], (spec.height, spec.width)).copy()
    south = np.broadcast_to((lat < -POLE_BAND_DEG)[:, None], (spec.height, spec.width)).copy()
    equator = np.broadcast_to((np.abs(lat) <= EQUATOR_BAND_DEG)[:, None], (spec.height, spec.width)).copy()
    return north, south, equator


def reference_grid(spec: GridSpec, step: int, target) -> ReferencePointSet:
    """Uniform grid of reference points read off a target polarity map.

    Grid nodes sit at rows step//2 + k*step, cols step//2 + m*step.  Nodes
    whose target value is 0 (inversion line / unknown) are dropped.  step=1
    keeps every pixel with known polarity.
    """
    if step < 1:
        raise ValueError(f"grid step must be >= 1, got {step}")
    data = np.asarray(target.data if hasattr(target, "data") else target)
    if data.shape != (spec.height, spec.width):
        raise ValueError(f"target shape {data.shape} does not match grid {spec.height}x{spec.width}")
    if step > min(spec.height, spec.width):
        warnings.warn(f"grid step {step} exceeds map dimensions; no reference points generated")
        return ReferencePointSet((), provenance="grid")
    rows = np.arange(step // 2, spec.height, step)
    cols = np.arange(step // 2, spec.width, step)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    pol = data[rr.ravel(), cc.ravel()]
    keep = pol != 0
    points = tuple(
        (int(r), int(c), int(p))
        for r, c, p in zip(rr.ravel()[keep], cc.ravel()[keep], pol[keep])
    )
    return ReferencePointSet(points, provenance="grid")


def pole_polarities(spec: GridSpec, target) -> tuple[int, int]:
    """Majority polarity of the north and south pole bands of a target map.

    Ties (or bands with no known polarity) resolve to +1.
    """
    data = np.asarray(target.data if hasattr(target, "data") else target)
    north, south, _ = band_masks(spec)
    p_n = 1 if data[north].sum() >= 0 else -1
    p_s = 1 if data[south].sum() >= 0 else -1
    return p_n, p_s
