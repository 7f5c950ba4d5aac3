"""Per-map rasters and their on-disk formats.

Three raster kinds cover everything the pipeline exchanges:

* ``FilamentMask``  -- boolean, true where the pixel belongs to a filament;
* ``PolarityMap``   -- {-1, 0, +1}, 0 marking inversion-line / unknown pixels;
* ``ConfidenceMap`` -- real values in [-1, 1], sign = polarity, magnitude =
  confidence.

Files are binary portable graymaps (P5).  Filament and polarity rasters are
8-bit with pixel codes 0 -> false/-1, 128 -> 0 (polarity only), 255 ->
true/+1; confidence rasters are 16-bit (big-endian, per the PGM convention)
with the linear code  v in [-1, 1]  <->  round((v + 1) / 2 * 65535).
Reference points travel as a line-oriented text file ``row col polarity``
with ``#`` comments.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import ReferencePointSet


class RasterFormatError(ValueError):
    """Raised when a file is not a valid raster of the requested kind."""


@dataclass
class FilamentMask:
    data: np.ndarray  # bool, (height, width)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("filament mask must be a non-empty 2D array")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class PolarityMap:
    data: np.ndarray  # int8 in {-1, 0, +1}, (height, width)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int8)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("polarity map must be a non-empty 2D array")
        bad = ~np.isin(self.data, (-1, 0, 1))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"polarity value {self.data[r, c]} at pixel ({r}, {c}) not in {{-1, 0, +1}}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ConfidenceMap:
    data: np.ndarray  # float64 in [-1, 1], (height, width)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("confidence map must be a non-empty 2D array")
        bad = (self.data < -1.0) | (self.data > 1.0) | ~np.isfinite(self.data)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"confidence value {self.data[r, c]} at pixel ({r}, {c}) outside [-1, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


Raster = FilamentMask | PolarityMap | ConfidenceMap

_KINDS = ("filament", "polarity", "confidence")


def _read_pgm_bytes(raw: bytes, path) -> tuple[int, int, int, bytes]:
    """Parse a P5 header, returning (width, height, maxval, pixel bytes)."""

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos:pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise RasterFormatError(f"{path}: truncated PGM header")
        return raw[start:pos]

    magic = token()
    if magic != b"P5":
        raise RasterFormatError(f"{path}: not a binary graymap (magic {magic!r}, expected P5)")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-numeric PGM header field") from exc
    if width < 1 or height < 1:
        raise RasterFormatError(f"{path}: invalid dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise RasterFormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = raw[pos:]
    expect = width * height * (2 if maxval == 65535 else 1)
    if len(body) != expect:
        raise RasterFormatError(f"{path}: expected {expect} pixel bytes, found {len(body)}")
    return width, height, maxval, body


def decode_raster(raw: bytes, kind: str, name="buffer") -> Raster:
    """Decode P5 bytes as the requested raster kind.

    Raises ``RasterFormatError`` naming the first offending pixel (row, col
    and byte offset within the pixel data) when a code is outside the
    kind's value domain.
    """
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
    width, height, maxval, body = _read_pgm_bytes(raw, name)
    if kind == "confidence":
        if maxval != 65535:
            raise RasterFormatError(f"{name}: confidence rasters are 16-bit, got maxval {maxval}")
        codes = np.frombuffer(body, dtype=">u2").reshape(height, width)
        return ConfidenceMap(codes.astype(np.float64) / 65535.0 * 2.0 - 1.0)
    if maxval != 255:
        raise RasterFormatError(f"{name}: {kind} rasters are 8-bit, got maxval {maxval}")
    codes = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    allowed = (0, 255) if kind == "filament" else (0, 128, 255)
    bad = ~np.isin(codes, allowed)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        offset = int(r) * width + int(c)
        raise RasterFormatError(
            f"{name}: pixel ({r}, {c}) at data byte {offset} has code {codes[r, c]}, "
            f"not in {allowed} for kind {kind}"
        )
    if kind == "filament":
        return FilamentMask(codes == 255)
    data = np.zeros(codes.shape, dtype=np.int8)
    data[codes == 0] = -1
    data[codes == 255] = 1
    return PolarityMap(data)


def load_raster(path, kind: str) -> Raster:
    """Load a P5 graymap file as the requested raster kind."""
    return decode_raster(Path(path).read_bytes(), kind, name=path)


def encode_raster(raster: Raster) -> bytes:
    """Serialize a raster to P5 bytes."""
    if isinstance(raster, FilamentMask):
        codes = np.where(raster.data, 255, 0).astype(np.uint8)
        maxval = 255
    elif isinstance(raster, PolarityMap):
        codes = np.full(raster.data.shape, 128, dtype=np.uint8)
        codes[raster.data == -1] = 0
        codes[raster.data == 1] = 255
        maxval = 255
    elif isinstance(raster, ConfidenceMap):
        codes = np.rint((raster.data + 1.0) / 2.0 * 65535.0).astype(">u2")
        maxval = 65535
    else:
        raise TypeError(f"cannot encode object of type {type(raster).__name__}")
    header = f"P5\n{raster.width} {raster.height}\n{maxval}\n".encode()
    return header + codes.tobytes()


def save_raster(raster: Raster, path) -> None:
    """Write a raster as a P5 graymap (atomically: temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_raster(raster))
    tmp.replace(path)


def downsample(raster: FilamentMask | PolarityMap, factor: int):
    """Reduce resolution by an integer factor that divides both dimensions.

    Filament masks use logical-OR pooling over each factor x factor block
    (thin filaments survive).  Polarity maps use a plurality vote over the
    block; ties become 0.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = raster.height, raster.width
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide {h}x{w}")
    if factor == 1:
        return type(raster)(raster.data.copy())
    blocks = raster.data.reshape(h // factor, factor, w // factor, factor)
    if isinstance(raster, FilamentMask):
        return FilamentMask(blocks.any(axis=(1, 3)))
    if isinstance(raster, PolarityMap):
        counts = np.stack(
            [(blocks == v).sum(axis=(1, 3)) for v in (-1, 0, 1)], axis=0
        )
        best = counts.max(axis=0)
        is_tie = (counts == best).sum(axis=0) > 1
        winner = np.array([-1, 0, 1], dtype=np.int8)[counts.argmax(axis=0)]
        winner[is_tie] = 0
        return PolarityMap(winner)
    raise TypeError(f"cannot downsample object of type {type(raster).__name__}")


def load_reference_points(path) -> ReferencePointSet:
    """Read a ``row col polarity`` text file (``#`` starts a comment)."""
    points = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise RasterFormatError(f"{path}:{lineno}: expected 'row col polarity', got {line!r}")
        try:
            row, col, pol = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise RasterFormatError(f"{path}:{lineno}: non-integer field in {line!r}") from exc
        points.append((row, col, pol))
    return ReferencePointSet(tuple(points), provenance="file")


def save_reference_points(refs: ReferencePointSet, path) -> None:
    lines = ["# row col polarity"]
    lines += [f"{r} {c} {p}" for r, c, p in refs.points]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)
