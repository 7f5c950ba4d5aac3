import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilrecon.geometry import (
    GridSpec,
    ReferencePointSet,
    band_masks,
    embed_all,
    embed_pixel,
    latitude_of_row,
    pole_polarities,
    reference_grid,
)
from pilrecon.rasters import PolarityMap


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(1, 128)
    with pytest.raises(ValueError):
        GridSpec(64, 128, gap_px=-1)
    with pytest.raises(ValueError):
        GridSpec(64, 128, latitude_mode="mercator")


def test_gap_default_is_width_over_64():
    assert GridSpec(256, 512).gap_px == 8
    assert GridSpec(64, 128).gap_px == 2


def test_embed_quarter_turn():
    spec = GridSpec(2, 2, gap_px=0)
    x, y, z = embed_pixel(spec, 0, 0)
    # phi = 2*pi*0.5/2 = pi/2
    assert np.allclose((x, y, z), (0.0, 1.0, 0.5), atol=1e-15)


def test_embed_plane_pixel_center():
    spec = GridSpec(2, 2, gap_px=0, embedding="plane")
    assert embed_pixel(spec, 1, 1) == (0.75, 0.75, 0.0)


def test_embed_seam_gap_exceeds_pixel_step():
    spec = GridSpec(256, 512, gap_px=8)
    phi = lambda col: 2 * np.pi * (col + 0.5) / 520
    separation = phi(511) - phi(0)
    assert np.isclose(separation, 2 * np.pi * 511 / 520)
    gap = 2 * np.pi - separation
    assert np.isclose(gap, 2 * np.pi * 9 / 520)
    assert gap > 2 * np.pi / 520  # strictly more than one pixel step


def test_embed_out_of_bounds():
    spec = GridSpec(4, 4)
    with pytest.raises(IndexError):
        embed_pixel(spec, 4, 0)
    with pytest.raises(IndexError):
        embed_pixel(spec, 0, -1)


def test_cylinder_radius_invariant():
    spec = GridSpec(16, 32)
    coords = embed_all(spec)
    r2 = coords[:, 0] ** 2 + coords[:, 1] ** 2
    assert np.max(np.abs(r2 - 1.0)) < 1e-12


def test_z_strictly_decreasing_in_row():
    spec = GridSpec(16, 32)
    _, _, z = embed_pixel(spec, np.arange(16), np.zeros(16, dtype=int))
    assert np.all(np.diff(z) < 0)


def test_sphere_embedding_unit_radius():
    spec = GridSpec(16, 32, embedding="sphere")
    coords = embed_all(spec)
    r = np.linalg.norm(coords, axis=1)
    assert np.allclose(r, 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 5))
def test_embedding_injective_on_lattice(height, width, gap):
    spec = GridSpec(height, width, gap_px=gap)
    coords = embed_all(spec)
    unique = np.unique(np.round(coords, 12), axis=0)
    assert len(unique) == height * width


def test_latitude_equal_angle_examples():
    spec = GridSpec(180, 360)
    assert latitude_of_row(spec, 0) == pytest.approx(89.5)
    assert latitude_of_row(spec, 89) == pytest.approx(0.5)
    assert latitude_of_row(spec, 90) == pytest.approx(-0.5)


def test_latitude_sine_mode_closed_form():
    spec = GridSpec(2, 4, latitude_mode="sine-latitude")
    assert latitude_of_row(spec, 0) == pytest.approx(30.0)


def test_band_masks_height_18():
    spec = GridSpec(18, 4)
    north, south, equator = band_masks(spec)
    assert set(np.flatnonzero(north.any(axis=1))) == {0}
    assert set(np.flatnonzero(south.any(axis=1))) == {17}
    assert set(np.flatnonzero(equator.any(axis=1))) == set(range(5, 13))


def test_band_masks_height_256_north_rows():
    # theta(row) = 90*(1 - (2row+1)/256) > 80 iff row <= 13
    spec = GridSpec(256, 8)
    north, _, _ = band_masks(spec)
    rows = np.flatnonzero(north.any(axis=1))
    assert rows.tolist() == list(range(14))
    assert latitude_of_row(spec, 13) > 80 > latitude_of_row(spec, 14)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 64), st.sampled_from(["equal-angle", "sine-latitude"]))
def test_bands_disjoint(height, mode):
    spec = GridSpec(height, 4, latitude_mode=mode)
    north, south, equator = band_masks(spec)
    assert not (north & equator).any()
    assert not (south & equator).any()
    assert not (north & south).any()


def all_positive(height, width):
    return PolarityMap(np.ones((height, width), dtype=np.int8))


def test_reference_grid_step_64_yields_32_points():
    spec = GridSpec(256, 512)
    refs = reference_grid(spec, 64, all_positive(256, 512))
    assert len(refs) == 32


def test_reference_grid_step_32_yields_128_points():
    spec = GridSpec(256, 512)
    refs = reference_grid(spec, 32, all_positive(256, 512))
    assert len(refs) == 128


def test_reference_grid_drops_unknown_nodes():
    spec = GridSpec(256, 512)
    target = all_positive(256, 512)
    target.data[16, 16] = 0  # first grid node at step 32
    refs = reference_grid(spec, 32, target)
    assert len(refs) == 127


def test_reference_grid_step_1_returns_every_known_pixel():
    spec = GridSpec(8, 12)
    refs = reference_grid(spec, 1, all_positive(8, 12))
    assert len(refs) == 8 * 12


def test_reference_grid_oversized_step_warns_and_is_empty():
    spec = GridSpec(8, 12)
    with pytest.warns(UserWarning):
        refs = reference_grid(spec, 20, all_positive(8, 12))
    assert len(refs) == 0


def test_reference_point_set_validation():
    with pytest.raises(ValueError):
        ReferencePointSet(((0, 0, 0),))
    with pytest.raises(ValueError):
        ReferencePointSet(((0, 0, 1), (0, 0, -1)))
    refs = ReferencePointSet(((2, 3, 1),))
    with pytest.raises(ValueError):
        refs.check_bounds(GridSpec(2, 2))


def test_pole_polarities_majority():
    spec = GridSpec(18, 4)
    data = np.ones((18, 4), dtype=np.int8)
    data[0, :] = -1   # northernmost row is the whole north band at H=18
    target = PolarityMap(data)
    p_n, p_s = pole_polarities(spec, target)
    assert (p_n, p_s) == (-1, 1)
