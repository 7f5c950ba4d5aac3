import numpy as np
import pytest

from pilrecon.synth import (
    SynthSpec,
    carve_fragments,
    evaluate_modes,
    generate,
    inversion_line,
)


def test_single_mode_closed_form():
    # one mode, amplitude 1, m=1, no phases, no latitude dependence:
    # g = cos(phi) -> two vertical half-maps, inversion line = two columns
    g = evaluate_modes(64, 128, [(1.0, 1, 0, 0.0, 0.0)])
    target = np.sign(g)
    # cos(2*pi*(c+0.5)/128) > 0 for c <= 31 and c >= 96
    assert np.all(target[:, :32] == 1)
    assert np.all(target[:, 32:96] == -1)
    assert np.all(target[:, 96:] == 1)
    pil = inversion_line(g)
    cols = np.flatnonzero(pil.any(axis=0))
    assert cols.tolist() == [31, 95]
    assert np.all(pil[:, 31]) and np.all(pil[:, 95])


def test_full_fraction_covers_line_exactly():
    spec = SynthSpec(48, 96, harmonics=2, fragment_fraction=1.0, seed=3)
    _, pil, fil = generate(spec)
    assert np.array_equal(fil.data, pil.data)


def test_fragments_subset_of_line():
    for seed in range(10):
        _, pil, fil = generate(SynthSpec(32, 64, seed=seed))
        assert not np.any(fil.data & ~pil.data)


def test_fragment_fraction_statistics():
    for seed in range(20):
        _, pil, fil = generate(SynthSpec(64, 128, harmonics=3, fragment_fraction=0.6, seed=seed))
        ratio = fil.data.sum() / pil.data.sum()
        assert abs(ratio - 0.6) <= 0.05


def test_both_polarities_present():
    for seed in range(10):
        target, _, _ = generate(SynthSpec(32, 64, harmonics=1, seed=seed))
        assert (target.data == 1).any()
        assert (target.data == -1).any()


def test_determinism():
    a = generate(SynthSpec(32, 64, seed=42))
    b = generate(SynthSpec(32, 64, seed=42))
    for x, y in zip(a, b):
        assert np.array_equal(x.data, y.data)
    c = generate(SynthSpec(32, 64, seed=43))
    assert any(not np.array_equal(x.data, y.data) for x, y in zip(a, c))


def test_seam_consistency():
    # the field is periodic in longitude, so a sign flip across the seam
    # must coincide with an inversion-line pixel in the last column
    for seed in range(10):
        target, pil, _ = generate(SynthSpec(32, 64, harmonics=3, seed=seed))
        flips = target.data[:, -1] * target.data[:, 0] < 0
        assert np.all(pil.data[:, -1][flips])


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(32, 64, harmonics=0)
    with pytest.raises(ValueError):
        SynthSpec(32, 64, fragment_fraction=1.2)


def test_carve_fragments_empty_line():
    out = carve_fragments(np.zeros((8, 8), dtype=bool), 0.5, np.random.default_rng(0))
    assert not out.any()


def test_carve_fragments_runs_are_contiguous():
    # a single straight line: every covered run should be a contiguous span
    pil = np.zeros((1, 64), dtype=bool)
    pil[0, :] = True
    rng = np.random.default_rng(5)
    out = carve_fragments(pil, 0.5, rng)
    assert out.sum() == 32
    runs = np.diff(np.flatnonzero(out[0]))
    # contiguity: mean run length well above 1 px (geometric mean-20 runs)
    assert (runs == 1).sum() >= 20
