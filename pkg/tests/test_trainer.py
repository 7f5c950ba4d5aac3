import numpy as np
import pytest

from pilrecon.geometry import GridSpec, ReferencePointSet, reference_grid
from pilrecon.loss import LossWeights, PixelPartition, build_partition, evaluate
from pilrecon.rasters import FilamentMask, PolarityMap
from pilrecon.synth import evaluate_modes, inversion_line
from pilrecon.trainer import (
    TrainConfig,
    TrainingDiverged,
    _stratum_quota,
    export_history,
    predict_map,
    train_single,
)

QUIET = LossWeights()


def vertical_split_world(height=64, width=128):
    """sign(cos(phi)) world: filaments = full inversion line, fraction 1."""
    g = evaluate_modes(height, width, [(1.0, 1, 0, 0.0, 0.0)])
    target = PolarityMap(np.sign(g).astype(np.int8))
    pil = inversion_line(g)
    return target, FilamentMask(pil)


def test_zero_weights_and_zero_decay_keep_params():
    spec = GridSpec(8, 16)
    mask = FilamentMask(np.zeros((8, 16), dtype=bool))
    cfg = TrainConfig(iterations=1, weight_decay=0.0, seed=5)
    weights = LossWeights(0, 0, 0, 0, 0, 0)
    model = train_single(mask, spec, ReferencePointSet(()), (1, -1), weights, cfg)
    from pilrecon.net import init_params, MlpSpec

    assert np.array_equal(model.params.flat, init_params(MlpSpec(), 5).flat)


def test_weight_decay_alone_moves_params():
    spec = GridSpec(8, 16)
    mask = FilamentMask(np.zeros((8, 16), dtype=bool))
    cfg = TrainConfig(iterations=1, weight_decay=1e-4, seed=5)
    weights = LossWeights(0, 0, 0, 0, 0, 0)
    model = train_single(mask, spec, ReferencePointSet(()), (1, -1), weights, cfg)
    from pilrecon.net import init_params, MlpSpec

    assert not np.array_equal(model.params.flat, init_params(MlpSpec(), 5).flat)


def test_training_is_deterministic():
    spec = GridSpec(16, 32)
    target, fil = vertical_split_world(16, 32)
    refs = ReferencePointSet(((8, 8, 1), (8, 24, -1)))
    cfg = TrainConfig(iterations=50, seed=3)
    a = train_single(fil, spec, refs, (1, 1), QUIET, cfg)
    b = train_single(fil, spec, refs, (1, 1), QUIET, cfg)
    assert np.array_equal(a.params.flat, b.params.flat)
    assert a.final_breakdown.as_dict() == b.final_breakdown.as_dict()


def test_minibatch_training_is_deterministic():
    spec = GridSpec(16, 32)
    target, fil = vertical_split_world(16, 32)
    cfg = TrainConfig(iterations=50, seed=3, batch_size=128)
    a = train_single(fil, spec, ReferencePointSet(()), (1, 1), QUIET, cfg)
    b = train_single(fil, spec, ReferencePointSet(()), (1, 1), QUIET, cfg)
    assert np.array_equal(a.params.flat, b.params.flat)


def test_oracle_recovery_vertical_split():
    # two half-maps of opposite polarity, the full inversion line observed,
    # two opposite reference points: the field must recover the split
    height, width = 64, 128
    spec = GridSpec(height, width)
    target, fil = vertical_split_world(height, width)
    refs = ReferencePointSet(((32, 8, 1), (32, 64, -1)))
    weights = LossWeights(pole_prior=0.0)
    cfg = TrainConfig(iterations=2000, seed=0, dtype="float32")
    model = train_single(fil, spec, refs, (1, -1), weights, cfg)
    assert model.final_breakdown.t2 < 0.05
    cmap = predict_map(model.params, spec)
    pred = np.where(cmap.data >= 0, 1, -1)
    known = target.data != 0
    match = (pred[known] == target.data[known]).mean()
    assert match > 0.95
    # trained field is confidently bipolar away from the filaments
    nonfil = ~fil.data
    assert np.abs(cmap.data[nonfil]).mean() > 0.5


def test_history_stride_and_final_entry():
    spec = GridSpec(8, 16)
    mask = FilamentMask(np.zeros((8, 16), dtype=bool))
    cfg = TrainConfig(iterations=25, record_every=10, seed=0)
    model = train_single(mask, spec, ReferencePointSet(()), (1, -1), QUIET, cfg)
    iters = [i for i, _ in model.history]
    assert iters == [0, 10, 20, 25]
    assert model.final_breakdown.total == model.history[-1][1].total


def test_loss_trend_decreases():
    spec = GridSpec(16, 32)
    target, fil = vertical_split_world(16, 32)
    refs = reference_grid(spec, 8, target)
    cfg = TrainConfig(iterations=500, seed=1, record_every=100)
    model = train_single(fil, spec, refs, (1, 1), QUIET, cfg)
    assert model.history[-1][1].total < model.history[0][1].total


def test_warm_start_zero_iterations_reproduces_donor():
    spec = GridSpec(16, 32)
    target, fil = vertical_split_world(16, 32)
    cfg = TrainConfig(iterations=30, seed=2)
    donor = train_single(fil, spec, ReferencePointSet(()), (1, -1), QUIET, cfg)
    resumed = train_single(
        fil, spec, ReferencePointSet(()), (1, -1), QUIET,
        TrainConfig(iterations=0, seed=9, warm_start=donor.params),
    )
    assert np.array_equal(resumed.params.flat, donor.params.flat)
    assert np.array_equal(
        predict_map(resumed.params, spec).data, predict_map(donor.params, spec).data
    )


def test_warm_start_is_a_copy():
    spec = GridSpec(8, 16)
    mask = FilamentMask(np.zeros((8, 16), dtype=bool))
    donor = train_single(mask, spec, ReferencePointSet(()), (1, -1), QUIET,
                         TrainConfig(iterations=5, seed=0))
    before = donor.params.flat.copy()
    train_single(mask, spec, ReferencePointSet(()), (1, -1),
                 LossWeights(), TrainConfig(iterations=5, seed=0, warm_start=donor.params))
    assert np.array_equal(donor.params.flat, before)


def test_plateau_stop_halts_early():
    spec = GridSpec(8, 16)
    mask = FilamentMask(np.zeros((8, 16), dtype=bool))
    # all-zero weights: the loss is constant, so the plateau fires immediately
    cfg = TrainConfig(
        iterations=2000, seed=0, weight_decay=0.0, record_every=50,
        plateau_stop=True, plateau_window=100, plateau_rel_tol=1e-4,
    )
    model = train_single(mask, spec, ReferencePointSet(()), (1, -1),
                         LossWeights(0, 0, 0, 0, 0, 0), cfg)
    assert model.history[-1][0] < 2000


def test_stratified_estimator_is_unbiased():
    rng = np.random.default_rng(0)
    height, width = 32, 64
    spec = GridSpec(height, width)
    target, fil = vertical_split_world(height, width)
    refs = reference_grid(spec, 16, target)
    full = build_partition(fil, spec, refs, (1, -1))
    n_total = spec.n_pixels
    # keep the field mean well away from zero: |mean| is the one term whose
    # absolute value would otherwise add a Jensen gap at the noise scale
    f = rng.uniform(-0.4, 0.9, n_total)
    full_terms, _ = evaluate(f, None, full, QUIET)

    batch = 256
    quotas = {
        "fil": _stratum_quota(batch, full.pop_fil, n_total),
        "nonfil": _stratum_quota(batch, full.pop_nonfil, n_total),
        "north": _stratum_quota(batch, full.pop_north, n_total),
        "south": _stratum_quota(batch, full.pop_south, n_total),
    }
    n_ref = len(full.ref_idx)
    draws = {"t1": [], "t2": [], "t3": [], "t4": [], "tref": []}
    for _ in range(1000):
        rows = np.concatenate([
            rng.choice(full.fil_idx, quotas["fil"], replace=False),
            rng.choice(full.nonfil_idx, quotas["nonfil"], replace=False),
            rng.choice(full.north_idx, quotas["north"], replace=False),
            rng.choice(full.south_idx, quotas["south"], replace=False),
            full.ref_idx,
        ])
        edges = np.cumsum([0, quotas["fil"], quotas["nonfil"], quotas["north"], quotas["south"], n_ref])
        part = PixelPartition(
            fil_idx=np.arange(edges[0], edges[1]),
            nonfil_idx=np.arange(edges[1], edges[2]),
            north_idx=np.arange(edges[2], edges[3]),
            south_idx=np.arange(edges[3], edges[4]),
            pole_north=full.pole_north,
            pole_south=full.pole_south,
            ref_idx=np.arange(edges[4], edges[5]),
            ref_pol=full.ref_pol,
            pop_fil=full.pop_fil,
            pop_nonfil=full.pop_nonfil,
            pop_north=full.pop_north,
            pop_south=full.pop_south,
        )
        b, _ = evaluate(f[rows], None, part, QUIET)
        for key in draws:
            draws[key].append(getattr(b, key if key != "tref" else "tref"))
    for key, truth in [("t1", full_terms.t1), ("t2", full_terms.t2),
                       ("t3", full_terms.t3), ("t4", full_terms.t4),
                       ("tref", full_terms.tref)]:
        samples = np.asarray(draws[key])
        se = samples.std(ddof=1) / np.sqrt(len(samples))
        assert abs(samples.mean() - truth) <= max(3 * se, 1e-12), key


def test_full_batch_and_oversized_batch_agree():
    spec = GridSpec(16, 32)
    target, fil = vertical_split_world(16, 32)
    cfg_full = TrainConfig(iterations=40, seed=7, batch_size=0)
    cfg_big = TrainConfig(iterations=40, seed=7, batch_size=10_000)
    a = train_single(fil, spec, ReferencePointSet(()), (1, 1), QUIET, cfg_full)
    b = train_single(fil, spec, ReferencePointSet(()), (1, 1), QUIET, cfg_big)
    assert np.array_equal(a.params.flat, b.params.flat)


def test_predict_map_zero_params():
    from pilrecon.net import MlpParams, MlpSpec

    spec = GridSpec(8, 16)
    cmap = predict_map(MlpParams(MlpSpec(), np.zeros(823)), spec)
    assert np.all(cmap.data == 0)
    assert cmap.data.shape == (8, 16)


def test_export_history(tmp_path):
    spec = GridSpec(8, 16)
    mask = FilamentMask(np.zeros((8, 16), dtype=bool))
    model = train_single(mask, spec, ReferencePointSet(()), (1, -1), QUIET,
                         TrainConfig(iterations=10, record_every=5))
    export_history(model, tmp_path / "history.txt")
    lines = (tmp_path / "history.txt").read_text().splitlines()
    assert lines[0].startswith("# iter")
    assert len(lines) == 1 + len(model.history)
    fields = lines[1].split()
    assert len(fields) == 8


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=-1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(dtype="float16")


def test_diverged_exception_carries_diagnostics():
    from pilrecon.loss import LossBreakdown

    b = LossBreakdown(0.1, float("nan"), 0.0, 0.0, 0.0, 0.0, float("nan"))
    assert not b.is_finite()
    exc = TrainingDiverged(123, b)
    assert "123" in str(exc)
    assert exc.iteration == 123
