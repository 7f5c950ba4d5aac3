"""Optimization loop for one field model on one synoptic map.

Full-batch by default (every pixel, every step); with ``batch_size > 0``
each step draws a stratified sample: filament, non-filament, north-band and
south-band pixels are sampled separately in proportion to their population
and reference points are always all included, so every loss term stays an
unbiased estimate of its full-batch value.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import net
from .geometry import GridSpec, ReferencePointSet, embed_all
from .loss import LossBreakdown, LossWeights, PixelPartition, build_partition, evaluate
from .net import AdamState, MlpParams, MlpSpec, Workspace
from .rasters import ConfidenceMap, FilamentMask

SAMPLER_SEED_STREAM = 0x5A11  # keeps batch sampling independent of init draws


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, breakdown: LossBreakdown):
        super().__init__(
            f"non-finite loss at iteration {iteration}: {breakdown.as_dict()}"
        )
        self.iteration = iteration
        self.breakdown = breakdown


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    learning_rate: float = 5e-3
    weight_decay: float = 1e-4
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    record_every: int = 100
    # this implementation is bit-deterministic given the seed either way;
    # the flag is the contract hook for relaxing reduction order if batch
    # evaluation is ever parallelized
    determinism: bool = True
    warm_start: MlpParams | None = None
    layer_sizes: tuple[int, ...] = net.DEFAULT_LAYER_SIZES
    dtype: str = "float64"  # float32 roughly halves the per-step cost
    decoupled_decay: bool = False
    plateau_stop: bool = False
    plateau_window: int = 2000
    plateau_rel_tol: float = 1e-4
    cos_latitude: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    @classmethod
    def interactive(cls, seed: int = 0, **overrides) -> "TrainConfig":
        """Profile for the guided workflow: seconds, not minutes, per run."""
        base = dict(
            iterations=3000,
            batch_size=8192,
            plateau_stop=True,
            dtype="float32",
            seed=seed,
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainedModel:
    params: MlpParams
    final_breakdown: LossBreakdown
    history: list[tuple[int, LossBreakdown]]
    config: TrainConfig
    wall_seconds: float = 0.0


def _stratum_quota(batch_size: int, population: int, n_total: int) -> int:
    if population == 0:
        return 0
    return min(population, max(1, round(batch_size * population / n_total)))


def train_single(
    filaments: FilamentMask,
    spec: GridSpec,
    refs: ReferencePointSet,
    poles: tuple[float, float],
    weights: LossWeights,
    config: TrainConfig,
    progress_cb=None,
) -> TrainedModel:
    """Minimize the loss over the map; returns the model plus loss history.

    ``progress_cb(iteration, breakdown)``, when given, fires at every
    recording point (and at completion).
    """
    t_start = time.perf_counter()
    dtype = np.dtype(config.dtype)
    coords = embed_all(spec, dtype=dtype)
    full_part = build_partition(filaments, spec, refs, poles, cos_latitude=config.cos_latitude)

    if config.warm_start is not None:
        params = config.warm_start.astype(dtype)
        mlp_spec = params.spec
    else:
        mlp_spec = MlpSpec(config.layer_sizes)
        params = net.init_params(mlp_spec, config.seed, dtype=dtype)
    state = AdamState.fresh(params)

    n_total = spec.n_pixels
    full_batch = config.batch_size <= 0 or config.batch_size >= n_total
    use_gradnorm = weights.gradient_norm > 0.0

    if full_batch:
        part = full_part
        rows = None
        ws = Workspace(mlp_spec, n_total, dtype)
        batch_coords = coords
    else:
        if config.cos_latitude:
            raise ValueError("cos_latitude weighting requires full-batch training")
        q_fil = _stratum_quota(config.batch_size, full_part.pop_fil, n_total)
        q_nonfil = _stratum_quota(config.batch_size, full_part.pop_nonfil, n_total)
        q_north = _stratum_quota(config.batch_size, full_part.pop_north, n_total)
        q_south = _stratum_quota(config.batch_size, full_part.pop_south, n_total)
        n_ref = len(full_part.ref_idx)
        n_rows = q_fil + q_nonfil + q_north + q_south + n_ref
        edges = np.cumsum([0, q_fil, q_nonfil, q_north, q_south, n_ref])
        part = PixelPartition(
            fil_idx=np.arange(edges[0], edges[1]),
            nonfil_idx=np.arange(edges[1], edges[2]),
            north_idx=np.arange(edges[2], edges[3]),
            south_idx=np.arange(edges[3], edges[4]),
            pole_north=full_part.pole_north,
            pole_south=full_part.pole_south,
            ref_idx=np.arange(edges[4], edges[5]),
            ref_pol=full_part.ref_pol,
            pop_fil=full_part.pop_fil,
            pop_nonfil=full_part.pop_nonfil,
            pop_north=full_part.pop_north,
            pop_south=full_part.pop_south,
        )
        rows = np.empty(n_rows, dtype=np.int64)
        rows[edges[4]:edges[5]] = full_part.ref_idx
        sampler = np.random.default_rng([SAMPLER_SEED_STREAM, config.seed])
        ws = Workspace(mlp_spec, n_rows, dtype)
        batch_coords = np.empty((n_rows, 3), dtype=dtype)

    history: list[tuple[int, LossBreakdown]] = []

    def loss_step(iteration: int) -> LossBreakdown:
        """One forward/loss/backward/update cycle; returns the breakdown."""
        if not full_batch:
            for (lo, hi), idx, quota in (
                ((edges[0], edges[1]), full_part.fil_idx, q_fil),
                ((edges[1], edges[2]), full_part.nonfil_idx, q_nonfil),
                ((edges[2], edges[3]), full_part.north_idx, q_north),
                ((edges[3], edges[4]), full_part.south_idx, q_south),
            ):
                if quota:
                    rows[lo:hi] = sampler.choice(idx, size=quota, replace=False)
            np.take(coords, rows, axis=0, out=batch_coords)
        f = ws.forward(params, batch_coords)
        grads_spatial = None
        if use_gradnorm and len(part.fil_idx):
            grads_spatial = net.spatial_gradient(params, batch_coords[part.fil_idx])
        breakdown, dldf = evaluate(f, grads_spatial, part, weights)
        if not breakdown.is_finite():
            raise TrainingDiverged(iteration, breakdown)
        grad = ws.backward(params, dldf.astype(dtype, copy=False))
        if use_gradnorm and len(part.fil_idx):
            coeff = np.full(len(part.fil_idx), -weights.gradient_norm / len(part.fil_idx), dtype=dtype)
            _, gn_grad = net.gradnorm_backward(params, batch_coords[part.fil_idx], coeff)
            grad = grad + gn_grad
        net.adam_step(
            params, grad, state,
            lr=config.learning_rate,
            weight_decay=config.weight_decay,
            decoupled=config.decoupled_decay,
        )
        return breakdown

    completed = 0
    for it in range(config.iterations):
        breakdown = loss_step(it)
        completed = it + 1
        if it % config.record_every == 0:
            history.append((it, breakdown))
            if progress_cb is not None:
                progress_cb(it, breakdown)
            if config.plateau_stop and it >= config.plateau_window:
                window_start = it - config.plateau_window
                past = next(b for i, b in history if i >= window_start)
                denom = max(abs(past.total), 1e-12)
                if (past.total - breakdown.total) / denom < config.plateau_rel_tol:
                    break

    # evaluate the final parameters (no update)
    if full_batch:
        f = ws.forward(params, batch_coords)
        grads_spatial = None
        if use_gradnorm and len(part.fil_idx):
            grads_spatial = net.spatial_gradient(params, batch_coords[part.fil_idx])
        final, _ = evaluate(f, grads_spatial, part, weights)
    else:
        f = net.forward(params, coords)
        final, _ = evaluate(f, None, full_part, weights)
    if not final.is_finite():
        raise TrainingDiverged(completed, final)
    history.append((completed, final))
    if progress_cb is not None:
        progress_cb(completed, final)

    return TrainedModel(
        params=params,
        final_breakdown=final,
        history=history,
        config=config,
        wall_seconds=time.perf_counter() - t_start,
    )


def predict_map(params: MlpParams, spec: GridSpec) -> ConfidenceMap:
    """Field values at every pixel center, as a confidence map."""
    coords = embed_all(spec, dtype=params.flat.dtype)
    values = net.forward(params, coords)
    return ConfidenceMap(values.astype(np.float64).reshape(spec.height, spec.width))


def export_history(model: TrainedModel, path) -> None:
    """Loss history as text: ``iter T1 T2 T3 T4 T5 Tref total`` per line."""
    lines = ["# iter T1 T2 T3 T4 T5 Tref total"]
    for it, b in model.history:
        lines.append(
            f"{it} {b.t1:.9g} {b.t2:.9g} {b.t3:.9g} {b.t4:.9g} {b.t5:.9g} {b.tref:.9g} {b.total:.9g}"
        )
    from pathlib import Path

    p = Path(path)
    tmp = p.with_name(p.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(p)
