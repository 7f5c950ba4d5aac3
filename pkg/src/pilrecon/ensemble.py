"""Ensembles of independently seeded models and their aggregation.

Member k trains with seed ``base_seed XOR k``, so an ensemble is fully
reproducible and members are independent (they can train concurrently).
Two ways to collapse the member predictions into one {-1, +1} map:

* ``mean-then-binarize``  -- average the member fields per pixel, threshold
  at zero; the mean is also the aggregated confidence map;
* ``binarize-then-majority`` -- threshold each member at zero, take the
  majority vote per pixel.

Tie rules are fixed: a field value of exactly 0 binarizes to +1, and a tied
vote resolves to +1.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import net
from .geometry import GridSpec, ReferencePointSet
from .loss import LossWeights
from .rasters import ConfidenceMap, FilamentMask, PolarityMap, save_raster
from .trainer import TrainConfig, TrainedModel, predict_map, train_single

STRATEGIES = ("mean", "majority")


class EnsembleError(RuntimeError):
    def __init__(self, member: int, cause: BaseException):
        super().__init__(f"ensemble member {member} failed: {cause}")
        self.member = member


@dataclass
class EnsembleResult:
    member_maps: list[ConfidenceMap]
    mean_map: ConfidenceMap
    binarized: PolarityMap
    strategy: str


def member_seed(base_seed: int, k: int) -> int:
    return base_seed ^ k


def _train_member(args) -> TrainedModel:
    filaments, spec, refs, poles, weights, config = args
    return train_single(filaments, spec, refs, poles, weights, config)


def train_ensemble(
    filaments: FilamentMask,
    spec: GridSpec,
    refs: ReferencePointSet,
    poles: tuple[float, float],
    weights: LossWeights,
    config: TrainConfig,
    members: int,
    base_seed: int,
    jobs: int = 1,
    warm_starts: list | None = None,
    progress_cb=None,
) -> list[TrainedModel]:
    """Train ``members`` independent models; results ordered by member index.

    ``warm_starts``, when given, supplies per-member initial parameters
    (member k starts from ``warm_starts[k]`` where available).
    ``progress_cb(member, iteration, breakdown)`` reports training progress.
    """
    if members < 1:
        raise ValueError("ensemble needs at least one member")
    configs = []
    for k in range(members):
        warm = None
        if warm_starts is not None and k < len(warm_starts):
            warm = warm_starts[k]
        configs.append(replace(config, seed=member_seed(base_seed, k), warm_start=warm))

    models: list[TrainedModel | None] = [None] * members
    if jobs > 1 and members > 1:
        tasks = [(filaments, spec, refs, poles, weights, c) for c in configs]
        with ProcessPoolExecutor(max_workers=min(jobs, members)) as pool:
            futures = [pool.submit(_train_member, t) for t in tasks]
            for k, fut in enumerate(futures):
                try:
                    models[k] = fut.result()
                except Exception as exc:
                    raise EnsembleError(k, exc) from exc
    else:
        for k, c in enumerate(configs):
            cb = None
            if progress_cb is not None:
                cb = (lambda kk: lambda it, b: progress_cb(kk, it, b))(k)
            try:
                models[k] = train_single(filaments, spec, refs, poles, weights, c, progress_cb=cb)
            except Exception as exc:
                raise EnsembleError(k, exc) from exc
    return models


def member_maps(models: list[TrainedModel], spec: GridSpec) -> list[ConfidenceMap]:
    return [predict_map(m.params, spec) for m in models]


def _stack(maps: list[ConfidenceMap]) -> np.ndarray:
    if not maps:
        raise ValueError("need at least one member map")
    shape = maps[0].data.shape
    for i, m in enumerate(maps):
        if m.data.shape != shape:
            raise ValueError(f"member {i} shape {m.data.shape} differs from {shape}")
    return np.stack([m.data for m in maps])


def aggregate_mean(maps: list[ConfidenceMap]) -> tuple[ConfidenceMap, PolarityMap]:
    """Per-pixel mean field and its zero-threshold binarization."""
    stack = _stack(maps)
    mean = stack.mean(axis=0)
    binarized = np.where(mean >= 0.0, 1, -1).astype(np.int8)
    return ConfidenceMap(mean), PolarityMap(binarized)


def aggregate_majority(maps: list[ConfidenceMap]) -> PolarityMap:
    """Per-member zero-threshold signs, then per-pixel majority vote."""
    stack = _stack(maps)
    votes = np.where(stack >= 0.0, 1, -1).sum(axis=0)
    return PolarityMap(np.where(votes >= 0, 1, -1).astype(np.int8))


def aggregate(maps: list[ConfidenceMap], strategy: str) -> EnsembleResult:
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    mean_map, mean_binarized = aggregate_mean(maps)
    if strategy == "mean":
        binarized = mean_binarized
    else:
        binarized = aggregate_majority(maps)
    return EnsembleResult(maps, mean_map, binarized, strategy)


def config_hash(config: TrainConfig, extra: dict | None = None) -> str:
    """Stable hash of a training configuration (warm start hashed by value)."""
    payload = {k: v for k, v in vars(config).items() if k != "warm_start"}
    payload["layer_sizes"] = list(config.layer_sizes)
    if config.warm_start is not None:
        payload["warm_start_sha"] = hashlib.sha256(
            config.warm_start.flat.astype("<f8").tobytes()
        ).hexdigest()
    if extra:
        payload.update(extra)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_ensemble(
    outdir,
    models: list[TrainedModel],
    result: EnsembleResult,
    base_seed: int,
    config: TrainConfig,
) -> None:
    """member_XXX.params / member_XXX.conf.pgm / mean.conf.pgm / binarized.pgm / manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for k, (model, cmap) in enumerate(zip(models, result.member_maps)):
        net.save_params(model.params, outdir / f"member_{k:03d}.params")
        save_raster(cmap, outdir / f"member_{k:03d}.conf.pgm")
    save_raster(result.mean_map, outdir / "mean.conf.pgm")
    save_raster(result.binarized, outdir / "binarized.pgm")
    lines = [
        f"members {len(models)}",
        f"base_seed {base_seed}",
        f"strategy {result.strategy}",
        f"config_hash {config_hash(config)}",
    ]
    lines += [f"seed_{k:03d} {member_seed(base_seed, k)}" for k in range(len(models))]
    manifest = outdir / "manifest"
    tmp = manifest.with_name("manifest.tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(manifest)
