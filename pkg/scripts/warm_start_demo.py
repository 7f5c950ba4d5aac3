#!/usr/bin/env python3
"""Warm-start refinement timing on one synthetic session.

Trains a model cold, perturbs the reference set (as an interactive user
would), then compares cold restart vs warm start to the plateau criterion.
Prints iterations-to-plateau and final losses for both.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pilrecon.geometry import GridSpec, ReferencePointSet, reference_grid
from pilrecon.loss import LossWeights
from pilrecon.synth import SynthSpec, generate
from pilrecon.trainer import TrainConfig, train_single


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--height", type=int, default=64)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=6000)
    args = ap.parse_args()

    target, _, filaments = generate(SynthSpec(args.height, args.width, seed=args.seed))
    spec = GridSpec(args.height, args.width)
    weights = LossWeights(pole_prior=0.0)
    base_refs = reference_grid(spec, 16, target)

    plateau = dict(plateau_stop=True, plateau_window=1000, plateau_rel_tol=1e-4,
                   record_every=100, dtype="float32")
    cold_cfg = TrainConfig(iterations=args.iterations, seed=7, **plateau)
    first = train_single(filaments, spec, base_refs, (1, -1), weights, cold_cfg)
    print(f"initial fit:   stopped at iteration {first.history[-1][0]}, "
          f"total {first.final_breakdown.total:+.4f}")

    # the user adds four more points where the field looked uncertain
    extra = reference_grid(spec, 32, target).points[:4]
    refined = ReferencePointSet(tuple(dict.fromkeys(base_refs.points + extra)), "user")

    cold = train_single(filaments, spec, refined, (1, -1), weights,
                        TrainConfig(iterations=args.iterations, seed=8, **plateau))
    warm = train_single(filaments, spec, refined, (1, -1), weights,
                        TrainConfig(iterations=args.iterations, seed=8,
                                    warm_start=first.params, **plateau))
    print(f"cold refine:   stopped at iteration {cold.history[-1][0]}, "
          f"total {cold.final_breakdown.total:+.4f}")
    print(f"warm refine:   stopped at iteration {warm.history[-1][0]}, "
          f"total {warm.final_breakdown.total:+.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
