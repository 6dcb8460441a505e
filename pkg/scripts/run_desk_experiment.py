"""Run the full desk-scale protocol and leave every artifact under one
directory: corpus files, pretrained encoder, per-formalization sweep records
and checkpoints, and the report table/CSV/plot.

Example:
    python scripts/run_desk_experiment.py --out runs/desk --trials 12
"""

from __future__ import annotations

import argparse
import sys

from winoforms.experiment import DESK_SPACE, run_desk_experiment
from winoforms.sweep import SearchSpace


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--schemas", type=int, default=900)
    parser.add_argument("--trials", type=int, default=12,
                        help="search trials per formalization")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel trial processes")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pretrain-epochs", type=int, default=25)
    parser.add_argument("--pretrain-lr", type=float, default=1e-3)
    parser.add_argument("--pretrain-batch-size", type=int, default=16)
    parser.add_argument("--ensemble-k", type=int, default=5)
    parser.add_argument("--lrs", default=None,
                        help="comma-separated learning-rate grid override")
    parser.add_argument("--epoch-limits", default=None,
                        help="comma-separated epoch-limit grid override")
    parser.add_argument("--batch-sizes", default=None,
                        help="comma-separated batch-size grid override")
    return parser.parse_args(argv)


def build_space(args: argparse.Namespace) -> SearchSpace:
    if args.lrs is None and args.epoch_limits is None and args.batch_sizes is None:
        return DESK_SPACE
    lrs = (tuple(float(x) for x in args.lrs.split(","))
           if args.lrs else DESK_SPACE.learning_rates)
    epochs = (tuple(int(x) for x in args.epoch_limits.split(","))
              if args.epoch_limits else DESK_SPACE.epoch_limits)
    batches = (tuple(int(x) for x in args.batch_sizes.split(","))
               if args.batch_sizes else DESK_SPACE.batch_sizes)
    return SearchSpace(learning_rates=lrs, epoch_limits=epochs,
                       batch_sizes=batches)


def main(argv=None) -> int:
    args = parse_args(argv)
    summary = run_desk_experiment(
        args.out, n_schemas=args.schemas, trials=args.trials,
        workers=args.workers, master_seed=args.seed,
        pretrain_epochs=args.pretrain_epochs, pretrain_lr=args.pretrain_lr,
        pretrain_batch=args.pretrain_batch_size, space=build_space(args),
        ensemble_k=args.ensemble_k,
        progress=lambda msg: print(msg, flush=True))

    print()
    print(f"{'formalization':<18}{'median':>8}{'p75':>8}{'ensemble test':>15}")
    for kind, info in summary["per_kind"].items():
        stats = info["stats"]
        print(f"{kind:<18}{stats.median:>8.3f}{stats.p75:>8.3f}"
              f"{info['ensemble_test_acc']:>15.3f}")
    print(f"\nartifacts under {summary['out_dir']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
