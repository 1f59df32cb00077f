#!/usr/bin/env python3
"""
Trains MAWU with learned margins on Zipf-skewed synthetic data and prints the
Spearman correlation between popularity and learned margin, per seed.
Run from the repo root: python -m scripts.margin_direction
"""
import argparse

from cflab.cli.commands import prepare_dataset
from cflab.core.config import LossConfig, TrainConfig
from cflab.core.logging_config import setup_logging
from cflab.data.synthetic import generate_synthetic
from cflab.evaluation.report import margin_popularity_profile
from cflab.training.trainer import Trainer


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--synthetic", default="zipf:1.2,users=1000,items=1500,interactions=100000")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--csv-prefix", default=None, help="write margins_seed<s>.csv with this prefix")
    args = parser.parse_args()

    setup_logging("WARNING", log_dir=None)
    ds = prepare_dataset(generate_synthetic(args.synthetic, 0), 10, (7, 1, 2), 0)
    loss = LossConfig(kind="MAWU", margin_mode="learned")

    print(f"{'seed':>6}{'user rho':>12}{'item rho':>12}")
    negative = True
    for seed in (int(s) for s in args.seeds.split(",")):
        config = TrainConfig(loss=loss, seed=seed, max_epochs=args.epochs, patience=args.epochs, progress=False)
        result = Trainer(ds, config).train()
        path = f"{args.csv_prefix}margins_seed{seed}.csv" if args.csv_prefix else None
        profile = margin_popularity_profile(result.best_state, ds, path)
        negative &= profile.user_spearman < 0 and profile.item_spearman < 0
        print(f"{seed:>6}{profile.user_spearman:>12.4f}{profile.item_spearman:>12.4f}")

    print(f"\nUnpopular ids end with larger margins on every seed: {'yes' if negative else 'no'}")


if __name__ == "__main__":
    main()
