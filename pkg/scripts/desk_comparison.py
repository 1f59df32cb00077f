#!/usr/bin/env python3
"""
Desk-scale MAWU-MF vs DirectAU-MF comparison on the synthetic Zipf generator.

Prints mean test NDCG@20 over the seeds for both losses and the relative gain.
Run from the repo root: python -m scripts.desk_comparison
"""
import argparse
import time

import numpy as np

from cflab.cli.commands import prepare_dataset
from cflab.core.config import LossConfig, TrainConfig
from cflab.core.logging_config import setup_logging
from cflab.data.statistics import dataset_stats
from cflab.data.synthetic import generate_synthetic
from cflab.evaluation.metrics import Evaluator
from cflab.evaluation.report import relative_gain
from cflab.training.trainer import Trainer


BUDGET_SECONDS = 600


def run_loss(ds, loss: LossConfig, seeds, epochs: int, patience: int, lr: float) -> list[float]:
    scores = []
    for seed in seeds:
        config = TrainConfig(loss=loss, seed=seed, max_epochs=epochs, patience=patience, lr=lr,
                             record_timing=False, progress=False)
        trainer = Trainer(ds, config)
        result = trainer.train()
        report = Evaluator(ds, "test").evaluate(result.best_state, trainer.encoder, seed)
        print(f"  {loss.kind:8} seed {seed}: NDCG@20={report['ndcg@20']:.5f} "
              f"(best epoch {result.best_epoch}, {result.stopped_reason})")
        scores.append(report["ndcg@20"])
    return scores


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--synthetic", default="zipf:1.0,users=1000,items=1500,interactions=100000")
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--epochs", type=int, default=60)
    parser.add_argument("--patience", type=int, default=10)
    parser.add_argument("--lr", type=float, default=0.002)
    args = parser.parse_args()

    setup_logging("WARNING", log_dir=None)
    seeds = [int(s) for s in args.seeds.split(",")]
    ds = prepare_dataset(generate_synthetic(args.synthetic, 0), 10, (7, 1, 2), 0)
    stats = dataset_stats(ds)
    print(f"\n{'=' * 60}")
    print(f"  {args.synthetic}")
    print(f"  users={stats['num_users']} items={stats['num_items']} interactions={stats['num_interactions']}"
          f" gini_ratio={stats['gini_ratio']:.3f}")
    print(f"  MF dim=64 lr={args.lr} epochs<={args.epochs} patience={args.patience}")
    print(f"{'=' * 60}")

    started = time.perf_counter()
    # gamma1 = gamma2 = 0.5 gives MAWU the alignment/uniformity balance of DirectAU at gamma = 1.
    dau = np.mean(run_loss(ds, LossConfig(kind="DirectAU", gamma=1.0), seeds, args.epochs, args.patience, args.lr))
    mawu = np.mean(run_loss(ds, LossConfig(kind="MAWU", gamma1=0.5, gamma2=0.5, margin_mode="learned"),
                            seeds, args.epochs, args.patience, args.lr))
    elapsed = time.perf_counter() - started
    gain = relative_gain(dau, mawu)

    print(f"\nDirectAU-MF NDCG@20: {dau:.5f}")
    print(f"MAWU-MF     NDCG@20: {mawu:.5f}")
    print(f"Relative gain:       {gain:+.2%}" if gain is not None else "Relative gain:       n/a")
    print(f"MAWU >= 0.99 x DirectAU: {'yes' if mawu >= 0.99 * dau else 'no'}")
    print(f"Total time: {elapsed:.1f}s (within {BUDGET_SECONDS // 60} min: {'yes' if elapsed < BUDGET_SECONDS else 'no'})")


if __name__ == "__main__":
    main()
