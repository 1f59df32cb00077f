import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from cflab.cli.parser import build_parser, parse_gamma_list, parse_int_list
from cflab.core.config import (
    DatasetConfig,
    ExperimentConfig,
    build_experiment_config,
    load_config,
    output_root,
    parse_override,
    resolve_output_dir,
)
from cflab.core.errors import CFLabError, ConfigError, DataFormatError, EmptyDatasetError
from cflab.core.logging_config import log_run_start, log_run_stop, setup_logging
from cflab.data.dataset import InteractionDataset, ingest, kcore_filter, load_dataset, save_dataset, split
from cflab.data.statistics import compare_to_reference, dataset_stats, suggest_gamma_ratio
from cflab.data.synthetic import generate_synthetic
from cflab.evaluation.metrics import Evaluator
from cflab.evaluation.report import MetricsReport, compare_reports, margin_popularity_profile
from cflab.models.checkpoint import save_state
from cflab.relations.checks import run_relations, write_relations
from cflab.training.trainer import Trainer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


def write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _parse_split(text: str) -> tuple[int, int, int]:
    parts = parse_int_list(text)
    if len(parts) != 3:
        raise ConfigError(f"--split needs three integers train,valid,test, got '{text}'")
    return tuple(parts)


def prepare_dataset(ds: InteractionDataset, k: int, ratio, seed: int) -> InteractionDataset:
    """k-core then split; an emptied dataset is returned (and warned about) rather than rejected."""
    ds = kcore_filter(ds, k)
    if len(ds) == 0:
        logger.warning(f"No interactions left after {k}-core filtering")
    return split(ds, tuple(ratio), seed)


def load_experiment_dataset(config: DatasetConfig) -> InteractionDataset:
    """A prepared .npz is used as is; raw TSV or synthetic sources are prepared on the fly."""
    if config.path:
        if str(config.path).endswith(".npz"):
            return load_dataset(config.path)
        return prepare_dataset(ingest(config.path), config.k_core, config.split_ratio, config.split_seed)
    if config.synthetic:
        raw = generate_synthetic(config.synthetic, config.split_seed)
        return prepare_dataset(raw, config.k_core, config.split_ratio, config.split_seed)
    raise ConfigError("No dataset configured: pass --data or set dataset.path / dataset.synthetic")


def experiment_from_args(args) -> ExperimentConfig:
    raw = load_config(args.config) if args.config else {}
    overrides = {
        "dataset.path": args.data,
        "loss.kind": args.loss,
        "train.encoder": args.encoder,
        "seeds": parse_int_list(args.seeds) if args.seeds else None,
        "train.max_epochs": args.epochs,
        "train.record_timing": args.timing,
    }
    for pair in args.set:
        path, value = parse_override(pair)
        overrides[".".join(path)] = value
    return build_experiment_config(raw, overrides)


def _apply_logging(config: ExperimentConfig, args):
    """The config's logging section applies unless --log-level was given."""
    if not args.log_level:
        logging.getLogger().setLevel(config.logging.level.upper())


def _learns_margins(config: ExperimentConfig) -> bool:
    loss = config.loss
    return loss.kind == "SML" or (loss.kind in ("MAWU", "BC") and loss.margin_mode == "learned")


def run_seed(ds: InteractionDataset, config: ExperimentConfig, seed: int, out_dir: Path,
             resume: bool = False) -> tuple[MetricsReport, dict]:
    trainer = Trainer(
        ds,
        config.train_config(seed),
        checkpoint_path=out_dir / f"checkpoint_seed{seed}.npz",
        history_path=out_dir / f"history_seed{seed}.jsonl",
    )
    result = trainer.train(resume=resume)
    if result.diverged:
        logger.warning(f"Seed {seed} diverged; reporting its last finite best state")
    save_state(out_dir / f"best_state_seed{seed}.npz", result.best_state,
               {"seed": seed, "loss": config.loss.kind, "best_epoch": result.best_epoch})

    report = Evaluator(ds, "test", batch_users=config.train.eval_batch_users).evaluate(
        result.best_state, trainer.encoder, seed
    )
    payload = report.to_dict()
    payload["training"] = result.summary()
    if _learns_margins(config):
        profile = margin_popularity_profile(result.best_state, ds, out_dir / f"margins_seed{seed}.csv")
        payload["margin_spearman"] = profile.to_dict()
    write_json(out_dir / f"report_seed{seed}.json", payload)
    return report, result.summary()


def cmd_prepare(args) -> int:
    out_dir = resolve_output_dir("prepared", args.output_dir)
    if args.input:
        raw = ingest(args.input)
        source = args.input
    else:
        raw = generate_synthetic(args.synthetic, args.seed)
        source = args.synthetic

    ratio = _parse_split(args.split)
    ds = prepare_dataset(raw, args.k, ratio, args.seed)
    ds.meta.update({"source": source, "k_core": args.k, "split_ratio": list(ratio), "split_seed": args.seed})
    save_dataset(ds, out_dir / "dataset.npz")
    stats = dataset_stats(ds)
    stats["suggested_gamma_ratio"] = suggest_gamma_ratio(stats)
    reference = compare_to_reference(stats, Path(source).stem if args.input else source)
    if reference:
        stats["reference"] = reference
    write_json(out_dir / "stats.json", stats)

    print("\n" + "=" * 50)
    print("           PREPARED DATASET")
    print("=" * 50)
    print(f"Source:        {source}")
    print(f"Users:         {stats['num_users']}")
    print(f"Items:         {stats['num_items']}")
    print(f"Interactions:  {stats['num_interactions']}")
    print(f"Density:       {stats['density']:.5f}")
    print(f"Gini ratio:    {stats['gini_ratio']}")
    print(f"Written to:    {out_dir}")
    print("=" * 50 + "\n")
    return EXIT_OK


def cmd_train(args) -> int:
    config = experiment_from_args(args)
    _apply_logging(config, args)
    out_dir = resolve_output_dir(config.output_dir, args.output_dir)
    ds = load_experiment_dataset(config.dataset)
    write_json(out_dir / "config.json", config.model_dump(mode="json"))

    reports, diverged = [], {}
    for seed in config.seeds:
        logger.info(f"--- {config.loss.kind}-{config.train.encoder} seed {seed} ---")
        report, summary = run_seed(ds, config, seed, out_dir, resume=getattr(args, "resume", False))
        reports.append(report)
        diverged[str(seed)] = summary["diverged"]

    mean = MetricsReport.mean(reports)
    write_json(out_dir / "report.json", {
        "loss": config.loss.kind,
        "encoder": config.train.encoder,
        "mean": mean.to_dict(),
        "diverged": diverged,
    })
    print(f"{config.loss.kind}-{config.train.encoder}: test NDCG@20={mean['ndcg@20']:.5f} "
          f"Recall@20={mean['recall@20']:.5f} over seeds {config.seeds} -> {out_dir}")
    return EXIT_OK


def _grid_cell(task: tuple) -> dict:
    ds, config_dict, gamma1, gamma2 = task
    config = ExperimentConfig.model_validate(config_dict)
    config = config.model_copy(update={"loss": config.loss.model_copy(update={"gamma1": gamma1, "gamma2": gamma2})})
    try:
        scores = []
        for seed in config.seeds:
            trainer = Trainer(ds, config.train_config(seed))
            result = trainer.train()
            report = trainer.evaluator.evaluate(result.best_state, trainer.encoder)
            scores.append(report.metrics["ndcg@20"])
        return {"gamma1": gamma1, "gamma2": gamma2, "ndcg20": float(np.mean(scores)), "error": None}
    except Exception as e:
        logger.error(f"Grid cell gamma1={gamma1} gamma2={gamma2} failed: {e}")
        return {"gamma1": gamma1, "gamma2": gamma2, "ndcg20": None, "error": f"{type(e).__name__}: {e}"}


def best_cell(rows: list[dict]) -> Optional[dict]:
    """Highest ndcg20; ties go to the lexicographically smallest (gamma1, gamma2)."""
    done = [r for r in rows if r["ndcg20"] is not None]
    if not done:
        return None
    return min(done, key=lambda r: (-r["ndcg20"], r["gamma1"], r["gamma2"]))


def cmd_grid(args) -> int:
    gamma1_list = parse_gamma_list(args.gamma1)
    gamma2_list = parse_gamma_list(args.gamma2)
    config = experiment_from_args(args)
    _apply_logging(config, args)
    if config.loss.kind != "MAWU":
        raise ConfigError(f"Grid search tunes MAWU's gamma1/gamma2, got loss {config.loss.kind}")
    if args.workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {args.workers}")

    out_dir = resolve_output_dir(config.output_dir, args.output_dir)
    ds = load_experiment_dataset(config.dataset)
    config_dict = config.model_dump(mode="json")
    write_json(out_dir / "config.json", config_dict)

    tasks = [(ds, config_dict, g1, g2) for g1 in gamma1_list for g2 in gamma2_list]
    logger.info(f"Grid: {len(tasks)} cell(s), {args.workers} worker(s)")
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_grid_cell, tasks))
    else:
        rows = [_grid_cell(task) for task in tasks]

    pd.DataFrame(rows, columns=["gamma1", "gamma2", "ndcg20"]).to_csv(
        out_dir / "grid.csv", index=False, float_format="%.10g"
    )
    best = best_cell(rows)
    stats = dataset_stats(ds)
    summary = {
        "best": best and {k: best[k] for k in ("gamma1", "gamma2", "ndcg20")},
        "best_gamma_ratio": best["gamma1"] / best["gamma2"] if best else None,
        "failed": [{k: r[k] for k in ("gamma1", "gamma2", "error")} for r in rows if r["error"]],
        "gini_ratio": stats["gini_ratio"],
    }
    write_json(out_dir / "grid_summary.json", summary)

    if best:
        print(f"Best cell: gamma1={best['gamma1']} gamma2={best['gamma2']} NDCG@20={best['ndcg20']:.5f} "
              f"(gamma1/gamma2={summary['best_gamma_ratio']:.3f}, Gini ratio={stats['gini_ratio']})")
    else:
        print("Every grid cell failed")
    return EXIT_OK


def cmd_verify(args) -> int:
    only = [name.strip() for item in args.only for name in item.split(",") if name.strip()]
    out_dir = resolve_output_dir("verify", args.output_dir)
    reports = run_relations(only or None, trials=args.trials, seed=args.seed)
    write_relations(reports, out_dir)

    print("\n" + "=" * 60)
    print("           LOSS RELATION CHECKS")
    print("=" * 60)
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(f"  {report.relation:16} {status}  max disc {max(report.max_disc):.3e}  ({report.criterion})")
    print("=" * 60 + "\n")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def _load_run(run_dir: str) -> tuple[str, MetricsReport]:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise FileNotFoundError(f"No report.json in {run_dir}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    label = f"{data.get('loss', '?')}-{data.get('encoder', '?')}"
    return label, MetricsReport.from_dict(data["mean"])


def cmd_report(args) -> int:
    runs = [(run_dir, *_load_run(run_dir)) for run_dir in args.runs]
    base_dir, base_label, base = runs[0]
    metrics = ("ndcg@20", "recall@20")

    print("\n" + "=" * 78)
    print(f"{'run':28}" + "".join(f"{m:>12}" for m in metrics) + f"{'Pop':>12}{'Unpop':>12}{'gain':>12}")
    print("-" * 78)
    comparisons = []
    for run_dir, label, report in runs:
        comparison = compare_reports(base, report, args.metric)
        comparison.update({"run": run_dir, "label": label, "base_run": base_dir})
        comparison["metrics"] = {m: report.metrics.get(m) for m in metrics}
        comparisons.append(comparison)
        gain = comparison["relative_gain"]
        pop = report.groups.get("Pop", {}).get(args.metric, float("nan"))
        unpop = report.groups.get("Unpop", {}).get(args.metric, float("nan"))
        print(f"{label[:28]:28}" + "".join(f"{report.metrics.get(m, float('nan')):12.5f}" for m in metrics)
              + f"{pop:12.5f}{unpop:12.5f}" + (f"{gain:+12.2%}" if gain is not None else f"{'n/a':>12}"))
    print("=" * 78 + "\n")

    out_dir = resolve_output_dir("comparison", args.output_dir)
    write_json(out_dir / "comparison.json", {"metric": args.metric, "base": base_label, "runs": comparisons})
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "grid": cmd_grid,
    "verify": cmd_verify,
    "report": cmd_report,
}


def run(argv: Optional[list[str]] = None) -> int:
    """Parse, dispatch and map failures onto exit codes (1 usage/config, 2 data, 3 failed checks)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        setup_logging("INFO", log_dir=None)
        logger.error(str(e))
        return EXIT_USAGE

    setup_logging(args.log_level or "INFO", use_colors=True, log_dir=str(output_root() / "logs"))
    log_run_start(args.command)
    try:
        code = COMMANDS[args.command](args)
    except (DataFormatError, EmptyDatasetError, FileNotFoundError) as e:
        logger.error(f"Data error: {e}")
        code, reason = EXIT_DATA, f"Data error: {e}"
    except (ConfigError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        code, reason = EXIT_USAGE, f"Configuration error: {e}"
    except CFLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        code, reason = EXIT_USAGE, f"{type(e).__name__}: {e}"
    else:
        reason = "Completed" if code == EXIT_OK else f"Exit code {code}"
    log_run_stop(reason)
    return code
