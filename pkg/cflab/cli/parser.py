import argparse

from cflab.core.config import LOSS_KINDS
from cflab.core.errors import ConfigError

GAMMA_RANGE = (0.1, 5.0)


class LabArgumentParser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors share the CLI exit-code mapping."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def parse_int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma-separated list of integers, got '{text}'")
    if not values:
        raise ConfigError("Expected at least one value")
    return values


def parse_gamma_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"Expected a comma-separated list of numbers, got '{text}'")
    if not values:
        raise ConfigError("Expected at least one gamma value")
    low, high = GAMMA_RANGE
    outside = [v for v in values if not low <= v <= high]
    if outside:
        raise ConfigError(f"gamma values must lie in [{low}, {high}], got {outside}")
    return values


def _add_experiment_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML/JSON experiment config")
    parser.add_argument("--data", help="prepared dataset.npz or a raw TSV file")
    parser.add_argument("--loss", help=f"loss kind, one of {', '.join(LOSS_KINDS)} (DAU accepted)")
    parser.add_argument("--encoder", help="MF or LightGCN")
    parser.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    parser.add_argument("--epochs", type=int, help="max epochs")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="generic config override (repeatable)")
    parser.add_argument("--output-dir", help="output directory (overrides config and CFLAB_OUTPUT_ROOT)")
    parser.add_argument("--timing", action=argparse.BooleanOptionalAction, default=None,
                        help="record wall-clock elapsed_ms in histories (off by default)")


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(prog="cflab", description="Collaborative-filtering loss function lab")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)

    prepare = sub.add_parser("prepare", help="ingest, k-core filter and split a dataset")
    source = prepare.add_mutually_exclusive_group(required=True)
    source.add_argument("--input", help="TSV file: user<TAB>item[<TAB>timestamp]")
    source.add_argument("--synthetic", help="generator spec, e.g. zipf:1.0,users=1000,items=1500")
    prepare.add_argument("--k", type=int, default=10, help="k-core threshold")
    prepare.add_argument("--seed", type=int, default=0, help="split / generator seed")
    prepare.add_argument("--split", default="7,1,2", help="train,valid,test ratio")
    prepare.add_argument("--output-dir", help="output directory")

    train = sub.add_parser("train", help="train one loss over one or more seeds")
    _add_experiment_flags(train)
    train.add_argument("--resume", action="store_true", help="continue from per-seed checkpoints")

    grid = sub.add_parser("grid", help="gamma1 x gamma2 grid search for MAWU")
    _add_experiment_flags(grid)
    grid.add_argument("--gamma1", required=True, help="comma list within [0.1, 5]")
    grid.add_argument("--gamma2", required=True, help="comma list within [0.1, 5]")
    grid.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    verify = sub.add_parser("verify", help="run the loss relation checks")
    verify.add_argument("--only", action="append", default=[], help="relation name(s), comma-separated or repeated")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--trials", type=int, default=None,
                        help="trials per relation (default: 1000 batches for ssm_bpr, 20 for the others)")
    verify.add_argument("--output-dir", help="output directory")

    report = sub.add_parser("report", help="compare finished runs against the first one")
    report.add_argument("runs", nargs="+", help="run directories holding report.json")
    report.add_argument("--metric", default="ndcg@20")
    report.add_argument("--output-dir", help="output directory for comparison.json")

    return parser
