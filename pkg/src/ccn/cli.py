"""
Command-line entry point.

    ccn synth     --users 100 --seed 42 --out-dir runs/a
    ccn train     --data runs/a/dataset.tsv --variant ccn --out-dir runs/a
    ccn eval      --checkpoint runs/a/model.ckpt --data runs/a/dataset.tsv
    ccn score     --checkpoint runs/a/model.ckpt < record.tsv
    ccn ablate    --seeds 1,2,3,4,5 --out-dir runs/ablation
    ccn gradcheck --out-dir runs/check

Every subcommand accepts --config, --config-dir, --preset,
--set section.key=value, --log-level and --out-dir. Flags override the config file. Exit codes:
0 success, 1 usage error, 2 data or validation error, 3 numeric failure.
"""

import argparse
import hashlib
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

from dotenv import load_dotenv

from .config import CCNConfig, get_config_loader, parse_override
from .data.dataset_io import parse_dataset, parse_score_record, split_pages, write_dataset
from .data.synth import generate_dataset, same_page_label_correlation
from .errors import CCNError, ConfigError, NumericError, UsageError
from .features.embedding import FeatureSchema
from .models.records import ImpressionPage
from .models.variant import ModelVariant
from .network.checkpoint import load_checkpoint, save_checkpoint
from .network.ctr_model import CCNModel, predict_batch
from .training.ablation import ablation_direction, run_ablation
from .training.gradcheck import run_gradcheck
from .training.trainer import degree_separation, evaluate, train_model

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.tsv"
CHECKPOINT_FILE = "model.ckpt"
METRICS_FILE = "metrics.ndtxt"
ABLATION_FILE = "ablation.tsv"
GRADCHECK_FILE = "gradcheck.txt"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


# ==============================================================================
# PARSER
# ==============================================================================

class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _csv(kind):
    def parse(text: str) -> List[Any]:
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e))
    return parse


def _variant(text: str) -> ModelVariant:
    try:
        return ModelVariant(text)
    except ValueError:
        choices = ", ".join(v.value for v in ModelVariant)
        raise argparse.ArgumentTypeError(f"unknown variant '{text}' (choose from {choices})")


# flag dest -> dotted config key
FLAG_KEYS: Dict[str, Dict[str, str]] = {
    "synth": {
        "seed": "world.seed",
        "users": "world.num_users",
        "items": "world.num_items",
        "categories": "world.num_categories",
        "sellers": "world.num_sellers",
        "pages_per_user": "world.pages_per_user",
        "min_exposures": "world.min_exposures",
        "max_exposures": "world.max_exposures",
        "alpha": "world.alpha",
        "noise": "world.noise",
        "workers": "world.workers",
    },
    "train": {
        "seed": "train.seed",
        "epochs": "train.epochs",
        "variant": "train.variant",
        "test_fraction": "train.test_fraction",
        "lam": "hyper.lambda",
        "batch_size": "hyper.batch_size",
        "learning_rate": "hyper.learning_rate",
    },
    "ablate": {
        "epochs": "train.epochs",
        "variants": "ablation.variants",
        "seeds": "ablation.seeds",
        "lambdas": "ablation.lambdas",
    },
    "gradcheck": {
        "batches": "gradcheck.batches",
        "seed": "gradcheck.seed",
        "tolerance": "gradcheck.tolerance",
    },
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="Config file (default <config-dir>/ccn.yaml)")
    common.add_argument("--config-dir", default=None, help="Config directory (env CCN_CONFIG_DIR)")
    common.add_argument("--preset", help="Preset under <config-dir>/presets, merged under the file")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="Override any config value")
    common.add_argument("--log-level", choices=LOG_LEVELS,
                        help="Log level (env CCN_LOG_LEVEL)")
    common.add_argument("--out-dir", default=".", help="Directory for output files")

    parser = _Parser(prog="ccn", description="Collaborative contrastive CTR model")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    synth = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--users", type=int)
    synth.add_argument("--items", type=int)
    synth.add_argument("--categories", type=int)
    synth.add_argument("--sellers", type=int)
    synth.add_argument("--pages-per-user", type=int)
    synth.add_argument("--min-exposures", type=int)
    synth.add_argument("--max-exposures", type=int)
    synth.add_argument("--alpha", type=float)
    synth.add_argument("--noise", type=float)
    synth.add_argument("--workers", type=int)

    train = sub.add_parser("train", parents=[common], help="Train a model")
    train.add_argument("--data", help="Training dataset (default <out-dir>/dataset.tsv)")
    train.add_argument("--test", help="Separate test dataset (default: temporal split of --data)")
    train.add_argument("--variant", type=_variant)
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--test-fraction", type=float)
    train.add_argument("--lambda", dest="lam", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--init-only", action="store_true", help="Write the untrained checkpoint")

    ev = sub.add_parser("eval", parents=[common], help="AUC of a checkpoint on a dataset")
    ev.add_argument("--checkpoint", help="Checkpoint (default <out-dir>/model.ckpt)")
    ev.add_argument("--data", required=True)

    score = sub.add_parser("score", parents=[common], help="Score records read from stdin")
    score.add_argument("--checkpoint", help="Checkpoint (default <out-dir>/model.ckpt)")

    ablate = sub.add_parser("ablate", parents=[common], help="Run the variant grid")
    ablate.add_argument("--data", help="Dataset (default: synthesize from the world section)")
    ablate.add_argument("--variants", type=_csv(_variant))
    ablate.add_argument("--seeds", type=_csv(int))
    ablate.add_argument("--lambdas", type=_csv(float))
    ablate.add_argument("--epochs", type=int)

    check = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    check.add_argument("--batches", type=int)
    check.add_argument("--seed", type=int)
    check.add_argument("--tolerance", type=float)
    return parser


# ==============================================================================
# CONFIG AND LOGGING
# ==============================================================================

def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    merged: Dict[str, Any] = {}
    for dest, dotted in FLAG_KEYS.get(args.command, {}).items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if isinstance(value, ModelVariant):
            value = value.value
        elif isinstance(value, list):
            value = [v.value if isinstance(v, ModelVariant) else v for v in value]
        section, key = dotted.split(".")
        merged.setdefault(section, {})[key] = value
    return merged


def load_cli_config(args: argparse.Namespace) -> CCNConfig:
    config_dir = args.config_dir or os.environ.get("CCN_CONFIG_DIR", "./config")
    overrides = [parse_override(text) for text in args.overrides]
    if args.preset:
        overrides.insert(0, {"preset": args.preset})
    flags = _flag_overrides(args)
    if flags:
        overrides.append(flags)
    loader = get_config_loader(config_dir)
    return loader.load_config(args.config, overrides=overrides, use_cache=False)


def configure_logging(level: str) -> None:
    level = level.upper()
    if level not in LOG_LEVELS:
        raise UsageError(f"unknown log level '{level}' (choose from {', '.join(LOG_LEVELS)})")
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger().setLevel(level)


# ==============================================================================
# SUBCOMMANDS
# ==============================================================================

def _schema(config: CCNConfig) -> FeatureSchema:
    return FeatureSchema.from_config(config.features, config.hyper)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _load_pages(path: Path, config: CCNConfig) -> List[ImpressionPage]:
    return parse_dataset(path, profile_fields=config.features.profile_fields)


def _splits(
    args: argparse.Namespace, config: CCNConfig, data: Path
) -> Tuple[List[ImpressionPage], List[ImpressionPage]]:
    pages = _load_pages(data, config)
    if args.test:
        test = Path(args.test)
        if test.resolve() == data.resolve():
            raise ConfigError("train and test datasets must be different files")
        return pages, _load_pages(test, config)
    return split_pages(pages, config.train.test_fraction)


def cmd_synth(args, config: CCNConfig, out_dir: Path, stdout: TextIO) -> int:
    world = config.world
    if world.profile_buckets != config.features.profile_buckets:
        logger.warning("world.profile_buckets differs from features.profile_buckets")
    pages, _ = generate_dataset(world, l_short=config.hyper.l_short, l_long=config.hyper.l_long)
    path = write_dataset(pages, out_dir / DATASET_FILE)
    correlation = same_page_label_correlation(pages, seed=world.seed)
    logger.info(
        f"Same-page label correlation {correlation.within_page:.4f} "
        f"(shuffled {correlation.shuffled:.4f})"
    )
    print(path, file=stdout)
    return 0


def cmd_train(args, config: CCNConfig, out_dir: Path, stdout: TextIO) -> int:
    train = config.train
    data = Path(args.data or train.train_path or out_dir / DATASET_FILE)
    lineage = {"init_seed": train.seed, "dataset_sha256": None}
    if data.exists():
        lineage["dataset_sha256"] = _file_digest(data)
    model = CCNModel.initialise(
        _schema(config), config.hyper, config.network, train.variant, train.seed, lineage
    )
    if args.init_only:
        path = save_checkpoint(model, out_dir / CHECKPOINT_FILE)
        print(path, file=stdout)
        return 0

    if args.test is None and train.test_path:
        args.test = train.test_path
    train_pages, test_pages = _splits(args, config, data)
    result = train_model(model, train_pages, test_pages, train, config.hyper)
    save_checkpoint(result.model, out_dir / CHECKPOINT_FILE)
    result.report.write(out_dir / METRICS_FILE, include_wall_clock=train.record_wall_clock)
    auc = result.report.final_auc
    print(f"auc\t{auc!r}" if auc is not None else "auc\t-", file=stdout)
    return 0


def _load_model(args, config: CCNConfig, out_dir: Path) -> CCNModel:
    # the active config must describe the same feature schema the checkpoint was trained on
    path = Path(args.checkpoint or out_dir / CHECKPOINT_FILE)
    return load_checkpoint(path, expected_schema=_schema(config))


def cmd_eval(args, config: CCNConfig, out_dir: Path, stdout: TextIO) -> int:
    model = _load_model(args, config, out_dir)
    pages = parse_dataset(args.data, profile_fields=len(model.schema.profile_buckets))
    auc = evaluate(model, pages)
    if model.variant.uses_collaborative:
        logger.info(f"Collaborative degree AUC {degree_separation(model, pages):.5f}")
    print(f"auc\t{auc!r}", file=stdout)
    return 0


def cmd_score(args, config: CCNConfig, out_dir: Path, stdout: TextIO, stdin: TextIO) -> int:
    model = _load_model(args, config, out_dir)
    requests = [
        parse_score_record(text, number)
        for number, text in enumerate(stdin, start=1)
        if text.strip()
    ]
    if not requests:
        raise UsageError("score expects at least one record on standard input")
    for probability in predict_batch(model, requests):
        print(repr(float(probability)), file=stdout)
    return 0


def cmd_ablate(args, config: CCNConfig, out_dir: Path, stdout: TextIO) -> int:
    if args.data:
        pages = _load_pages(Path(args.data), config)
    else:
        pages, _ = generate_dataset(config.world, l_short=config.hyper.l_short, l_long=config.hyper.l_long)
    train_pages, test_pages = split_pages(pages, config.train.test_fraction)
    table = run_ablation(
        variants=config.ablation.variants,
        seeds=config.ablation.seeds,
        train_pages=train_pages,
        test_pages=test_pages,
        schema=_schema(config),
        hyper=config.hyper,
        network=config.network,
        train=config.train,
        lambdas=config.ablation.lambdas,
    )
    table.write(out_dir / ABLATION_FILE)
    verdicts = ablation_direction(table)
    if verdicts and not any(v.passed for v in verdicts):
        logger.warning(
            "CCN does not beat TAN and every single-loss ablation at any lambda in the sweep"
        )
    stdout.write(table.to_tsv())
    return 0


def cmd_gradcheck(args, config: CCNConfig, out_dir: Path, stdout: TextIO) -> int:
    report = run_gradcheck(config.gradcheck)
    report.write(out_dir / GRADCHECK_FILE)
    print(f"max_rel_error\t{report.max_rel_error:.6e}", file=stdout)
    if not report.passed:
        raise NumericError(
            f"gradient check failed: max relative error {report.max_rel_error:.3e} "
            f"(tolerance {report.tolerance:g}, non-finite={report.non_finite})"
        )
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


# ==============================================================================
# ENTRY POINTS
# ==============================================================================

def run_cli(
    argv: Optional[Sequence[str]] = None,
    stdin: Optional[TextIO] = None,
    stdout: Optional[TextIO] = None,
) -> int:
    """Run one subcommand and return its exit code."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        config = load_cli_config(args)
        configure_logging(args.log_level or os.environ.get("CCN_LOG_LEVEL") or config.logging.level)
        out_dir = Path(args.out_dir)
        if args.command == "score":
            return cmd_score(args, config, out_dir, stdout, stdin)
        return COMMANDS[args.command](args, config, out_dir, stdout)
    except CCNError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


def main() -> None:
    load_dotenv()
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
