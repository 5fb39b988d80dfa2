"""Command-line entry point: cobra gen|train|eval|analyze|bench."""

import argparse
import hashlib
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .analysis import cost_sweep, snr_influence_sweep, write_cost_csv, write_influence_csv
from .checkpoint import load_checkpoint
from .config import RunConfig, Variant, config_overrides, describe, load_config
from .data import Utterance, build_dataset, dataset_paths, load_dataset
from .errors import CobraError, ConfigError, DataError, InputPathError
from .evaluation import wer_columns, wer_grid, write_wer_table
from .model import CobraModel
from .training import Trainer, checkpoint_path

logger = logging.getLogger(__name__)

COMMANDS = ("gen", "train", "eval", "analyze", "bench")


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _output_dir(cfg: RunConfig) -> Path:
    out = cfg.resolved_output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputPathError(f"cannot create output directory {out}: {e}") from e
    return out


def _load_split(cfg: RunConfig, path: Path) -> List[Utterance]:
    spec, utterances = load_dataset(path)
    if spec != cfg.task:
        raise DataError(f"{path} was generated with a different task config; rerun `cobra gen`")
    return utterances


def _load_model(cfg: RunConfig, args: argparse.Namespace, out: Path) -> CobraModel:
    path = Path(args.checkpoint) if args.checkpoint else checkpoint_path(out, cfg.model.run_label)
    return load_checkpoint(path, expected=cfg.model)


def cmd_gen(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _output_dir(cfg)
    paths = build_dataset(cfg.task, cfg.train.n_train, cfg.train.n_eval, cfg.seed, out)
    for path in (paths.train, paths.eval):
        print(f"{path}  sha256={sha256_of(path)}")
    return 0


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _output_dir(cfg)
    paths = dataset_paths(out)
    trainer = Trainer(cfg, _load_split(cfg, paths.train), _load_split(cfg, paths.eval), out)
    result = trainer.run()
    print(f"{result.checkpoint}  sha256={sha256_of(result.checkpoint)}")
    print(f"{result.log}")
    return 0


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _output_dir(cfg)
    model = _load_model(cfg, args, out)
    eval_set = _load_split(cfg, dataset_paths(out).eval)
    row = wer_grid(model, eval_set, cfg.eval, cfg.task, cfg.seed)
    path = write_wer_table(out / "wer_table.csv", model.cfg.run_label, row, wer_columns(cfg.eval))
    print(path)
    return 0


def cmd_analyze(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _output_dir(cfg)
    model = _load_model(cfg, args, out)
    if model.cfg.variant != Variant.BOTTLENECK:
        raise ConfigError("influence analysis needs a bottleneck checkpoint; the audio-only model has no video stream")
    eval_set = _load_split(cfg, dataset_paths(out).eval)
    reports = snr_influence_sweep(model, eval_set, cfg.eval.snr_grid, cfg.eval.noise_types, cfg.task, cfg.seed)
    print(write_influence_csv(reports, out / "influence.csv"))
    return 0


def cmd_bench(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _output_dir(cfg)
    reports = cost_sweep(cfg.bench.f_m, cfg.bench.f_b, cfg.bench.d_model)
    print(write_cost_csv(reports, out / "cost.csv"))
    return 0


HANDLERS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cobra", description="Bottleneck-fusion audio-visual recognition at desk scale")
    parser.add_argument("command", choices=COMMANDS, help="step to run")
    parser.add_argument("--config", default=None, help="key = value config file; defaults apply when omitted")
    parser.add_argument("--checkpoint", default=None, help="checkpoint for eval/analyze (default: <out>/<run label>.ckpt)")
    parser.add_argument("--variant", choices=[v.value for v in Variant], default=None, help="override model.variant")
    parser.add_argument("--seed", type=int, default=None, help="override the run and model seeds")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    try:
        cfg = load_config(args.config, config_overrides(args.seed, args.variant))
        for key, value in describe(cfg):
            logger.debug(f"config {key} = {value}")
        return HANDLERS[args.command](cfg, args)
    except CobraError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:  # noqa: BLE001
        logger.exception(f"{args.command} failed with an internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1
