"""WER over a grid of noise conditions, written as one table row per model variant."""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .config import EvalConfig, NoiseKind, SyntheticTaskSpec
from .data import SyntheticTask, Utterance, corrupt_audio, model_inputs, noise_rng
from .errors import InputPathError, UsageError
from .model import CobraModel
from .objective import corpus_wer

logger = logging.getLogger(__name__)

VARIANT_COLUMN = "variant"
CLEAN_COLUMN = "clean"


def condition_label(kind: Union[NoiseKind, str], snr_db: float) -> str:
    return f"{NoiseKind(kind).value}_{snr_db:g}"


def wer_columns(eval_cfg: EvalConfig) -> List[str]:
    """clean first, then one column per (noise type, SNR) in config order."""
    return [CLEAN_COLUMN] + [condition_label(k, s) for k in eval_cfg.noise_types for s in eval_cfg.snr_grid]


def condition_wer(
    model: CobraModel,
    utterances: Sequence[Utterance],
    eval_cfg: EvalConfig,
    kind: Optional[NoiseKind] = None,
    snr_db: Optional[float] = None,
    task: Union[SyntheticTask, SyntheticTaskSpec, None] = None,
    seed: int = 0,
) -> float:
    """Corpus WER for one condition; kind=None decodes the clean audio."""
    if not utterances:
        raise UsageError("evaluation needs at least one utterance")
    with_video = model.video is not None
    pairs = []
    for index, utt in enumerate(utterances):
        audio = utt.audio
        if kind is not None:
            audio = corrupt_audio(audio, kind, snr_db, noise_rng(seed, index, kind), task)
        hyp = model.decode(*model_inputs(audio, utt.video if with_video else None), eval_cfg)
        pairs.append((hyp.tokens, utt.transcript))
    return corpus_wer(pairs)


def wer_grid(
    model: CobraModel,
    utterances: Sequence[Utterance],
    eval_cfg: EvalConfig,
    task: Union[SyntheticTask, SyntheticTaskSpec],
    seed: int = 0,
) -> Dict[str, float]:
    model.train(False)
    task = task if isinstance(task, SyntheticTask) else SyntheticTask(task)
    row = {CLEAN_COLUMN: condition_wer(model, utterances, eval_cfg, seed=seed)}
    logger.info(f"WER clean: {100 * row[CLEAN_COLUMN]:.2f}%")
    for kind in eval_cfg.noise_types:
        for snr in eval_cfg.snr_grid:
            label = condition_label(kind, snr)
            row[label] = condition_wer(model, utterances, eval_cfg, kind, snr, task, seed)
            logger.info(f"WER {label}: {100 * row[label]:.2f}%")
    return row


def _read_rows(path: Path, header: List[str]) -> List[List[str]]:
    if not path.exists():
        return []
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != header:
        logger.warning(f"{path} has a different column layout; starting a new table")
        return []
    return rows[1:]


def write_wer_table(path: Path, variant: str, row: Dict[str, float], columns: Sequence[str]) -> Path:
    """Insert or replace the variant's row; WER is written in percent to two decimals."""
    path = Path(path)
    header = [VARIANT_COLUMN] + list(columns)
    line = [variant] + [f"{100.0 * row[c]:.2f}" for c in columns]
    try:
        rows = _read_rows(path, header)
        replaced = False
        for i, existing in enumerate(rows):
            if existing and existing[0] == variant:
                rows[i] = line
                replaced = True
        if not replaced:
            rows.append(line)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise InputPathError(f"cannot write {path}: {e}") from e
    logger.info(f"WER table saved to {path}")
    return path
