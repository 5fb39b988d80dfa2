import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import SyntheticTask, Utterance, augment_utterance, model_inputs
from .errors import InputPathError, NonFiniteError, TrainingDivergedError, UsageError
from .model import CobraModel
from .numkernel import AdamW, ComputeTape, CosineSchedule, backward, clip_grad_norm
from .objective import corpus_wer

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ["epoch", "stage", "lr", "loss", "ctc_audio", "ctc_video", "attention", "eval_wer"]


@dataclass
class Stage:
    name: str
    epochs: int
    lr_peak: float
    utterances: List[Utterance]


@dataclass
class EpochSummary:
    epoch: int
    stage: str
    lr: float
    loss: float
    ctc_audio: float
    ctc_video: float
    attention: float
    eval_wer: float

    def row(self) -> List[str]:
        return [
            str(self.epoch),
            self.stage,
            f"{self.lr:.8f}",
            f"{self.loss:.6f}",
            f"{self.ctc_audio:.6f}",
            f"{self.ctc_video:.6f}",
            f"{self.attention:.6f}",
            f"{self.eval_wer:.4f}",
        ]


@dataclass
class TrainingResult:
    checkpoint: Path
    log: Path
    best_wer: float
    history: List[EpochSummary] = field(default_factory=list)


def train_log_path(out_dir: Path, label: str) -> Path:
    return Path(out_dir) / f"{label}_train_log.csv"


def checkpoint_path(out_dir: Path, label: str) -> Path:
    return Path(out_dir) / f"{label}.ckpt"


def make_batches(utterances: Sequence[Utterance], order: np.ndarray, batch_frames: int) -> List[List[Utterance]]:
    """Group utterances in `order` until their audio frames reach batch_frames."""
    batches: List[List[Utterance]] = []
    current: List[Utterance] = []
    frames = 0
    for index in order:
        utt = utterances[int(index)]
        current.append(utt)
        frames += utt.audio.shape[0]
        if frames >= batch_frames:
            batches.append(current)
            current, frames = [], 0
    if current:
        batches.append(current)
    return batches


class Trainer:
    """Runs the curriculum stages, logs each epoch and keeps the best checkpoint by clean eval WER."""

    def __init__(
        self,
        cfg: RunConfig,
        train_set: Sequence[Utterance],
        eval_set: Sequence[Utterance],
        out_dir: Optional[Path] = None,
    ):
        if not train_set:
            raise UsageError("training set is empty")
        self.cfg = cfg
        self.train_set = list(train_set)
        self.eval_set = list(eval_set)[: cfg.train.eval_subset]
        self.out_dir = Path(out_dir) if out_dir is not None else cfg.resolved_output_dir()
        self.task = SyntheticTask(cfg.task)
        self.model = CobraModel(cfg.model)
        self.params = self.model.parameters()
        self.optimizer = AdamW(self.params, betas=(0.9, 0.98), weight_decay=cfg.train.weight_decay)
        self.rng = np.random.default_rng([cfg.seed, 17])
        self.label = cfg.model.run_label

    def stages(self) -> List[Stage]:
        train = self.cfg.train
        stages = []
        if train.pretrain_epochs:
            short = [u for u in self.train_set if len(u.transcript) <= train.pretrain_max_tokens]
            if short:
                stages.append(Stage("pretrain", train.pretrain_epochs, train.pretrain_lr, short))
            else:
                logger.warning(f"No utterance has <= {train.pretrain_max_tokens} tokens; skipping pretraining")
        stages.append(Stage("main", train.epochs, train.lr_peak, self.train_set))
        return stages

    def _inputs(self, utt: Utterance):
        audio, video = augment_utterance(utt, self.task, self.cfg.train, self.rng)
        return model_inputs(audio, video if self.model.video is not None else None)

    def _update(self, batch: List[Utterance], lr: float) -> np.ndarray:
        """Accumulate gradients over one batch and apply a single optimizer step.

        Returns the summed (loss, ctc_audio, ctc_video, attention) over the batch.
        """
        totals = np.zeros(4)
        self.optimizer.zero_grad()
        for utt in batch:
            audio, video = self._inputs(utt)
            try:
                with ComputeTape() as tape:
                    loss = self.model.loss(audio, video, utt.transcript)
                backward(loss.total, tape)
            except NonFiniteError as e:
                logger.error(f"Non-finite value while training on {utt.utt_id}: {e}")
                raise TrainingDivergedError(f"training diverged on utterance {utt.utt_id}") from e
            components = loss.components()
            if not math.isfinite(loss.total.item()):
                logger.error(f"NaN loss on {utt.utt_id}: components={components}")
                raise TrainingDivergedError(f"training diverged on utterance {utt.utt_id}")
            totals += (loss.total.item(), *components)
        for p in self.params.values():
            if p.grad is not None:
                p.grad /= len(batch)
        clip_grad_norm(self.params, self.cfg.train.grad_clip)
        self.optimizer.step(lr)
        return totals

    def evaluate(self) -> float:
        """Clean corpus WER on the eval subset."""
        if not self.eval_set:
            return float("nan")
        self.model.train(False)
        pairs = []
        for utt in self.eval_set:
            audio, video = model_inputs(utt.audio, utt.video if self.model.video is not None else None)
            hyp = self.model.decode(audio, video, self.cfg.eval)
            pairs.append((hyp.tokens, utt.transcript))
        self.model.train(True)
        return corpus_wer(pairs)

    def run(self) -> TrainingResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = checkpoint_path(self.out_dir, self.label)
        log_path = train_log_path(self.out_dir, self.label)
        history: List[EpochSummary] = []
        best_wer = math.inf
        saved = False
        epoch = 0
        logger.info(
            f"Training {self.label} on {len(self.train_set)} utterances, "
            f"{len(self.params)} parameter tensors"
        )
        self.model.train(True)
        for stage in self.stages():
            n = len(stage.utterances)
            schedule = CosineSchedule(
                stage.lr_peak,
                warmup_steps=int(round(self.cfg.train.warmup_epochs * n)),
                total_steps=stage.epochs * n,
            )
            consumed = 0
            for _ in range(stage.epochs):
                epoch += 1
                order = self.rng.permutation(n)
                totals = np.zeros(4)
                lr = schedule.lr(consumed)
                for batch in make_batches(stage.utterances, order, self.cfg.train.batch_frames):
                    lr = schedule.lr(consumed)
                    totals += self._update(batch, lr)
                    consumed += len(batch)
                eval_wer = self.evaluate()
                mean = totals / n
                summary = EpochSummary(epoch, stage.name, lr, *mean.tolist(), eval_wer=eval_wer)
                history.append(summary)
                logger.info(
                    f"epoch {epoch} [{stage.name}] lr={lr:.2e} loss={summary.loss:.4f} "
                    f"ctc_a={summary.ctc_audio:.4f} ctc_v={summary.ctc_video:.4f} "
                    f"att={summary.attention:.4f} wer={eval_wer:.4f}"
                )
                if eval_wer < best_wer or not saved:
                    best_wer = min(best_wer, eval_wer)
                    save_checkpoint(self.model, ckpt)
                    saved = True
        if not saved:
            save_checkpoint(self.model, ckpt)
        self.model.train(False)
        write_train_log(history, log_path)
        return TrainingResult(checkpoint=ckpt, log=log_path, best_wer=best_wer, history=history)


def write_train_log(history: Sequence[EpochSummary], path: Path) -> Path:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(TRAIN_LOG_HEADER)
            for summary in history:
                writer.writerow(summary.row())
    except OSError as e:
        raise InputPathError(f"cannot write {path}: {e}") from e
    logger.info(f"Training log saved to {path}")
    return path
