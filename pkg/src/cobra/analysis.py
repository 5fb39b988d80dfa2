"""Attention rollout, cross-modal influence and attention-cost accounting."""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from .config import NoiseKind, SyntheticTaskSpec
from .data import Utterance, corrupt_audio, model_inputs, noise_rng
from .errors import DataError, DegenerateRolloutError, InputPathError, UsageError
from .model import AttentionStep, AttentionTrace, CobraModel, TokenLayout
from .numkernel import Tensor, count_attention_madds, scaled_dot_attention

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-6


@dataclass
class RolloutMatrix:
    values: np.ndarray
    layout: Optional[TokenLayout] = None


class InfluenceReport(BaseModel):
    noise_type: str
    snr_db: Optional[float] = None  # None marks the clean condition
    f_v_to_a: float
    f_a_to_v: float
    f_v_to_a_norm: float
    f_a_to_v_norm: float

    @property
    def snr_label(self) -> str:
        return "clean" if self.snr_db is None else f"{self.snr_db:g}"


class CostReport(BaseModel):
    strategy: str
    f_m: int
    f_b: int
    d_model: int
    formula_pairs: int
    measured_madds: int


# -----------------------------------------------------------------------------
# Rollout
# -----------------------------------------------------------------------------


def _check_stochastic(step: AttentionStep) -> None:
    weights = step.weights
    if weights.shape != (step.indices.size, step.indices.size):
        raise DataError(f"{step.name}: matrix {weights.shape} does not match {step.indices.size} indices")
    if np.any(weights < 0) or np.any(np.abs(weights.sum(axis=1) - 1.0) > STOCHASTIC_TOL):
        raise DataError(f"{step.name}: attention rows are not stochastic")


def _global_matrix(steps: Sequence[AttentionStep], size: int, bottleneck: np.ndarray) -> np.ndarray:
    """Embed one step, or one parallel group, into the global index space.

    Rows of tokens that no step updates stay identity. In a parallel group the
    bottleneck rows are averaged across the group, matching the mean update.
    """
    matrix = np.eye(size)
    shared = set(bottleneck.tolist()) if len(steps) > 1 else set()
    shared_rows = np.zeros((size, size))
    shared_count = 0
    for step in steps:
        block = np.zeros((step.indices.size, size))
        block[:, step.indices] = step.weights
        own = np.array([i not in shared for i in step.indices.tolist()])
        matrix[step.indices[own]] = block[own]
        if shared:
            shared_rows[step.indices[~own]] += block[~own]
            shared_count += 1
    if shared_count:
        rows = np.array(sorted(shared))
        matrix[rows] = shared_rows[rows] / shared_count
    return matrix


def _grouped(steps: Sequence[AttentionStep]) -> Iterable[List[AttentionStep]]:
    batch: List[AttentionStep] = []
    for step in steps:
        if batch and (step.group is None or step.group != batch[0].group):
            yield batch
            batch = []
        batch.append(step)
    if batch:
        yield batch


def rollout(trace: AttentionTrace, residual_weight: float = 0.5) -> RolloutMatrix:
    """Compose head-averaged attention across encoder sub-steps.

    Each sub-step becomes Â = (1 − r)·A + r·I over the global token space,
    rows renormalized, and left-multiplies the running product. FFN and
    convolution sublayers act as identity.
    """
    size = trace.layout.size
    result = np.eye(size)
    for batch in _grouped(trace.steps):
        for step in batch:
            _check_stochastic(step)
        mixed = (1.0 - residual_weight) * _global_matrix(batch, size, trace.layout.bottleneck)
        mixed += residual_weight * np.eye(size)
        mixed /= mixed.sum(axis=1, keepdims=True)
        result = mixed @ result
    return RolloutMatrix(values=result, layout=trace.layout)


def modality_influence(
    rollout_matrix: Union[RolloutMatrix, np.ndarray],
    audio_idx: Sequence[int],
    video_idx: Sequence[int],
) -> Tuple[float, float, float, float]:
    """Averaged influence (f_a→a, f_v→a, f_v→v, f_a→v): mean of Ã[i, j] over targets i and sources j."""
    values = rollout_matrix.values if isinstance(rollout_matrix, RolloutMatrix) else np.asarray(rollout_matrix)
    audio = np.asarray(audio_idx, dtype=np.int64)
    video = np.asarray(video_idx, dtype=np.int64)
    if audio.size == 0 or video.size == 0:
        raise UsageError("modality index sets must be non-empty")
    if np.intersect1d(audio, video).size:
        raise UsageError("audio and video index sets overlap")
    n = values.shape[0]
    if min(audio.min(), video.min()) < 0 or max(audio.max(), video.max()) >= n:
        raise UsageError(f"index sets exceed the {n}×{n} rollout matrix")

    def mean_block(targets, sources):
        return float(values[np.ix_(targets, sources)].mean())

    return (
        mean_block(audio, audio),
        mean_block(audio, video),
        mean_block(video, video),
        mean_block(video, audio),
    )


def normalized_influence(f_a_to_a: float, f_v_to_a: float, f_v_to_v: float, f_a_to_v: float) -> Tuple[float, float]:
    """Cross-modal share of each stream's incoming frame mass: (f̄_v→a, f̄_a→v)."""
    into_audio = f_a_to_a + f_v_to_a
    into_video = f_v_to_v + f_a_to_v
    if into_audio <= 0 or into_video <= 0:
        raise DegenerateRolloutError("rollout carries no incoming frame mass for a modality")
    return f_v_to_a / into_audio, f_a_to_v / into_video


# -----------------------------------------------------------------------------
# Attention cost
# -----------------------------------------------------------------------------

SCHEMES = ("concat", "cross", "bottleneck")


def formula_pairs(f_m: int, f_b: int, scheme: str) -> int:
    if scheme in ("concat", "cross"):
        return (2 * f_m) ** 2
    if scheme == "bottleneck":
        return 2 * (f_m + f_b) ** 2
    raise UsageError(f"unknown attention scheme {scheme!r}; expected one of {SCHEMES}")


def attention_cost(f_m: int, f_b: int, scheme: str, d_model: int = 8, seed: int = 0) -> CostReport:
    """Closed-form query/key pair count next to an instrumented multiply-add count.

    The instrumented count runs the scheme's attention calls at full size:
    concat is one pass over both streams, cross is per-stream self-attention
    plus attention in each direction, bottleneck is one pass per stream over
    its frames plus the bottleneck.
    """
    if f_m < 1:
        raise UsageError(f"f_m must be >= 1, got {f_m}")
    if scheme == "bottleneck" and f_b < 1:
        raise UsageError(f"bottleneck scheme needs f_b >= 1, got {f_b}")
    pairs = formula_pairs(f_m, f_b, scheme)
    rng = np.random.default_rng(seed)

    def tokens(n: int) -> Tensor:
        return Tensor(rng.standard_normal((n, d_model)))

    with count_attention_madds() as counter:
        if scheme == "concat":
            x = tokens(2 * f_m)
            scaled_dot_attention(x, x, x)
        elif scheme == "cross":
            a, v = tokens(f_m), tokens(f_m)
            for q, kv in ((a, a), (v, v), (a, v), (v, a)):
                scaled_dot_attention(q, kv, kv)
        else:
            for _ in range(2):
                x = tokens(f_m + f_b)
                scaled_dot_attention(x, x, x)
    return CostReport(
        strategy=scheme, f_m=f_m, f_b=f_b, d_model=d_model, formula_pairs=pairs, measured_madds=counter[0]
    )


def cost_sweep(f_m_values: Sequence[int], f_b_values: Sequence[int], d_model: int) -> List[CostReport]:
    reports = []
    for f_m in f_m_values:
        for f_b in f_b_values:
            for scheme in SCHEMES:
                reports.append(attention_cost(f_m, f_b, scheme, d_model))
    return reports


def bottleneck_is_cheaper(f_m: int, f_b: int) -> bool:
    return formula_pairs(f_m, f_b, "bottleneck") < formula_pairs(f_m, f_b, "concat")


def cheaper_threshold(f_m: int) -> float:
    """F_b below which bottleneck attention beats concatenation: (√2 − 1)·F_m."""
    return (math.sqrt(2.0) - 1.0) * f_m


# -----------------------------------------------------------------------------
# SNR sweep
# -----------------------------------------------------------------------------


def utterance_influence(model: CobraModel, audio: np.ndarray, video: np.ndarray) -> Tuple[float, float, float, float]:
    trace = model.encode(audio, video).trace
    layout = trace.layout
    f = modality_influence(rollout(trace), layout.audio, layout.video)
    f_va_norm, f_av_norm = normalized_influence(*f)
    return f[1], f[3], f_va_norm, f_av_norm


def snr_influence_sweep(
    model: CobraModel,
    eval_set: Sequence[Utterance],
    snr_grid: Sequence[float],
    noise_types: Sequence[NoiseKind],
    task: SyntheticTaskSpec,
    seed: int = 0,
) -> List[InfluenceReport]:
    """Average influence over the eval set for each noise type, clean first, then SNR descending."""
    if model.video is None:
        raise UsageError("influence analysis needs a model with a video stream")
    if not eval_set:
        raise UsageError("influence sweep needs at least one utterance")
    reports = []
    conditions: List[Optional[float]] = [None] + sorted(set(snr_grid), reverse=True)
    for kind in sorted({NoiseKind(k) for k in noise_types}, key=lambda k: k.value):
        for snr in conditions:
            totals = np.zeros(4)
            for index, utt in enumerate(eval_set):
                audio = utt.audio
                if snr is not None:
                    audio = corrupt_audio(audio, kind, snr, noise_rng(seed, index, kind), task)
                inputs = model_inputs(audio, utt.video)
                totals += utterance_influence(model, *inputs)
            mean = totals / len(eval_set)
            reports.append(
                InfluenceReport(
                    noise_type=kind.value,
                    snr_db=snr,
                    f_v_to_a=mean[0],
                    f_a_to_v=mean[1],
                    f_v_to_a_norm=mean[2],
                    f_a_to_v_norm=mean[3],
                )
            )
            logger.info(f"influence {kind.value} {reports[-1].snr_label}: f_va_norm={mean[2]:.4f}")
    return reports


INFLUENCE_HEADER = ["noise_type", "snr_db", "f_va_raw", "f_av_raw", "f_va_norm", "f_av_norm"]
COST_HEADER = ["F_m", "F_b", "scheme", "formula_pairs", "measured_madds"]


def write_influence_csv(reports: Sequence[InfluenceReport], path: Path) -> Path:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(INFLUENCE_HEADER)
            for r in reports:
                writer.writerow(
                    [
                        r.noise_type,
                        r.snr_label,
                        f"{r.f_v_to_a:.6f}",
                        f"{r.f_a_to_v:.6f}",
                        f"{r.f_v_to_a_norm:.6f}",
                        f"{r.f_a_to_v_norm:.6f}",
                    ]
                )
    except OSError as e:
        raise InputPathError(f"cannot write {path}: {e}") from e
    logger.info(f"Influence table saved to {path}")
    return path


def write_cost_csv(reports: Sequence[CostReport], path: Path) -> Path:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(COST_HEADER)
            for r in reports:
                writer.writerow([r.f_m, r.f_b, r.strategy, r.formula_pairs, r.measured_madds])
    except OSError as e:
        raise InputPathError(f"cannot write {path}: {e}") from e
    logger.info(f"Cost table saved to {path}")
    return path
