"""Synthetic audio-visual task: generation, noise, SNR mixing, augmentation and persistence."""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.signal import lfilter

from .config import NoiseKind, SyntheticTaskSpec, TrainingConfig
from .errors import ConfigError, DataError, DegenerateSignalError, DimensionError, InputPathError, UsageError

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"CBDS"
DATASET_VERSION = 1
BABBLE_STREAMS = 6

# Parallel first-order sections approximating a 1/f spectrum (pole, input gain).
PINK_SECTIONS = (
    (0.99886, 0.0555179),
    (0.99332, 0.0750759),
    (0.96900, 0.1538520),
    (0.86650, 0.3104856),
    (0.55000, 0.5329522),
    (-0.7616, -0.0168980),
)
PINK_DIRECT_GAIN = 0.5362 + 0.115926

SPLIT_CODES = {"train": 0, "eval": 1}


@dataclass
class Utterance:
    utt_id: str
    audio: np.ndarray  # F_a × audio_feat_dim
    video: np.ndarray  # F_v × video_feat_dim
    transcript: List[int]


class SyntheticTask:
    """Fixed templates and token→viseme map derived from the task seed."""

    def __init__(self, spec: SyntheticTaskSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        classes = np.arange(spec.vocab_size) % spec.viseme_classes
        rng.shuffle(classes)
        self.viseme_of = np.concatenate([[-1], classes])  # index by token id; 0 unused
        self.audio_templates = rng.normal(
            0.0, 1.0, size=(spec.vocab_size + 1, spec.frames_per_token, spec.audio_feat_dim)
        )
        self.video_templates = rng.normal(
            0.0, 1.0, size=(spec.viseme_classes, spec.video_frames_per_token, spec.video_feat_dim)
        )


def _as_task(task: Union[SyntheticTask, SyntheticTaskSpec]) -> SyntheticTask:
    return task if isinstance(task, SyntheticTask) else SyntheticTask(task)


def generate_utterance(
    task: Union[SyntheticTask, SyntheticTaskSpec],
    rng: np.random.Generator,
    utt_id: str = "",
    transcript: Optional[Sequence[int]] = None,
) -> Utterance:
    """Sample a transcript and render audio from token templates, video from viseme templates."""
    task = _as_task(task)
    spec = task.spec
    if transcript is None:
        length = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        transcript = rng.integers(1, spec.vocab_size + 1, size=length).tolist()
    tokens = np.asarray(transcript, dtype=np.int64)
    audio = task.audio_templates[tokens].reshape(-1, spec.audio_feat_dim)
    video = task.video_templates[task.viseme_of[tokens]].reshape(-1, spec.video_feat_dim)
    audio = audio + spec.template_jitter_std * rng.standard_normal(audio.shape)
    video = video + spec.template_jitter_std * rng.standard_normal(video.shape)
    return Utterance(utt_id=utt_id, audio=audio, video=video, transcript=[int(t) for t in tokens])


# -----------------------------------------------------------------------------
# Noise and mixing
# -----------------------------------------------------------------------------


def _pink(length: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal((length, dim))
    pink = PINK_DIRECT_GAIN * white
    for pole, gain in PINK_SECTIONS:
        pink += lfilter([gain], [1.0, -pole], white, axis=0)
    std = pink.std()
    return pink / std if std > 0 else pink


def _babble(
    length: int, dim: int, rng: np.random.Generator, task: Optional[SyntheticTask], streams: int
) -> np.ndarray:
    if task is None:
        raise ConfigError("babble_surrogate noise needs the synthetic task to render speech streams")
    if task.spec.audio_feat_dim != dim:
        raise DimensionError(f"babble dim {dim} differs from task audio dim {task.spec.audio_feat_dim}")
    total = np.zeros((length, dim))
    for _ in range(streams):
        chunks, frames = [], 0
        while frames < length:
            audio = generate_utterance(task, rng).audio
            chunks.append(audio)
            frames += audio.shape[0]
        total += np.concatenate(chunks, axis=0)[:length]
    return total / streams


def synth_noise(
    kind: Union[NoiseKind, str],
    length: int,
    dim: int,
    rng: np.random.Generator,
    task: Union[SyntheticTask, SyntheticTaskSpec, None] = None,
    streams: int = BABBLE_STREAMS,
) -> np.ndarray:
    """White: i.i.d. N(0, 1). Pink: white noise through a parallel bank of
    first-order IIR sections (unit variance). Babble surrogate: mean of
    `streams` independent clean synthetic audio streams."""
    if length < 1 or dim < 1:
        raise UsageError(f"noise needs length and dim >= 1, got ({length}, {dim})")
    try:
        kind = NoiseKind(kind)
    except ValueError as e:
        raise ConfigError(f"unknown noise kind {kind!r}") from e
    if kind == NoiseKind.WHITE:
        return rng.standard_normal((length, dim))
    if kind == NoiseKind.PINK:
        return _pink(length, dim, rng)
    return _babble(length, dim, rng, _as_task(task) if task is not None else None, streams)


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def measured_snr(signal: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(power(signal) / power(noise))


def mix_at_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """signal + noise rescaled so that 10·log10(P_signal / P_noise) equals snr_db."""
    if signal.shape != noise.shape:
        raise DimensionError(f"signal {signal.shape} and noise {noise.shape} differ in shape")
    if not np.isfinite(snr_db):
        raise UsageError(f"snr_db must be finite, got {snr_db}")
    p_signal, p_noise = power(signal), power(noise)
    if p_signal <= 0:
        raise DegenerateSignalError("cannot mix noise into a zero-power signal")
    if p_noise <= 0:
        raise DegenerateSignalError("cannot rescale a zero-power noise")
    gain = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return signal + gain * noise


def time_mask(x: np.ndarray, max_span: int, n_masks: int, rng: np.random.Generator) -> np.ndarray:
    """Zero `n_masks` random contiguous spans of at most `max_span` frames."""
    steps = x.shape[0]
    if n_masks and max_span >= steps:
        raise UsageError(f"max_span {max_span} must be smaller than {steps} frames")
    out = x.copy()
    for _ in range(n_masks):
        span = int(rng.integers(0, max_span + 1))
        start = int(rng.integers(0, steps - span + 1))
        out[start : start + span] = 0.0
    return out


def normalize_features(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Utterance-level z-normalization per feature dimension."""
    return (x - x.mean(axis=0, keepdims=True)) / (x.std(axis=0, keepdims=True) + eps)


def model_inputs(audio: np.ndarray, video: Optional[np.ndarray]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    return normalize_features(audio), normalize_features(video) if video is not None else None


def noise_rng(seed: int, index: int, kind: Union[NoiseKind, str]) -> np.random.Generator:
    """Noise stream for one (utterance, noise kind) pair; shared across SNR levels."""
    code = list(NoiseKind).index(NoiseKind(kind))
    return np.random.default_rng([seed, index, code, 7])


def corrupt_audio(
    audio: np.ndarray,
    kind: Union[NoiseKind, str],
    snr_db: float,
    rng: np.random.Generator,
    task: Union[SyntheticTask, SyntheticTaskSpec, None] = None,
) -> np.ndarray:
    noise = synth_noise(kind, audio.shape[0], audio.shape[1], rng, task)
    return mix_at_snr(audio, noise, snr_db)


def augment_utterance(
    utt: Utterance, task: SyntheticTask, train_cfg: TrainingConfig, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Training-time view: babble at a random SNR with probability noise_prob, then time masking."""
    audio, video = utt.audio, utt.video
    if rng.random() < train_cfg.noise_prob:
        snr = rng.uniform(train_cfg.noise_snr_min, train_cfg.noise_snr_max)
        audio = corrupt_audio(audio, NoiseKind.BABBLE, snr, rng, task)
    if train_cfg.time_mask_count:
        audio = time_mask(audio, min(train_cfg.time_mask_audio, audio.shape[0] - 1), train_cfg.time_mask_count, rng)
        video = time_mask(video, min(train_cfg.time_mask_video, video.shape[0] - 1), train_cfg.time_mask_count, rng)
    return audio, video


# -----------------------------------------------------------------------------
# Persistence
# -----------------------------------------------------------------------------


@dataclass
class DatasetPaths:
    train: Path
    eval: Path


def utterance_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLIT_CODES[split], index])


def generate_split(task: SyntheticTask, split: str, count: int, seed: int) -> List[Utterance]:
    return [
        generate_utterance(task, utterance_rng(seed, split, i), utt_id=f"{split}-{i:05d}")
        for i in range(count)
    ]


def _write_tensor(f: BinaryIO, x: np.ndarray) -> None:
    f.write(struct.pack("<B", x.ndim))
    f.write(struct.pack(f"<{x.ndim}I", *x.shape))
    f.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def _read_exact(f: BinaryIO, n: int, path: Path) -> bytes:
    chunk = f.read(n)
    if len(chunk) != n:
        raise DataError(f"{path}: truncated file")
    return chunk


def _read_tensor(f: BinaryIO, path: Path) -> np.ndarray:
    (rank,) = struct.unpack("<B", _read_exact(f, 1, path))
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, path))
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(f, 8 * count, path), dtype="<f8")
    return data.astype(np.float64).reshape(shape)


def write_dataset(path: Path, spec: SyntheticTaskSpec, utterances: Sequence[Utterance]) -> Path:
    """Header (magic, version, key=value spec block), then one record per utterance."""
    path = Path(path)
    spec_text = spec.to_text().encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(struct.pack("<HI", DATASET_VERSION, len(spec_text)))
            f.write(spec_text)
            f.write(struct.pack("<I", len(utterances)))
            for utt in utterances:
                uid = utt.utt_id.encode("utf-8")
                f.write(struct.pack("<H", len(uid)))
                f.write(uid)
                f.write(struct.pack(f"<H{len(utt.transcript)}H", len(utt.transcript), *utt.transcript))
                _write_tensor(f, utt.audio)
                _write_tensor(f, utt.video)
    except OSError as e:
        raise InputPathError(f"cannot write dataset {path}: {e}") from e
    return path


def load_dataset(path: Path) -> Tuple[SyntheticTaskSpec, List[Utterance]]:
    path = Path(path)
    try:
        f = open(path, "rb")
    except OSError as e:
        raise InputPathError(f"cannot read dataset {path}: {e}") from e
    with f:
        if _read_exact(f, 4, path) != DATASET_MAGIC:
            raise DataError(f"{path}: not a cobra dataset file")
        version, spec_len = struct.unpack("<HI", _read_exact(f, 6, path))
        if version != DATASET_VERSION:
            raise DataError(f"{path}: unsupported dataset version {version}")
        try:
            spec = SyntheticTaskSpec.from_text(_read_exact(f, spec_len, path).decode("utf-8"))
        except (ValidationError, ConfigError) as e:
            raise DataError(f"{path}: invalid task header\n{e}") from e
        (count,) = struct.unpack("<I", _read_exact(f, 4, path))
        utterances = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(f, 2, path))
            utt_id = _read_exact(f, id_len, path).decode("utf-8")
            (n_tokens,) = struct.unpack("<H", _read_exact(f, 2, path))
            transcript = list(struct.unpack(f"<{n_tokens}H", _read_exact(f, 2 * n_tokens, path)))
            audio = _read_tensor(f, path)
            video = _read_tensor(f, path)
            utterances.append(Utterance(utt_id, audio, video, transcript))
    return spec, utterances


def dataset_paths(out_dir: Path) -> DatasetPaths:
    out_dir = Path(out_dir)
    return DatasetPaths(train=out_dir / "train.cbds", eval=out_dir / "eval.cbds")


def build_dataset(spec: SyntheticTaskSpec, n_train: int, n_eval: int, seed: int, out_dir: Path) -> DatasetPaths:
    """Generate both splits with per-utterance seed streams and write one file per split."""
    if n_train < 1 or n_eval < 1:
        raise UsageError(f"split sizes must be >= 1, got train={n_train} eval={n_eval}")
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise InputPathError(f"output directory does not exist: {out_dir}")
    task = SyntheticTask(spec)
    paths = dataset_paths(out_dir)
    write_dataset(paths.train, spec, generate_split(task, "train", n_train, seed))
    write_dataset(paths.eval, spec, generate_split(task, "eval", n_eval, seed))
    logger.info(f"Dataset written: {paths.train} ({n_train}), {paths.eval} ({n_eval})")
    return paths
