import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, InputPathError


class FusionStrategy(str, Enum):
    SEQUENTIAL = "sequential"
    MEAN = "mean"


class Variant(str, Enum):
    BOTTLENECK = "bottleneck"
    AUDIO_ONLY = "audio_only"


class NoiseKind(str, Enum):
    WHITE = "white"
    PINK = "pink"
    BABBLE = "babble_surrogate"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False)


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ModelConfig(_Strict):
    d_model: int = Field(default=64, gt=0, description="Embedding dimension D")
    num_layers: int = Field(default=6, gt=0, description="Encoder layers per stream L")
    fusion_layer: int = Field(default=2, ge=0, description="First fused encoder layer L_f (0-based)")
    bottleneck_len: int = Field(default=8, ge=1, description="Bottleneck length F_b")
    bottleneck_sigma: float = Field(default=0.02, gt=0, description="Std of the bottleneck initialization")
    heads: int = Field(default=4, gt=0, description="Attention heads")
    ffn_dim: int = Field(default=256, gt=0, description="Feed-forward hidden dimension")
    conv_kernel: int = Field(default=7, gt=0, description="Depthwise convolution kernel length (odd)")
    strategy: FusionStrategy = Field(default=FusionStrategy.SEQUENTIAL, description="Bottleneck update order")
    variant: Variant = Field(default=Variant.BOTTLENECK, description="bottleneck or audio_only ablation")
    vocab_size: int = Field(default=12, gt=0, description="Number of real tokens; ids are 1..vocab_size")
    decoder_layers: int = Field(default=2, gt=0, description="Transformer decoder layers")
    audio_in_dim: int = Field(default=16, gt=0, description="Audio feature dimension fed to the front-end")
    video_in_dim: int = Field(default=12, gt=0, description="Video feature dimension fed to the front-end")
    w_ctc: float = Field(default=0.3, ge=0.0, le=1.0, description="CTC weight w in the hybrid loss")
    label_smoothing: float = Field(default=0.1, ge=0.0, lt=1.0, description="Decoder cross-entropy smoothing")
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0, description="Dropout rate; training only")
    seed: int = Field(default=0, description="Parameter initialization seed")

    @model_validator(mode="after")
    def check_shapes(self) -> "ModelConfig":
        if self.fusion_layer > self.num_layers:
            raise ValueError(f"fusion_layer {self.fusion_layer} exceeds num_layers {self.num_layers}")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        return self

    @property
    def fusion_enabled(self) -> bool:
        return self.variant == Variant.BOTTLENECK and self.fusion_layer < self.num_layers

    @property
    def run_label(self) -> str:
        """Names checkpoints, train logs and WER rows, e.g. bottleneck_Lf2_Fb8_seq."""
        if self.variant == Variant.AUDIO_ONLY:
            return self.variant.value
        strategy = "seq" if self.strategy == FusionStrategy.SEQUENTIAL else self.strategy.value
        return f"{self.variant.value}_Lf{self.fusion_layer}_Fb{self.bottleneck_len}_{strategy}"

    def shape_signature(self) -> Dict[str, Any]:
        """Fields that determine parameter shapes; two configs must agree on these to share a checkpoint."""
        return self.model_dump(
            mode="json",
            include={
                "d_model",
                "num_layers",
                "bottleneck_len",
                "heads",
                "ffn_dim",
                "conv_kernel",
                "variant",
                "vocab_size",
                "decoder_layers",
                "audio_in_dim",
                "video_in_dim",
            },
        )


class SyntheticTaskSpec(_Strict):
    vocab_size: int = Field(default=12, ge=2, description="Token inventory V")
    viseme_classes: int = Field(default=4, ge=1, description="Viseme classes C < V")
    frames_per_token: int = Field(default=4, ge=1, description="Audio frames per token")
    video_rate_factor: int = Field(default=2, ge=1, description="Audio frames per video frame")
    audio_feat_dim: int = Field(default=16, gt=0)
    video_feat_dim: int = Field(default=12, gt=0)
    template_jitter_std: float = Field(default=0.3, ge=0.0)
    min_tokens: int = Field(default=3, ge=1)
    max_tokens: int = Field(default=6, ge=1)
    seed: int = Field(default=1234, description="Seed for templates and the viseme map")

    @model_validator(mode="after")
    def check_task(self) -> "SyntheticTaskSpec":
        if self.viseme_classes >= self.vocab_size:
            raise ValueError(f"viseme_classes {self.viseme_classes} must be < vocab_size {self.vocab_size}")
        if self.min_tokens > self.max_tokens:
            raise ValueError(f"min_tokens {self.min_tokens} exceeds max_tokens {self.max_tokens}")
        if self.frames_per_token % self.video_rate_factor:
            raise ValueError("frames_per_token must be a multiple of video_rate_factor")
        return self

    @property
    def video_frames_per_token(self) -> int:
        return self.frames_per_token // self.video_rate_factor

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.model_dump(mode="json").items())

    @classmethod
    def from_text(cls, text: str) -> "SyntheticTaskSpec":
        return cls(**_parse_pairs(text, "<dataset header>"))


class TrainingConfig(_Strict):
    n_train: int = Field(default=2000, ge=1)
    n_eval: int = Field(default=100, ge=1)
    epochs: int = Field(default=20, ge=0)
    batch_frames: int = Field(default=400, gt=0, description="Audio frames accumulated per update")
    lr_peak: float = Field(default=1.0e-3, gt=0)
    warmup_epochs: float = Field(default=2.0, ge=0)
    weight_decay: float = Field(default=0.01, ge=0)
    grad_clip: float = Field(default=5.0, ge=0)
    pretrain_epochs: int = Field(default=0, ge=0, description="Short-utterance curriculum stage")
    pretrain_max_tokens: int = Field(default=3, ge=1)
    pretrain_lr: float = Field(default=2.0e-4, gt=0)
    noise_prob: float = Field(default=0.6, ge=0.0, le=1.0)
    noise_snr_min: float = Field(default=-5.0)
    noise_snr_max: float = Field(default=20.0)
    time_mask_audio: int = Field(default=4, ge=0, description="Max masked span for audio")
    time_mask_video: int = Field(default=2, ge=0, description="Max masked span for video")
    time_mask_count: int = Field(default=1, ge=0)
    eval_subset: int = Field(default=50, ge=1, description="Eval utterances decoded per epoch")

    @model_validator(mode="after")
    def check_snr_range(self) -> "TrainingConfig":
        if self.noise_snr_min > self.noise_snr_max:
            raise ValueError("noise_snr_min exceeds noise_snr_max")
        return self


class EvalConfig(_Strict):
    beam: int = Field(default=4, ge=1)
    ctc_weight: float = Field(default=0.3, ge=0.0, le=1.0, description="Decode-time CTC weight λ")
    max_len: int = Field(default=10, ge=0)
    length_bonus: float = Field(default=0.0)
    snr_grid: List[float] = Field(default_factory=lambda: [12.5, 7.5, 2.5, -2.5, -7.5])
    noise_types: List[NoiseKind] = Field(
        default_factory=lambda: [NoiseKind.BABBLE, NoiseKind.PINK, NoiseKind.WHITE]
    )

    @field_validator("snr_grid", "noise_types", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _split_list(value)


class BenchConfig(_Strict):
    f_m: List[int] = Field(default_factory=lambda: [50, 100, 200, 400])
    f_b: List[int] = Field(default_factory=lambda: [4, 16, 32])
    d_model: int = Field(default=8, gt=0)

    @field_validator("f_m", "f_b", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _split_list(value)


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "out"
    model: ModelConfig = Field(default_factory=ModelConfig)
    task: SyntheticTaskSpec = Field(default_factory=SyntheticTaskSpec)
    train: TrainingConfig = Field(default_factory=TrainingConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    @model_validator(mode="after")
    def check_dims(self) -> "RunConfig":
        if self.model.vocab_size != self.task.vocab_size:
            raise ValueError("model.vocab_size must equal task.vocab_size")
        if self.model.audio_in_dim != self.task.audio_feat_dim:
            raise ValueError("model.audio_in_dim must equal task.audio_feat_dim")
        if self.model.video_in_dim != self.task.video_feat_dim:
            raise ValueError("model.video_in_dim must equal task.video_feat_dim")
        return self

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get("COBRA_OUT") or self.output_dir)


def _parse_pairs(text: str, source: str) -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _nest(pairs: Dict[str, str]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in pairs.items():
        section, _, field = key.partition(".")
        if field:
            nested.setdefault(section, {})
            if not isinstance(nested[section], dict):
                raise ConfigError(f"key {key!r} conflicts with top-level {section!r}")
            nested[section][field] = value
        else:
            nested[key] = value
    return nested


def parse_config(text: str, source: str = "<config>", overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Parse flat `section.key = value` text into a validated RunConfig."""
    pairs = _parse_pairs(text, source)
    pairs.update(overrides or {})
    try:
        return RunConfig(**_nest(pairs))
    except ValidationError as e:
        raise ConfigError(f"{source}: invalid configuration\n{e}") from e


def load_config(path: Optional[str], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Load configuration from file; a missing path yields all defaults."""
    if path is None:
        return parse_config("", "<defaults>", overrides)
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputPathError(f"cannot read config {path}: {e}") from e
    return parse_config(text, str(path), overrides)


def model_config_to_text(cfg: ModelConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in cfg.model_dump(mode="json").items())


def model_config_from_text(text: str) -> ModelConfig:
    try:
        return ModelConfig(**_parse_pairs(text, "<checkpoint header>"))
    except ValidationError as e:
        raise ConfigError(f"checkpoint carries an invalid model config\n{e}") from e


def config_overrides(seed: Optional[int] = None, variant: Optional[str] = None) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    if seed is not None:
        overrides["seed"] = str(seed)
        overrides["model.seed"] = str(seed)
    if variant is not None:
        overrides["model.variant"] = variant
    return overrides


def describe(cfg: RunConfig) -> List[Tuple[str, Any]]:
    """Flattened (key, value) view, handy for logging the effective config."""
    rows = []
    for key, value in cfg.model_dump(mode="json").items():
        if isinstance(value, dict):
            rows.extend((f"{key}.{k}", v) for k, v in value.items())
        else:
            rows.append((key, value))
    return rows
