"""Dual-stream Conformer encoder with bottleneck-token fusion and a Transformer decoder."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import EvalConfig, FusionStrategy, ModelConfig, Variant
from .errors import UsageError
from .numkernel import (
    LayerNorm,
    Linear,
    Module,
    Tensor,
    add,
    concat_frames,
    depthwise_conv1d,
    dropout,
    embedding,
    glu,
    mean_of,
    param,
    scale,
    scaled_dot_attention,
    split_frames,
    swish,
)
from .objective import CtcHead, HybridLoss, Hypothesis, beam_search, hybrid_loss

logger = logging.getLogger(__name__)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    positions = np.arange(length)[:, np.newaxis]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table


class Dropout:
    """Seeded dropout shared by every block of one model; inactive unless training."""

    def __init__(self, p: float, seed: int):
        self.p = p
        self.rng = np.random.default_rng(seed)
        self.training = False

    def __call__(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self.rng, self.training)


# -----------------------------------------------------------------------------
# Building blocks
# -----------------------------------------------------------------------------


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)
        self.heads = heads

    def __call__(self, query: Tensor, memory: Tensor, mask: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
        out, weights = scaled_dot_attention(
            self.wq(query), self.wk(memory), self.wv(memory), mask=mask, heads=self.heads
        )
        return self.wo(out), weights.data


class FeedForward(Module):
    def __init__(self, d_model: int, ffn_dim: int, rng: np.random.Generator, drop: Dropout):
        self.norm = LayerNorm(d_model)
        self.w1 = Linear(d_model, ffn_dim, rng)
        self.w2 = Linear(ffn_dim, d_model, rng)
        self.drop = drop

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(self.drop(swish(self.w1(self.norm(x)))))


class ConvModule(Module):
    """LN → pointwise (D→2D) → GLU → depthwise conv → LN → Swish → pointwise."""

    def __init__(self, d_model: int, kernel: int, rng: np.random.Generator, drop: Dropout):
        self.norm = LayerNorm(d_model)
        self.pointwise_in = Linear(d_model, 2 * d_model, rng)
        self.depthwise = param(rng.normal(0.0, 1.0 / np.sqrt(kernel), size=(kernel, d_model)))
        self.conv_norm = LayerNorm(d_model)
        self.pointwise_out = Linear(d_model, d_model, rng)
        self.drop = drop

    def __call__(self, x: Tensor) -> Tensor:
        h = glu(self.pointwise_in(self.norm(x)))
        h = swish(self.conv_norm(depthwise_conv1d(h, self.depthwise)))
        return self.drop(self.pointwise_out(h))


class ConformerBlock(Module):
    """Macaron block: ½FFN → MHSA → conv → ½FFN → LN, each branch residual."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop: Dropout):
        self.ff_in = FeedForward(cfg.d_model, cfg.ffn_dim, rng, drop)
        self.attn_norm = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng)
        self.conv = ConvModule(cfg.d_model, cfg.conv_kernel, rng, drop)
        self.ff_out = FeedForward(cfg.d_model, cfg.ffn_dim, rng, drop)
        self.final_norm = LayerNorm(cfg.d_model)
        self.drop = drop

    def __call__(self, x: Tensor) -> Tuple[Tensor, np.ndarray]:
        x = add(x, scale(self.ff_in(x), 0.5))
        h = self.attn_norm(x)
        attn_out, weights = self.attn(h, h)
        x = add(x, self.drop(attn_out))
        x = add(x, self.conv(x))
        x = add(x, scale(self.ff_out(x), 0.5))
        return self.final_norm(x), weights

    def zero_residual_outputs(self) -> None:
        for proj in (self.ff_in.w2, self.attn.wo, self.conv.pointwise_out, self.ff_out.w2):
            proj.zero_init()


def conformer_block(x: Tensor, block: ConformerBlock) -> Tuple[Tensor, np.ndarray]:
    return block(x)


# -----------------------------------------------------------------------------
# Bottleneck fusion
# -----------------------------------------------------------------------------


@dataclass
class BottleneckTokens:
    values: Tensor


def init_bottleneck(n_tokens: int, d_model: int, sigma: float, seed: int) -> BottleneckTokens:
    """Gaussian-initialized learnable tokens, one set shared by every utterance."""
    if n_tokens < 1:
        raise UsageError(f"bottleneck needs at least one token, got {n_tokens}")
    if sigma <= 0:
        raise UsageError(f"bottleneck sigma must be positive, got {sigma}")
    rng = np.random.default_rng(seed)
    return BottleneckTokens(values=param(rng.normal(0.0, sigma, size=(n_tokens, d_model))))


@dataclass(frozen=True)
class TokenLayout:
    """Global token index space: [audio frames | video frames | bottleneck]."""

    n_audio: int
    n_video: int
    n_bottleneck: int

    @property
    def size(self) -> int:
        return self.n_audio + self.n_video + self.n_bottleneck

    @property
    def audio(self) -> np.ndarray:
        return np.arange(self.n_audio)

    @property
    def video(self) -> np.ndarray:
        return np.arange(self.n_audio, self.n_audio + self.n_video)

    @property
    def bottleneck(self) -> np.ndarray:
        return np.arange(self.n_audio + self.n_video, self.size)

    def frames(self, modality: str) -> np.ndarray:
        return self.audio if modality == "audio" else self.video


@dataclass
class AttentionStep:
    name: str
    layer: int
    modality: str
    indices: np.ndarray  # global index of each matrix row/column, in block input order
    weights: np.ndarray  # head-averaged, row-stochastic
    group: Optional[str] = None  # steps sharing a group ran in parallel (mean fusion)


@dataclass
class AttentionTrace:
    layout: TokenLayout
    steps: List[AttentionStep] = field(default_factory=list)


def _step(layout: TokenLayout, layer: int, modality: str, weights: np.ndarray, fused: bool, group=None):
    frames = layout.frames(modality)
    indices = np.concatenate([layout.bottleneck, frames]) if fused else frames
    return AttentionStep(f"layer{layer}/{modality}", layer, modality, indices, weights, group)


def fuse_sequential(
    x_b: Tensor,
    x_v: Tensor,
    x_a: Tensor,
    layer_v: ConformerBlock,
    layer_a: ConformerBlock,
    layout: TokenLayout,
    layer_index: int = 0,
    isolate: bool = False,
) -> Tuple[Tensor, Tensor, Tensor, List[AttentionStep]]:
    """Video block updates the bottleneck first, the audio block then reads it.

    With `isolate` the audio block sees the pre-video bottleneck, cutting the
    only path from video into audio.
    """
    n_b = x_b.shape[0]
    y_v, attn_v = layer_v(concat_frames([x_b, x_v]))
    x_b_hat, x_v_next = split_frames(y_v, [n_b, x_v.shape[0]])
    y_a, attn_a = layer_a(concat_frames([x_b if isolate else x_b_hat, x_a]))
    x_b_next, x_a_next = split_frames(y_a, [n_b, x_a.shape[0]])
    steps = [
        _step(layout, layer_index, "video", attn_v, fused=True),
        _step(layout, layer_index, "audio", attn_a, fused=True),
    ]
    return x_b_next, x_v_next, x_a_next, steps


def fuse_mean(
    x_b: Tensor,
    streams: Dict[str, Tensor],
    layers: Dict[str, ConformerBlock],
    layout: TokenLayout,
    layer_index: int = 0,
    isolate: bool = False,
) -> Tuple[Tensor, Dict[str, Tensor], List[AttentionStep]]:
    """Each modality block reads [x_b ∥ x_m]; the new bottleneck is the mean of their bottleneck outputs.

    With `isolate` only the audio block's bottleneck output is kept.
    """
    if not streams:
        raise UsageError("mean fusion needs at least one modality")
    n_b = x_b.shape[0]
    group = f"layer{layer_index}"
    outputs: Dict[str, Tensor] = {}
    b_hats: Dict[str, Tensor] = {}
    steps: List[AttentionStep] = []
    for modality, frames in streams.items():
        y, attn = layers[modality](concat_frames([x_b, frames]))
        b_hats[modality], outputs[modality] = split_frames(y, [n_b, frames.shape[0]])
        steps.append(_step(layout, layer_index, modality, attn, fused=True, group=group))
    kept = [b_hats["audio"]] if isolate and "audio" in b_hats else list(b_hats.values())
    return mean_of(kept), outputs, steps


# -----------------------------------------------------------------------------
# Encoder and decoder
# -----------------------------------------------------------------------------


class StreamEncoder(Module):
    """Linear front-end + sinusoidal positions + a stack of Conformer blocks."""

    def __init__(self, in_dim: int, cfg: ModelConfig, rng: np.random.Generator, drop: Dropout):
        self.frontend = Linear(in_dim, cfg.d_model, rng)
        self.layers = [ConformerBlock(cfg, rng, drop) for _ in range(cfg.num_layers)]
        self.d_model = cfg.d_model

    def embed(self, features: np.ndarray) -> Tensor:
        x = self.frontend(Tensor(features))
        return add(x, Tensor(sinusoidal_positions(x.shape[0], self.d_model)))


@dataclass
class EncoderOutput:
    audio_out: Tensor
    video_out: Optional[Tensor]
    bottleneck: Optional[Tensor]
    trace: AttentionTrace


SOS_OFFSET = 1  # sos id = vocab_size + 1


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop: Dropout):
        self.self_norm = LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng)
        self.cross_norm = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng)
        self.ff = FeedForward(cfg.d_model, cfg.ffn_dim, rng, drop)
        self.drop = drop

    def __call__(self, x: Tensor, memory: Tensor, causal: np.ndarray) -> Tensor:
        h = self.self_norm(x)
        out, _ = self.self_attn(h, h, mask=causal)
        x = add(x, self.drop(out))
        out, _ = self.cross_attn(self.cross_norm(x), memory)
        x = add(x, self.drop(out))
        return add(x, self.ff(x))


class TransformerDecoder(Module):
    """Pre-norm decoder; text is the query, audio encoder frames are keys and values."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, drop: Dropout):
        self.sos = cfg.vocab_size + SOS_OFFSET
        self.embed = param(rng.normal(0.0, 1.0, size=(cfg.vocab_size + 2, cfg.d_model)))
        self.layers = [DecoderLayer(cfg, rng, drop) for _ in range(cfg.decoder_layers)]
        self.final_norm = LayerNorm(cfg.d_model)
        self.out = Linear(cfg.d_model, cfg.vocab_size + 1, rng)
        self.d_model = cfg.d_model

    def __call__(self, prefix: Sequence[int], memory: Tensor) -> Tensor:
        length = len(prefix)
        x = add(embedding(self.embed, prefix), Tensor(sinusoidal_positions(length, self.d_model)))
        causal = np.triu(np.ones((length, length), dtype=bool), k=1)
        for layer in self.layers:
            x = layer(x, memory, causal)
        return self.out(self.final_norm(x))


def decoder_forward(y_prefix: Sequence[int], audio_out: Tensor, decoder: TransformerDecoder) -> Tensor:
    """Next-token logits (prefix_length × (vocab_size+1)) for a prefix starting with sos."""
    if len(y_prefix) == 0:
        raise UsageError("decoder prefix is empty; it must start with the sos token")
    if y_prefix[0] != decoder.sos:
        raise UsageError(f"decoder prefix must start with sos id {decoder.sos}, got {y_prefix[0]}")
    return decoder(y_prefix, audio_out)


# -----------------------------------------------------------------------------
# Full model
# -----------------------------------------------------------------------------


class CobraModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.drop = Dropout(cfg.dropout, cfg.seed + 1)
        self.audio = StreamEncoder(cfg.audio_in_dim, cfg, rng, self.drop)
        self.ctc_audio = CtcHead(cfg.d_model, cfg.vocab_size, rng)
        self.video: Optional[StreamEncoder] = None
        self.ctc_video: Optional[CtcHead] = None
        self.bottleneck: Optional[Tensor] = None
        if cfg.variant == Variant.BOTTLENECK:
            self.video = StreamEncoder(cfg.video_in_dim, cfg, rng, self.drop)
            self.ctc_video = CtcHead(cfg.d_model, cfg.vocab_size, rng)
            self.bottleneck = init_bottleneck(
                cfg.bottleneck_len, cfg.d_model, cfg.bottleneck_sigma, cfg.seed + 2
            ).values
        self.decoder = TransformerDecoder(cfg, rng, self.drop)

    def train(self, mode: bool = True) -> "CobraModel":
        self.drop.training = mode
        return self

    def encode(self, audio: np.ndarray, video: Optional[np.ndarray] = None, isolate_bottleneck: bool = False) -> EncoderOutput:
        cfg = self.cfg
        x_a = self.audio.embed(audio)
        x_v = self.video.embed(video) if self.video is not None and video is not None else None
        fusing = cfg.fusion_enabled and x_v is not None
        layout = TokenLayout(
            x_a.shape[0], x_v.shape[0] if x_v is not None else 0, cfg.bottleneck_len if fusing else 0
        )
        trace = AttentionTrace(layout)
        x_b = self.bottleneck if fusing else None

        for l in range(cfg.num_layers):
            if fusing and l >= cfg.fusion_layer:
                if cfg.strategy == FusionStrategy.SEQUENTIAL:
                    x_b, x_v, x_a, steps = fuse_sequential(
                        x_b, x_v, x_a, self.video.layers[l], self.audio.layers[l], layout, l, isolate_bottleneck
                    )
                else:
                    x_b, outs, steps = fuse_mean(
                        x_b,
                        {"video": x_v, "audio": x_a},
                        {"video": self.video.layers[l], "audio": self.audio.layers[l]},
                        layout,
                        l,
                        isolate_bottleneck,
                    )
                    x_v, x_a = outs["video"], outs["audio"]
                trace.steps.extend(steps)
                continue
            if x_v is not None:
                x_v, attn_v = self.video.layers[l](x_v)
                trace.steps.append(_step(layout, l, "video", attn_v, fused=False))
            x_a, attn_a = self.audio.layers[l](x_a)
            trace.steps.append(_step(layout, l, "audio", attn_a, fused=False))

        return EncoderOutput(audio_out=x_a, video_out=x_v, bottleneck=x_b, trace=trace)

    def decoder_logits(self, tokens: Sequence[int], audio_out: Tensor) -> Tensor:
        return decoder_forward([self.decoder.sos] + list(tokens), audio_out, self.decoder)

    def next_token_logprobs(self, tokens: Sequence[int], audio_out: Tensor) -> np.ndarray:
        logits = self.decoder_logits(tokens, audio_out).data[-1]
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def loss(self, audio: np.ndarray, video: Optional[np.ndarray], target: Sequence[int]) -> HybridLoss:
        enc = self.encode(audio, video)
        audio_logp = self.ctc_audio(enc.audio_out)
        video_logp = self.ctc_video(enc.video_out) if enc.video_out is not None else None
        logits = self.decoder_logits(target, enc.audio_out)
        return hybrid_loss(
            audio_logp, video_logp, logits, target, self.cfg.w_ctc, self.cfg.label_smoothing
        )

    def decode(self, audio: np.ndarray, video: Optional[np.ndarray], eval_cfg: EvalConfig) -> Hypothesis:
        enc = self.encode(audio, video)
        ctc_logp = self.ctc_audio(enc.audio_out).data
        return beam_search(
            lambda prefix: self.next_token_logprobs(prefix, enc.audio_out),
            ctc_logp,
            beam=eval_cfg.beam,
            ctc_weight=eval_cfg.ctc_weight,
            max_len=eval_cfg.max_len,
            length_bonus=eval_cfg.length_bonus,
        )


def forward_dual_stream(model: CobraModel, audio: np.ndarray, video: Optional[np.ndarray]) -> EncoderOutput:
    return model.encode(audio, video)
