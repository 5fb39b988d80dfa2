"""Hybrid CTC/attention objective, joint CTC/attention beam search and WER."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import InfeasibleAlignmentError, UsageError
from .numkernel import Linear, Module, Tensor, add, cross_entropy, log_softmax_rows, record_op, scale

logger = logging.getLogger(__name__)

BLANK = 0
EOS = 0


class CtcHead(Module):
    """Projects encoder frames to log-probabilities over blank + tokens (blank at index 0)."""

    def __init__(self, d_model: int, vocab_size: int, rng: np.random.Generator):
        self.proj = Linear(d_model, vocab_size + 1, rng)

    def __call__(self, frames: Tensor) -> Tensor:
        return log_softmax_rows(self.proj(frames))


def min_ctc_frames(target: Sequence[int]) -> int:
    """Fewest frames that can emit `target`: one per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extended(target: Sequence[int]) -> np.ndarray:
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    skip = np.zeros(ext.size, dtype=bool)
    if ext.size > 2:
        skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    return skip


def ctc_nll(log_probs: Tensor, target: Sequence[int]) -> Tensor:
    """Negative log-likelihood of `target` under CTC, computed in log space.

    log_probs is T×(V+1) with the blank at column 0; target holds ids in 1..V.
    The backward rule uses the forward-backward state occupancies.
    """
    lp = log_probs.data
    steps, classes = lp.shape
    target = [int(t) for t in target]
    if any(t < 1 or t >= classes for t in target):
        raise UsageError(f"target ids must lie in 1..{classes - 1}, got {target}")
    needed = min_ctc_frames(target)
    if steps < needed:
        raise InfeasibleAlignmentError(
            f"{steps} frames cannot align a target of length {len(target)} that needs {needed}"
        )

    ext = _extended(target)
    states = ext.size
    skip = _skip_allowed(ext)
    emit = lp[:, ext]

    alpha = np.full((steps, states), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, steps):
        prev = alpha[t - 1]
        cur = prev.copy()
        cur[1:] = np.logaddexp(cur[1:], prev[:-1])
        cur[2:] = np.where(skip[2:], np.logaddexp(cur[2:], prev[:-2]), cur[2:])
        alpha[t] = cur + emit[t]
    log_lik = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if states > 1 else alpha[-1, -1]

    def grad_fn(g):
        # beta[t, s]: log-prob of emitting frames t+1.. from state s at t
        beta = np.full((steps, states), -np.inf)
        beta[-1, -1] = 0.0
        if states > 1:
            beta[-1, -2] = 0.0
        for t in range(steps - 2, -1, -1):
            nxt = beta[t + 1] + emit[t + 1]
            cur = nxt.copy()
            cur[:-1] = np.logaddexp(cur[:-1], nxt[1:])
            cur[:-2] = np.where(skip[2:], np.logaddexp(cur[:-2], nxt[2:]), cur[:-2])
            beta[t] = cur
        occupancy = np.exp(alpha + beta - log_lik)
        grad = np.zeros_like(lp)
        np.add.at(grad, (np.arange(steps)[:, np.newaxis], ext[np.newaxis, :]), -occupancy)
        return (g * grad,)

    return record_op(-log_lik, (log_probs,), grad_fn)


class HybridLoss(BaseModel):
    """Loss total plus its components; tensors stay attached for backward."""

    model_config = {"arbitrary_types_allowed": True}

    total: Tensor
    ctc_audio: Tensor
    ctc_video: Optional[Tensor] = None
    attention: Tensor

    def components(self) -> Tuple[float, float, float]:
        video = self.ctc_video.item() if self.ctc_video is not None else 0.0
        return self.ctc_audio.item(), video, self.attention.item()


def combine_hybrid(ctc_audio: Tensor, ctc_video: Optional[Tensor], attention: Tensor, w: float) -> Tensor:
    """L = w·(ctc_audio + ctc_video) + (1 − w)·attention, as a minimized loss."""
    if not 0.0 <= w <= 1.0:
        raise UsageError(f"CTC weight must lie in [0, 1], got {w}")
    ctc_sum = ctc_audio if ctc_video is None else add(ctc_audio, ctc_video)
    return add(scale(ctc_sum, w), scale(attention, 1.0 - w))


def hybrid_loss(
    audio_logp: Tensor,
    video_logp: Optional[Tensor],
    decoder_logits: Tensor,
    target: Sequence[int],
    w: float,
    label_smoothing: float = 0.0,
) -> HybridLoss:
    """Hybrid CTC/attention loss; video_logp is None for the audio-only variant.

    decoder_logits are the outputs for input [sos, y1..yn], scored against [y1..yn, eos].
    """
    ctc_audio = ctc_nll(audio_logp, target)
    ctc_video = ctc_nll(video_logp, target) if video_logp is not None else None
    attention = cross_entropy(decoder_logits, list(target) + [EOS], label_smoothing)
    return HybridLoss(
        total=combine_hybrid(ctc_audio, ctc_video, attention, w),
        ctc_audio=ctc_audio,
        ctc_video=ctc_video,
        attention=attention,
    )


# -----------------------------------------------------------------------------
# CTC prefix scoring
# -----------------------------------------------------------------------------


@dataclass
class CtcPrefixState:
    tokens: Tuple[int, ...]
    r_nonblank: np.ndarray  # log-prob of the prefix, ending at frame t in a label
    r_blank: np.ndarray  # log-prob of the prefix, ending at frame t in blank
    score: float  # log-prob of every alignment whose collapse starts with the prefix


class CtcPrefixScorer:
    """Incremental CTC prefix probabilities over a fixed T×(V+1) log-prob matrix."""

    def __init__(self, log_probs: np.ndarray):
        self.lp = np.asarray(log_probs, dtype=np.float64)

    def initial_state(self) -> CtcPrefixState:
        steps = self.lp.shape[0]
        return CtcPrefixState(
            tokens=(),
            r_nonblank=np.full(steps, -np.inf),
            r_blank=np.cumsum(self.lp[:, BLANK]),
            score=0.0,
        )

    def extend(self, state: CtcPrefixState, token: int) -> CtcPrefixState:
        steps = self.lp.shape[0]
        x = self.lp[:, token]
        last = state.tokens[-1] if state.tokens else None
        phi = np.logaddexp(state.r_blank, state.r_nonblank) if token != last else state.r_blank.copy()
        r_n = np.full(steps, -np.inf)
        r_b = np.full(steps, -np.inf)
        start = x[0] if not state.tokens else -np.inf
        r_n[0] = start
        for t in range(1, steps):
            r_n[t] = np.logaddexp(r_n[t - 1], phi[t - 1]) + x[t]
            r_b[t] = np.logaddexp(r_b[t - 1], r_n[t - 1]) + self.lp[t, BLANK]
        score = np.logaddexp.reduce(np.concatenate([[start], phi[:-1] + x[1:]]))
        return CtcPrefixState(tokens=state.tokens + (token,), r_nonblank=r_n, r_blank=r_b, score=float(score))

    def final_score(self, state: CtcPrefixState) -> float:
        """Log-prob that the full label sequence is exactly the prefix."""
        return float(np.logaddexp(state.r_nonblank[-1], state.r_blank[-1]))

    def state_for(self, prefix: Sequence[int]) -> CtcPrefixState:
        state = self.initial_state()
        for token in prefix:
            state = self.extend(state, int(token))
        return state


def ctc_prefix_score(prefix: Sequence[int], ctc_logp: np.ndarray) -> float:
    """log Σ over alignments whose collapsed label sequence starts with `prefix`."""
    return CtcPrefixScorer(ctc_logp).state_for(prefix).score


def ctc_sequence_score(tokens: Sequence[int], ctc_logp: np.ndarray) -> float:
    """log P_ctc(tokens) for the complete sequence."""
    scorer = CtcPrefixScorer(ctc_logp)
    return scorer.final_score(scorer.state_for(tokens))


# -----------------------------------------------------------------------------
# Joint beam search
# -----------------------------------------------------------------------------


class Hypothesis(BaseModel):
    tokens: List[int] = Field(default_factory=list)
    att_score: float = 0.0
    ctc_score: float = 0.0
    score: float = 0.0
    finished: bool = False


def joint_score(ctc: float, att: float, ctc_weight: float, n_tokens: int = 0, length_bonus: float = 0.0) -> float:
    """λ·ctc + (1 − λ)·att (+ per-token bonus); the zero-weight side is left out so −∞ never meets 0."""
    total = length_bonus * n_tokens
    if ctc_weight > 0.0:
        total += ctc_weight * ctc
    if ctc_weight < 1.0:
        total += (1.0 - ctc_weight) * att
    return total


NextTokenFn = Callable[[Sequence[int]], np.ndarray]


def beam_search(
    next_token_logprobs: NextTokenFn,
    ctc_logp: Optional[np.ndarray],
    beam: int,
    ctc_weight: float,
    max_len: int,
    length_bonus: float = 0.0,
) -> Hypothesis:
    """Label-synchronous joint CTC/attention beam search.

    `next_token_logprobs(prefix)` returns decoder log-probs over [eos, 1..V]
    for the next position. At each step the best `beam` continuations survive;
    those ending in eos are finished. At the step that reaches `max_len`
    tokens every candidate is finished, and token-terminated ones keep their
    prefix scores.
    """
    if beam < 1:
        raise UsageError(f"beam must be >= 1, got {beam}")
    if not 0.0 <= ctc_weight <= 1.0:
        raise UsageError(f"ctc weight must lie in [0, 1], got {ctc_weight}")
    if ctc_logp is None and ctc_weight > 0.0:
        raise UsageError("ctc weight > 0 needs CTC posteriors")

    scorer = CtcPrefixScorer(ctc_logp) if ctc_logp is not None else None

    def make(tokens, att, ctc, finished):
        return Hypothesis(
            tokens=list(tokens),
            att_score=att,
            ctc_score=ctc,
            score=joint_score(ctc, att, ctc_weight, len(tokens), length_bonus),
            finished=finished,
        )

    root_state = scorer.initial_state() if scorer else None
    running: List[Tuple[Hypothesis, object]] = [(make((), 0.0, 0.0, False), root_state)]
    ended: List[Hypothesis] = []

    if max_len == 0:
        att = float(next_token_logprobs([])[EOS])
        ctc = scorer.final_score(root_state) if scorer else 0.0
        return make((), att, ctc, True)

    for step in range(max_len):
        last_step = step == max_len - 1
        candidates: List[Tuple[Hypothesis, object]] = []
        for hyp, state in running:
            att_lp = next_token_logprobs(hyp.tokens)
            ctc_end = scorer.final_score(state) if scorer else 0.0
            candidates.append((make(hyp.tokens, hyp.att_score + att_lp[EOS], ctc_end, True), None))
            for token in range(1, att_lp.size):
                child = scorer.extend(state, token) if scorer else None
                ctc = child.score if child is not None else 0.0
                candidates.append(
                    (make(hyp.tokens + [token], hyp.att_score + att_lp[token], ctc, last_step), child)
                )

        candidates.sort(key=lambda item: item[0].score, reverse=True)
        if last_step:
            ended.extend(h for h, _ in candidates)
            running = []
            break
        kept = candidates[:beam]
        ended.extend(h for h, _ in kept if h.finished)
        running = [(h, s) for h, s in kept if not h.finished]
        if not running:
            break

    best = max(ended, key=lambda h: h.score)
    logger.debug(f"beam search finished {len(ended)} hypotheses, best score {best.score:.4f}")
    return best


# -----------------------------------------------------------------------------
# Word error rate
# -----------------------------------------------------------------------------


def edit_distance(hyp: Sequence, ref: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i]
        for j, r in enumerate(ref, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r)))
        prev = cur
    return prev[-1]


def wer(hyp: Sequence, ref: Sequence) -> float:
    """Edit distance over reference length; an empty reference divides by 1."""
    return edit_distance(hyp, ref) / max(1, len(ref))


def corpus_wer(pairs: Sequence[Tuple[Sequence, Sequence]]) -> float:
    """Total edits over total reference tokens across (hyp, ref) pairs."""
    edits = sum(edit_distance(h, r) for h, r in pairs)
    words = sum(len(r) for _, r in pairs)
    return edits / max(1, words)
