import numpy as np
import pytest

from src.cobra.config import EvalConfig, Variant
from src.cobra.errors import UsageError
from src.cobra.model import CobraModel, decoder_forward
from src.cobra.numkernel import Tensor, param, sum_all


@pytest.fixture
def model(model_cfg):
    return CobraModel(model_cfg)


@pytest.fixture
def memory(model_cfg, rng):
    return Tensor(rng.normal(size=(7, model_cfg.d_model)))


def test_logits_cover_every_emittable_symbol(model, model_cfg, memory):
    sos = model.decoder.sos
    logits = decoder_forward([sos, 1, 2], memory, model.decoder)
    assert sos == model_cfg.vocab_size + 1
    assert logits.shape == (3, model_cfg.vocab_size + 1)


def test_empty_prefix_is_a_usage_error(model, memory):
    with pytest.raises(UsageError):
        decoder_forward([], memory, model.decoder)


def test_prefix_must_start_with_sos(model, memory):
    with pytest.raises(UsageError):
        decoder_forward([1, 2], memory, model.decoder)


def test_decoder_is_causal(model, memory):
    sos = model.decoder.sos
    a = decoder_forward([sos, 1, 2, 3], memory, model.decoder).data
    b = decoder_forward([sos, 1, 3, 1], memory, model.decoder).data
    assert np.array_equal(a[:2], b[:2])
    assert not np.array_equal(a[2], b[2])


def test_gradient_through_cross_attention(model, model_cfg, grad_check, rng):
    memory = param(rng.normal(size=(5, model_cfg.d_model)))
    sos = model.decoder.sos
    w = Tensor(rng.normal(size=(3, model_cfg.vocab_size + 1)))
    cross = model.decoder.layers[0].cross_attn
    tensors = [memory, cross.wq.weight, cross.wk.weight, cross.wv.weight]
    assert grad_check(lambda: sum_all(decoder_forward([sos, 2, 1], memory, model.decoder) * w), tensors, n_probes=20) < 1e-4


def test_decoder_reads_audio_only(model, model_cfg, rng):
    audio = rng.normal(size=(8, model_cfg.audio_in_dim))
    video = rng.normal(size=(4, model_cfg.video_in_dim))
    enc = model.encode(audio, video)
    lp = model.next_token_logprobs([1], enc.audio_out)
    assert lp.shape == (model_cfg.vocab_size + 1,)
    assert np.exp(lp).sum() == pytest.approx(1.0)
    # cross-attention keys and values come from the audio stream alone
    expected = model.decoder_logits([1], enc.audio_out).data[-1]
    assert np.allclose(lp, expected - np.log(np.exp(expected).sum()), atol=1e-12)


def test_decode_returns_a_hypothesis_within_max_len(model, model_cfg, rng):
    audio = rng.normal(size=(8, model_cfg.audio_in_dim))
    video = rng.normal(size=(4, model_cfg.video_in_dim))
    hyp = model.decode(audio, video, EvalConfig(beam=2, max_len=3))
    assert len(hyp.tokens) <= 3
    assert all(1 <= t <= model_cfg.vocab_size for t in hyp.tokens)
    assert hyp.finished


def test_audio_only_model_loss_has_no_video_term(model_cfg, rng):
    model = CobraModel(model_cfg.model_copy(update={"variant": Variant.AUDIO_ONLY}))
    loss = model.loss(rng.normal(size=(8, model_cfg.audio_in_dim)), None, [1, 2])
    assert loss.ctc_video is None
    ctc_a, ctc_v, att = loss.components()
    assert ctc_v == 0.0
    w = model_cfg.w_ctc
    assert loss.total.item() == pytest.approx(w * ctc_a + (1 - w) * att, abs=1e-12)
