import itertools

import numpy as np
import pytest

from src.cobra.config import SyntheticTaskSpec
from src.cobra.data import SyntheticTask, generate_utterance, normalize_features


@pytest.fixture
def noiseless():
    return SyntheticTaskSpec(template_jitter_std=0.0)


def test_lengths_follow_frame_rates(task_spec):
    task = SyntheticTask(task_spec)
    for seed in range(20):
        utt = generate_utterance(task, np.random.default_rng(seed))
        n = len(utt.transcript)
        assert task_spec.min_tokens <= n <= task_spec.max_tokens
        assert utt.audio.shape == (n * task_spec.frames_per_token, task_spec.audio_feat_dim)
        assert utt.video.shape == (n * task_spec.video_frames_per_token, task_spec.video_feat_dim)
        assert all(1 <= t <= task_spec.vocab_size for t in utt.transcript)


def test_zero_jitter_reproduces_templates(noiseless):
    task = SyntheticTask(noiseless)
    utt = generate_utterance(task, np.random.default_rng(0))
    expected = np.concatenate([task.audio_templates[t] for t in utt.transcript])
    assert np.array_equal(utt.audio, expected)


def test_every_token_has_one_viseme_and_every_class_is_used(noiseless):
    task = SyntheticTask(noiseless)
    classes = task.viseme_of[1:]
    assert classes.shape == (noiseless.vocab_size,)
    assert set(classes.tolist()) == set(range(noiseless.viseme_classes))


def test_same_viseme_tokens_look_identical_but_sound_different(noiseless):
    task = SyntheticTask(noiseless)
    a, b = [t for t in range(1, noiseless.vocab_size + 1) if task.viseme_of[t] == task.viseme_of[1]][:2]
    rng = np.random.default_rng(0)
    ua = generate_utterance(task, rng, transcript=[a, 2, 3])
    ub = generate_utterance(task, rng, transcript=[b, 2, 3])
    assert np.array_equal(ua.video, ub.video)
    assert not np.array_equal(ua.audio, ub.audio)


def test_video_only_classifier_accuracy_is_bounded(noiseless):
    """Best per-token guess from video alone is right for one token per viseme class."""
    task = SyntheticTask(noiseless)
    vocab = noiseless.vocab_size
    correct = 0
    for token in range(1, vocab + 1):
        frames = task.video_templates[task.viseme_of[token]]
        lookalikes = [t for t in range(1, vocab + 1) if np.array_equal(task.video_templates[task.viseme_of[t]], frames)]
        # a deterministic guesser picks one token per indistinguishable group
        correct += int(min(lookalikes) == token)
    assert correct / vocab <= noiseless.viseme_classes / vocab


def test_generation_is_deterministic(task_spec):
    a = generate_utterance(task_spec, np.random.default_rng(4), "x")
    b = generate_utterance(task_spec, np.random.default_rng(4), "x")
    assert a.transcript == b.transcript
    assert np.array_equal(a.audio, b.audio) and np.array_equal(a.video, b.video)


def test_transcripts_cover_the_vocabulary(task_spec):
    task = SyntheticTask(task_spec)
    rng = np.random.default_rng(1)
    seen = set(itertools.chain.from_iterable(generate_utterance(task, rng).transcript for _ in range(40)))
    assert seen == set(range(1, task_spec.vocab_size + 1))


def test_normalize_features_zero_mean_unit_std(rng):
    x = rng.normal(loc=3.0, scale=5.0, size=(50, 4))
    z = normalize_features(x)
    assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-6)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        SyntheticTaskSpec(vocab_size=4, viseme_classes=4)
    with pytest.raises(ValueError):
        SyntheticTaskSpec(min_tokens=5, max_tokens=3)
    with pytest.raises(ValueError):
        SyntheticTaskSpec(frames_per_token=3, video_rate_factor=2)
