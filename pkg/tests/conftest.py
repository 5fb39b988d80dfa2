import numpy as np
import pytest

from src.cobra.config import ModelConfig, RunConfig, SyntheticTaskSpec, parse_config
from src.cobra.numkernel import ComputeTape, backward


TINY_CONFIG = """
seed = 5
model.d_model = 8
model.num_layers = 2
model.fusion_layer = 1
model.bottleneck_len = 2
model.heads = 2
model.ffn_dim = 16
model.conv_kernel = 3
model.vocab_size = 3
model.decoder_layers = 1
model.audio_in_dim = 5
model.video_in_dim = 4
model.label_smoothing = 0.0
task.vocab_size = 3
task.viseme_classes = 2
task.frames_per_token = 4
task.video_rate_factor = 2
task.audio_feat_dim = 5
task.video_feat_dim = 4
task.min_tokens = 2
task.max_tokens = 3
train.n_train = 6
train.n_eval = 3
train.epochs = 1
train.batch_frames = 24
train.eval_subset = 2
eval.beam = 2
eval.max_len = 4
eval.snr_grid = 5, -5
eval.noise_types = white
bench.f_m = 10, 20
bench.f_b = 2
bench.d_model = 4
"""


@pytest.fixture
def model_cfg():
    """Small model config that keeps full forward/backward passes fast"""
    return ModelConfig(
        d_model=8,
        num_layers=2,
        fusion_layer=1,
        bottleneck_len=2,
        heads=2,
        ffn_dim=16,
        conv_kernel=3,
        vocab_size=3,
        decoder_layers=1,
        audio_in_dim=5,
        video_in_dim=4,
        label_smoothing=0.1,
        seed=3,
    )


@pytest.fixture
def task_spec():
    return SyntheticTaskSpec(
        vocab_size=3,
        viseme_classes=2,
        frames_per_token=4,
        video_rate_factor=2,
        audio_feat_dim=5,
        video_feat_dim=4,
        min_tokens=2,
        max_tokens=3,
    )


@pytest.fixture
def tiny_config_text():
    return TINY_CONFIG


@pytest.fixture
def run_config(tmp_path) -> RunConfig:
    return parse_config(TINY_CONFIG + f"\noutput_dir = {tmp_path / 'out'}\n")


@pytest.fixture
def config_file(tmp_path):
    """Tiny config written to disk, with outputs under tmp_path"""
    path = tmp_path / "cobra.conf"
    path.write_text(TINY_CONFIG + f"\noutput_dir = {tmp_path / 'out'}\n")
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def grad_check():
    """Compare tape gradients of a scalar loss against central differences.

    `loss_fn()` must rebuild the loss from the current parameter values.
    Returns the worst relative error over the probed entries.
    """

    def check(loss_fn, tensors, n_probes=5, h=1e-5, seed=0):
        probe_rng = np.random.default_rng(seed)
        for t in tensors:
            t.zero_grad()
        with ComputeTape() as tape:
            loss = loss_fn()
        backward(loss, tape)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
        worst = 0.0
        for _ in range(n_probes):
            which = int(probe_rng.integers(len(tensors)))
            t = tensors[which]
            idx = tuple(int(probe_rng.integers(n)) for n in t.data.shape)
            saved = t.data[idx]
            t.data[idx] = saved + h
            plus = loss_fn().item()
            t.data[idx] = saved - h
            minus = loss_fn().item()
            t.data[idx] = saved
            numeric = (plus - minus) / (2 * h)
            a = analytic[which][idx]
            worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6))
        return worst

    return check
