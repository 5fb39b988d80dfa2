import numpy as np
import pytest

from src.cobra.checkpoint import check_compatible, load_checkpoint, read_checkpoint, save_checkpoint
from src.cobra.config import FusionStrategy, Variant
from src.cobra.errors import CheckpointMismatchError, DataError, InputPathError
from src.cobra.model import CobraModel


def _perturbed(model_cfg):
    model = CobraModel(model_cfg)
    rng = np.random.default_rng(1)
    for p in model.parameters().values():
        p.data += rng.normal(size=p.data.shape) * 1e-3
    return model


def test_round_trip_is_bit_exact(tmp_path, model_cfg):
    model = _perturbed(model_cfg)
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(path, expected=model_cfg)
    assert loaded.cfg == model_cfg
    original, restored = model.parameters(), loaded.parameters()
    assert list(original) == list(restored)
    for name in original:
        assert np.array_equal(original[name].data, restored[name].data), name


def test_saving_twice_gives_identical_bytes(tmp_path, model_cfg):
    model = _perturbed(model_cfg)
    a = save_checkpoint(model, tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(model, tmp_path / "b.ckpt").read_bytes()
    assert a == b
    assert a[:4] == b"CBRA"


def test_header_records_the_model_config(tmp_path, model_cfg):
    cfg = model_cfg.model_copy(update={"strategy": FusionStrategy.MEAN})
    path = save_checkpoint(CobraModel(cfg), tmp_path / "m.ckpt")
    recorded, blocks = read_checkpoint(path)
    assert recorded.strategy == FusionStrategy.MEAN
    assert "bottleneck" in blocks


@pytest.mark.parametrize(
    "update",
    [{"d_model": 16}, {"vocab_size": 4}, {"variant": Variant.AUDIO_ONLY}, {"bottleneck_len": 3}],
)
def test_shape_mismatch_is_rejected(tmp_path, model_cfg, update):
    path = save_checkpoint(CobraModel(model_cfg), tmp_path / "m.ckpt")
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, expected=model_cfg.model_copy(update=update))


def test_non_shape_fields_are_compatible(model_cfg):
    check_compatible(model_cfg, model_cfg.model_copy(update={"w_ctc": 0.9, "fusion_layer": 0, "seed": 42}))


def test_bad_files(tmp_path):
    with pytest.raises(InputPathError):
        load_checkpoint(tmp_path / "missing.ckpt")
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"XXXX0000000000")
    with pytest.raises(DataError):
        load_checkpoint(junk)
