import csv

import pytest

from src.cobra.analysis import INFLUENCE_HEADER, snr_influence_sweep, write_influence_csv
from src.cobra.config import FusionStrategy, NoiseKind, Variant
from src.cobra.data import SyntheticTask, generate_split
from src.cobra.errors import UsageError
from src.cobra.model import CobraModel


@pytest.fixture
def eval_set(task_spec):
    return generate_split(SyntheticTask(task_spec), "eval", 2, seed=4)


def test_sweep_rows_are_clean_then_snr_descending(model_cfg, task_spec, eval_set):
    model = CobraModel(model_cfg).train(False)
    reports = snr_influence_sweep(
        model, eval_set, [-5.0, 10.0, 0.0], [NoiseKind.WHITE, NoiseKind.BABBLE], task_spec, seed=1
    )
    assert [r.noise_type for r in reports] == ["babble_surrogate"] * 4 + ["white"] * 4
    assert [r.snr_label for r in reports[:4]] == ["clean", "10", "0", "-5"]
    for r in reports:
        assert 0.0 <= r.f_v_to_a_norm <= 1.0
        assert 0.0 <= r.f_a_to_v_norm <= 1.0
        assert r.f_v_to_a >= 0.0 and r.f_a_to_v >= 0.0


def test_clean_row_does_not_depend_on_noise_type(model_cfg, task_spec, eval_set):
    model = CobraModel(model_cfg).train(False)
    reports = snr_influence_sweep(model, eval_set, [0.0], [NoiseKind.WHITE, NoiseKind.PINK], task_spec)
    pink_clean, white_clean = reports[0], reports[2]
    assert pink_clean.snr_db is None and white_clean.snr_db is None
    assert pink_clean.f_v_to_a == pytest.approx(white_clean.f_v_to_a)


def test_mean_fusion_model_can_be_analyzed(model_cfg, task_spec, eval_set):
    model = CobraModel(model_cfg.model_copy(update={"strategy": FusionStrategy.MEAN})).train(False)
    reports = snr_influence_sweep(model, eval_set, [], [NoiseKind.WHITE], task_spec)
    assert len(reports) == 1
    assert 0.0 <= reports[0].f_v_to_a_norm <= 1.0


def test_audio_only_model_is_rejected(model_cfg, task_spec, eval_set):
    model = CobraModel(model_cfg.model_copy(update={"variant": Variant.AUDIO_ONLY}))
    with pytest.raises(UsageError):
        snr_influence_sweep(model, eval_set, [0.0], [NoiseKind.WHITE], task_spec)


def test_influence_csv_layout(model_cfg, task_spec, eval_set, tmp_path):
    model = CobraModel(model_cfg).train(False)
    reports = snr_influence_sweep(model, eval_set, [2.5], [NoiseKind.WHITE], task_spec)
    path = write_influence_csv(reports, tmp_path / "influence.csv")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == INFLUENCE_HEADER
    assert [row[:2] for row in rows[1:]] == [["white", "clean"], ["white", "2.5"]]
