import csv
from pathlib import Path

import pytest

from src.cobra.cli import main, sha256_of
from src.cobra.evaluation import CLEAN_COLUMN, VARIANT_COLUMN

# tiny config: fusion from layer 1, two bottleneck tokens, sequential updates
FUSED = "bottleneck_Lf1_Fb2_seq"


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "out"


@pytest.fixture
def trained(config_file, out_dir):
    """Dataset plus one-epoch checkpoints for both variants"""
    assert main(["gen", "--config", config_file]) == 0
    assert main(["train", "--config", config_file]) == 0
    assert main(["train", "--config", config_file, "--variant", "audio_only"]) == 0
    return out_dir


def test_gen_writes_files_and_checksums(config_file, out_dir, capsys):
    assert main(["gen", "--config", config_file]) == 0
    first = capsys.readouterr().out
    train, evaluation = out_dir / "train.cbds", out_dir / "eval.cbds"
    assert train.stat().st_size > 0 and evaluation.stat().st_size > 0
    assert f"sha256={sha256_of(train)}" in first
    assert main(["gen", "--config", config_file]) == 0
    assert capsys.readouterr().out == first


def test_gen_into_unusable_directory_exits_2(tmp_path, tiny_config_text, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    config = tmp_path / "bad.conf"
    config.write_text(tiny_config_text + f"\noutput_dir = {blocker / 'sub'}\n")
    assert main(["gen", "--config", str(config)]) == 2
    assert str(blocker / "sub") in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path):
    config = tmp_path / "typo.conf"
    config.write_text("model.layers = 3\n")
    assert main(["bench", "--config", str(config)]) == 2


def test_train_without_dataset_exits_2(config_file):
    assert main(["train", "--config", config_file]) == 2


def test_bench_writes_cost_table(config_file, out_dir):
    assert main(["bench", "--config", config_file]) == 0
    rows = _read_csv(out_dir / "cost.csv")
    assert rows[0] == ["F_m", "F_b", "scheme", "formula_pairs", "measured_madds"]
    assert len(rows) == 1 + 2 * 1 * 3
    for f_m, f_b, scheme, pairs, madds in rows[1:]:
        assert int(madds) == int(pairs) * 4


def test_bench_empty_sweep_is_header_only(tmp_path, tiny_config_text, out_dir):
    config = tmp_path / "empty.conf"
    text = tiny_config_text.replace("bench.f_m = 10, 20", "bench.f_m =")
    config.write_text(text + f"\noutput_dir = {out_dir}\n")
    assert main(["bench", "--config", str(config)]) == 0
    assert _read_csv(out_dir / "cost.csv") == [["F_m", "F_b", "scheme", "formula_pairs", "measured_madds"]]


def test_train_eval_and_analyze(trained, config_file):
    assert (trained / f"{FUSED}.ckpt").exists()
    assert (trained / "audio_only.ckpt").exists()
    log = _read_csv(trained / f"{FUSED}_train_log.csv")
    assert log[0] == ["epoch", "stage", "lr", "loss", "ctc_audio", "ctc_video", "attention", "eval_wer"]
    assert len(log) == 2

    assert main(["eval", "--config", config_file]) == 0
    assert main(["eval", "--config", config_file, "--variant", "audio_only"]) == 0
    assert main(["eval", "--config", config_file]) == 0
    table = _read_csv(trained / "wer_table.csv")
    assert table[0] == [VARIANT_COLUMN, CLEAN_COLUMN, "white_5", "white_-5"]
    assert table[0].count(CLEAN_COLUMN) == 1
    assert sorted(row[0] for row in table[1:]) == ["audio_only", FUSED]

    assert main(["analyze", "--config", config_file]) == 0
    influence = _read_csv(trained / "influence.csv")
    assert influence[0] == ["noise_type", "snr_db", "f_va_raw", "f_av_raw", "f_va_norm", "f_av_norm"]
    assert [row[1] for row in influence[1:]] == ["clean", "5", "-5"]
    for row in influence[1:]:
        assert 0.0 <= float(row[4]) <= 1.0 and 0.0 <= float(row[5]) <= 1.0


def test_reruns_are_byte_identical(trained, config_file):
    first = (trained / f"{FUSED}.ckpt").read_bytes()
    log = (trained / f"{FUSED}_train_log.csv").read_bytes()
    assert main(["train", "--config", config_file]) == 0
    assert (trained / f"{FUSED}.ckpt").read_bytes() == first
    assert (trained / f"{FUSED}_train_log.csv").read_bytes() == log
    assert main(["eval", "--config", config_file]) == 0
    table = (trained / "wer_table.csv").read_bytes()
    assert main(["eval", "--config", config_file]) == 0
    assert (trained / "wer_table.csv").read_bytes() == table


def test_eval_with_mismatched_config_exits_3(trained, tmp_path, tiny_config_text):
    config = tmp_path / "wide.conf"
    config.write_text(tiny_config_text.replace("model.d_model = 8", "model.d_model = 16") + f"\noutput_dir = {trained}\n")
    assert main(["eval", "--config", str(config), "--checkpoint", str(trained / f"{FUSED}.ckpt")]) == 3


def test_analyze_rejects_audio_only_checkpoint(trained, config_file):
    assert main(["analyze", "--config", config_file, "--variant", "audio_only"]) == 2


def test_missing_checkpoint_exits_2(config_file, tmp_path):
    assert main(["gen", "--config", config_file]) == 0
    assert main(["eval", "--config", config_file, "--checkpoint", str(tmp_path / "none.ckpt")]) == 2


def test_fusion_ablations_keep_separate_rows(trained, tmp_path, tiny_config_text):
    early = tmp_path / "early.conf"
    early.write_text(
        tiny_config_text.replace("model.fusion_layer = 1", "model.fusion_layer = 0")
        + "\nmodel.strategy = mean\n"
        + f"output_dir = {trained}\n"
    )
    late = tmp_path / "late.conf"
    late.write_text(tiny_config_text + f"\noutput_dir = {trained}\n")
    assert main(["train", "--config", str(early)]) == 0
    assert (trained / "bottleneck_Lf0_Fb2_mean.ckpt").exists()
    assert (trained / f"{FUSED}.ckpt").exists()

    assert main(["eval", "--config", str(late)]) == 0
    assert main(["eval", "--config", str(early)]) == 0
    assert main(["eval", "--config", str(late)]) == 0
    labels = [row[0] for row in _read_csv(trained / "wer_table.csv")[1:]]
    assert labels == [FUSED, "bottleneck_Lf0_Fb2_mean"]
