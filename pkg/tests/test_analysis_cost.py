import csv
import math

import pytest

from src.cobra.analysis import (
    COST_HEADER,
    attention_cost,
    bottleneck_is_cheaper,
    cheaper_threshold,
    cost_sweep,
    formula_pairs,
    write_cost_csv,
)
from src.cobra.errors import UsageError

F_M = [50, 100, 200, 400]
F_B = [4, 16, 32]


def test_formulas():
    assert formula_pairs(100, 16, "concat") == 40000
    assert formula_pairs(100, 16, "cross") == 40000
    assert formula_pairs(100, 16, "bottleneck") == 2 * 116**2


@pytest.mark.parametrize("f_m", F_M)
@pytest.mark.parametrize("f_b", F_B)
def test_bottleneck_cheaper_exactly_below_threshold(f_m, f_b):
    assert bottleneck_is_cheaper(f_m, f_b) == (f_b < (math.sqrt(2) - 1) * f_m)
    assert bottleneck_is_cheaper(f_m, f_b) == (f_b < cheaper_threshold(f_m))


@pytest.mark.parametrize("scheme", ["concat", "cross", "bottleneck"])
@pytest.mark.parametrize("d_model", [4, 8])
def test_instrumented_count_is_formula_times_dim(scheme, d_model):
    for f_m in (50, 100):
        for f_b in (4, 16):
            report = attention_cost(f_m, f_b, scheme, d_model=d_model)
            assert report.measured_madds == report.formula_pairs * d_model


def test_unknown_scheme_and_bad_sizes():
    with pytest.raises(UsageError):
        attention_cost(10, 2, "sparse")
    with pytest.raises(UsageError):
        attention_cost(0, 2, "concat")
    with pytest.raises(UsageError):
        attention_cost(10, 0, "bottleneck")


def test_sweep_csv_layout(tmp_path):
    reports = cost_sweep([20, 40], [2], d_model=4)
    path = write_cost_csv(reports, tmp_path / "cost.csv")
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == COST_HEADER
    assert len(rows) == 1 + 2 * 3
    assert rows[1] == ["20", "2", "concat", "1600", "6400"]
    schemes = [r[2] for r in rows[1:]]
    assert schemes == ["concat", "cross", "bottleneck"] * 2


def test_empty_sweep_writes_header_only(tmp_path):
    path = write_cost_csv(cost_sweep([], [4], d_model=4), tmp_path / "cost.csv")
    assert path.read_text().strip() == ",".join(COST_HEADER)
