import numpy as np
import pytest

from src.cobra.objective import corpus_wer, edit_distance, wer


@pytest.mark.parametrize(
    "hyp, ref, distance",
    [
        ([], [], 0),
        ([1, 2, 3], [1, 2, 3], 0),
        ([1, 3], [1, 2, 3], 1),
        ([1, 2, 2, 3], [1, 2, 3], 1),
        ([3, 2, 1], [1, 2, 3], 2),
        ([], [4, 5], 2),
        ([4, 5, 6], [], 3),
    ],
)
def test_edit_distance(hyp, ref, distance):
    assert edit_distance(hyp, ref) == distance
    assert edit_distance(ref, hyp) == distance


def test_wer_divides_by_reference_length():
    assert wer([1, 9, 3, 4], [1, 2, 3]) == pytest.approx(2 / 3)
    assert wer([1], []) == 1.0


def test_corpus_wer_pools_edits_and_words():
    pairs = [([1, 2], [1, 2, 3, 4]), ([5], [5])]
    assert corpus_wer(pairs) == pytest.approx(2 / 5)
    assert corpus_wer([]) == 0.0


def _table_distance(hyp, ref):
    table = np.zeros((len(hyp) + 1, len(ref) + 1), dtype=int)
    table[:, 0] = np.arange(len(hyp) + 1)
    table[0, :] = np.arange(len(ref) + 1)
    for i in range(1, len(hyp) + 1):
        for j in range(1, len(ref) + 1):
            table[i, j] = min(
                table[i - 1, j] + 1,
                table[i, j - 1] + 1,
                table[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]),
            )
    return int(table[-1, -1])


def test_one_substitution_in_three_words():
    assert wer(["a", "x", "c"], ["a", "b", "c"]) == pytest.approx(1 / 3)
    assert wer([1, 2], [1, 2]) == 0.0


def test_random_pairs_match_full_table_and_are_symmetric():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a = rng.integers(1, 4, size=rng.integers(1, 8)).tolist()
        b = rng.integers(1, 4, size=rng.integers(1, 8)).tolist()
        assert edit_distance(a, b) == _table_distance(a, b)
        assert wer(a, b) * len(b) == pytest.approx(wer(b, a) * len(a))
