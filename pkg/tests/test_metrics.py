import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aemsr.errors import ContractError, DegenerateInputError
from aemsr.metrics import (MODE_COLUMNS, SNR_ROWS, corpus_wer, format_table, report_table,
                           table_to_csv, wer, word_accuracy)

from oracles import all_sentences, brute_force_wer

VOCAB5 = ("a", "b", "c", "d", "e")


def test_identical_is_zero():
    assert wer("a b c", "a b c").wer == 0.0


def test_substitution_and_insertion_example():
    r = wer("a b c", "a x c d")
    assert (r.S, r.I, r.D) == (1, 1, 0)
    assert r.wer == pytest.approx(2 / 3)


def test_empty_hypothesis_is_all_deletions():
    r = wer("a b c d e", "")
    assert r.D == 5 and r.wer == 1.0


def test_empty_reference_raises():
    with pytest.raises(DegenerateInputError):
        wer("", "a")
    with pytest.raises(DegenerateInputError):
        corpus_wer([""], [""])


def test_wer_is_asymmetric():
    assert wer("a b", "a b c d").wer == 1.0
    assert wer("a b c d", "a b").wer == 0.5


def test_case_folding_and_token_lists():
    assert wer("Bat PIN", ["bat", "pin"]).wer == 0.0


def test_dp_matches_enumeration_on_short_sentences():
    # every pair with up to two words on each side, empty references excluded
    for ref in all_sentences(VOCAB5, 2):
        if not ref:
            continue
        for hyp in all_sentences(VOCAB5, 2):
            r = wer(list(ref), list(hyp))
            assert (r.S, r.D, r.I) == brute_force_wer(ref, hyp)


@given(st.lists(st.sampled_from(VOCAB5), min_size=1, max_size=6),
       st.lists(st.sampled_from(VOCAB5), max_size=6))
@settings(max_examples=300, deadline=None)
def test_dp_matches_enumeration_random(ref, hyp):
    r = wer(ref, hyp)
    assert (r.S, r.D, r.I) == brute_force_wer(ref, hyp)


@given(st.lists(st.sampled_from(VOCAB5), min_size=1, max_size=8),
       st.lists(st.sampled_from(VOCAB5), max_size=8))
@settings(max_examples=200, deadline=None)
def test_wer_bounds(ref, hyp):
    r = wer(ref, hyp)
    assert abs(len(ref) - len(hyp)) <= r.errors <= max(len(ref), len(hyp))
    assert len(hyp) == len(ref) - r.D + r.I


def test_corpus_wer_pools_counts():
    refs, hyps = ["a b c d", "e"], ["a b c d", "x"]
    assert corpus_wer(refs, hyps) == pytest.approx(1 / 5)
    with pytest.raises(ContractError):
        corpus_wer(refs, hyps[:1])


def test_word_accuracy():
    assert word_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert word_accuracy([0, 0, 0], [1, 2, 3]) == 0.0
    assert word_accuracy(["x", "y"], ["x", "z"]) == 0.5
    with pytest.raises(ContractError):
        word_accuracy([1, 2], [1, 2, 3])


def test_report_table_layout():
    assert report_table({}) == [["SNR(dB)", "A", "V", "AV", "VA", "VAV"]]
    results = {(snr, m): 0.1234 for snr in (0, "clean", -10, 10) for m in MODE_COLUMNS}
    results[(5, "AV")] = 0.5
    table = report_table(results)
    assert [row[0] for row in table[1:]] == ["clean", "10", "5", "0", "-10"]
    assert table[1][1:] == ["12.3"] * 5
    assert table[3] == ["5", "-", "-", "50.0", "-", "-"]
    assert list(SNR_ROWS) == ["clean", 10, 5, 0, -5, -10]


def test_table_rendering():
    table = report_table({("clean", "A"): 0.05})
    text = format_table(table)
    assert text.splitlines()[1].split()[:2] == ["clean", "5.0"]
    assert table_to_csv(table).splitlines()[0] == "SNR(dB),A,V,AV,VA,VAV"
