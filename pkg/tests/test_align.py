import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybseq.align import (AlignParams, TooLarge, annealing_score, annealing_scores,
                          brute_force_score, rescore_rows, semi_global_score, semi_global_trace)
from hybseq.seq import random_seq, reverse_complement

GOLDENS = [
    ("GAATACTGTCAGTGAGAGGATCTGCC", "GAATACTGTCAGTGAGAGGATCTGCC", 130),
    ("TTGTCATACGCTGTAAGAG", "TTGTCATCCGCTGTAAGCG", 77),
    ("AAATCAGGTATGCGGTAAG", "AAATCAGGTACGTTGCGGTAAG", 86),
    ("CTGCGGCGCCGTTTGCATGCTCTCG", "AGAGCAAACGGCGCCGCAG", 31),
]

short = st.text(alphabet="ACGT", min_size=1, max_size=10)


@pytest.mark.parametrize("a,b,score", GOLDENS)
def test_goldens(a, b, score):
    assert semi_global_score(a, b) == score


def test_score_86_has_one_internal_gap_of_three():
    res = semi_global_trace("AAATCAGGTATGCGGTAAG", "AAATCAGGTACGTTGCGGTAAG")
    assert res.score == 86
    inner = res.rows[0].strip("-")
    assert inner.count("-") == 3 and "---" in inner


def test_identical_trace_is_all_match():
    res = semi_global_trace("ACGTTGCA", "ACGTTGCA")
    assert res.cigar == "8="


def test_tiny_cases():
    assert brute_force_score("A", "A") == 5
    assert brute_force_score("A", "C") == 0
    assert semi_global_score("A", "C") == 0


def test_brute_force_refuses_large():
    with pytest.raises(TooLarge):
        brute_force_score("A" * 15, "A" * 14)


def test_dp_matches_brute_force_random():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        a = "".join(rng.choice(list("ACGT"), int(rng.integers(1, 11))))
        b = "".join(rng.choice(list("ACGT"), int(rng.integers(1, 11))))
        assert semi_global_score(a, b) == brute_force_score(a, b)


@settings(max_examples=150)
@given(short, short)
def test_symmetry_and_upper_bound(a, b):
    s = semi_global_score(a, b)
    assert s == semi_global_score(b, a)
    assert 0 <= s <= 5 * min(len(a), len(b))


@settings(max_examples=150)
@given(st.text(alphabet="ACGT", min_size=1, max_size=26), st.text(alphabet="ACGT", min_size=1, max_size=26))
def test_trace_rescores_to_score(a, b):
    res = semi_global_trace(a, b)
    assert res.score == semi_global_score(a, b)
    assert rescore_rows(*res.rows) == res.score


def test_annealing_score_of_complement():
    s = "GAATACTGTCAGTGAGAGGATCTGCC"
    assert annealing_score(s, reverse_complement(s)) == 130


def test_annealing_score_symmetric_and_batch():
    rng = np.random.default_rng(11)
    pairs = [(random_seq(20, rng), random_seq(22, rng)) for _ in range(1000)]
    fwd = annealing_scores(pairs)
    rev = annealing_scores([(b, a) for a, b in pairs])
    np.testing.assert_array_equal(fwd, rev)
    assert fwd[0] == annealing_score(*pairs[0])
    # unrelated strands barely anneal
    assert np.median(fwd) < 50 and fwd.max() < 100


def test_param_validation():
    with pytest.raises(ValueError):
        AlignParams(gap_open=1, gap_extend=2)
    with pytest.raises(ValueError):
        AlignParams(match=-4, mismatch=5)
