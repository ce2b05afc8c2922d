import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybseq.seq import (BadLength, DnaSeq, EmptySequence, InvalidBase, MutationProfile, TooLong,
                        decode_one_hot, gc_content, max_run, mutate, one_hot_pair, one_hot_pairs,
                        parse, random_seq, read_fasta, reverse_complement, write_fasta)

dna = st.text(alphabet="ACGT", min_size=1, max_size=64)


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def test_parse_valid_and_uppercase():
    assert parse("ACGT") == "ACGT"
    assert parse("acgt") == "ACGT"
    s = parse("GAATACTGTCAGTGAGAGGATCTGCC")
    assert isinstance(s, DnaSeq) and len(s) == 26


def test_parse_rejects_rna_with_position():
    with pytest.raises(InvalidBase) as exc:
        parse("ACGU")
    assert exc.value.position == 3


def test_parse_rejects_empty_and_long():
    with pytest.raises(EmptySequence):
        parse("")
    with pytest.raises(TooLong):
        parse("A" * 65)


def test_reverse_complement_examples():
    assert reverse_complement("A") == "T"
    assert reverse_complement("ACGT") == "ACGT"
    assert reverse_complement("CCATGGAGGCGCGCCTTT") == "AAAGGCGCGCCTCCATGG"


@given(dna)
def test_reverse_complement_involution_and_gc_symmetry(s):
    assert reverse_complement(reverse_complement(s)) == s
    assert gc_content(s) == pytest.approx(gc_content(reverse_complement(s)))


def test_gc_content():
    assert gc_content("GGCC") == 1.0
    assert gc_content("AATT") == 0.0
    assert gc_content("ACGT") == 0.5


def test_random_seq_run_limit_and_determinism():
    s = random_seq(18, np.random.default_rng(7))
    assert len(s) == 18 and max_run(s) <= 2
    assert random_seq(20, np.random.default_rng(3)) == random_seq(20, np.random.default_rng(3))


def test_random_seq_never_has_triple_runs():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        s = random_seq(int(rng.integers(18, 27)), rng)
        assert not any(s[i] == s[i + 1] == s[i + 2] for i in range(len(s) - 2))


def test_random_seq_uniform_over_admissible_short_window():
    # the first three bases of admissible sequences: 4*4*4 - 4 equally likely prefixes
    rng = np.random.default_rng(1)
    counts = {}
    for _ in range(12_000):
        p = random_seq(18, rng)[:3]
        counts[p] = counts.get(p, 0) + 1
    assert len(counts) == 60
    vals = np.array(list(counts.values()))
    assert vals.min() > 0.6 * vals.mean() and vals.max() < 1.4 * vals.mean()


@pytest.mark.parametrize("n", [17, 27])
def test_random_seq_bad_length(n):
    with pytest.raises(BadLength):
        random_seq(n, np.random.default_rng(0))


def test_minor_substitution_changes_one_base():
    rng = np.random.default_rng(5)
    for _ in range(200):
        s = random_seq(22, rng)
        m = mutate(s, MutationProfile.minor("substitute", (1, 1)), rng)
        assert len(m) == len(s)
        assert sum(x != y for x, y in zip(s, m)) == 1


def test_severe_edit_distance_bounded():
    rng = np.random.default_rng(6)
    prof = MutationProfile("severe", count_range=(5, 5))
    for _ in range(200):
        s = random_seq(22, rng)
        m = mutate(s, prof, rng)
        assert edit_distance(s, m) <= 5
        assert 18 <= len(m) <= 26


def test_zero_count_is_identity():
    rng = np.random.default_rng(0)
    s = random_seq(20, rng)
    assert mutate(s, MutationProfile.minor("insert", (0, 0)), rng) == s


def test_profile_validation():
    with pytest.raises(ValueError):
        MutationProfile("minor", ("insert", "delete"), (1, 2))
    with pytest.raises(ValueError):
        MutationProfile("minor", ("insert",), (1, 3))
    with pytest.raises(ValueError):
        MutationProfile("severe", ("insert",), (5, 8))
    with pytest.raises(ValueError):
        MutationProfile("severe", count_range=(4, 8))


def test_mutations_respect_length_window():
    rng = np.random.default_rng(9)
    s = DnaSeq("ACGTACGTACGTACGTAC")  # 18, cannot shrink
    for _ in range(100):
        assert len(mutate(s, MutationProfile.minor("delete"), rng)) == 18


def test_one_hot_pair_small():
    g = one_hot_pair("A", "C", n_max=2)
    assert g.shape == (2, 4, 2)
    assert g[0, :, 0].tolist() == [1, 0, 0, 0]
    assert g[1, :, 0].tolist() == [0, 1, 0, 0]
    assert not g[:, :, 1].any()


def test_one_hot_pair_full_width():
    s = "GAATACTGTCAGTGAGAGGATCTGCC"
    g = one_hot_pair(s, reverse_complement(s))
    assert g.shape == (2, 4, 26)
    assert int(g.sum()) == 52


def test_one_hot_too_long():
    with pytest.raises(TooLong):
        one_hot_pair("A" * 27, "A")


@settings(max_examples=200)
@given(st.text(alphabet="ACGT", min_size=1, max_size=26), st.text(alphabet="ACGT", min_size=1, max_size=26))
def test_one_hot_round_trip_and_column_sums(a, b):
    g = one_hot_pair(a, b)
    sums = g.sum(axis=1)
    assert set(np.unique(sums[0, :len(a)])) == {1.0} and not sums[0, len(a):].any()
    assert set(np.unique(sums[1, :len(b)])) == {1.0} and not sums[1, len(b):].any()
    assert decode_one_hot(g) == (a, b)


def test_batch_encoding_matches_single():
    pairs = [("ACGT", "TTGCA"), ("GGGCC", "A")]
    batch = one_hot_pairs(pairs)
    for k, (a, b) in enumerate(pairs):
        np.testing.assert_array_equal(batch[k], one_hot_pair(a, b))


def test_fasta_round_trip(tmp_path):
    seqs = ["ACGTAC", "GGCCAATT"]
    write_fasta(seqs, tmp_path / "x.fasta")
    recs = read_fasta(tmp_path / "x.fasta")
    assert [r.id for r in recs] == ["seq0", "seq1"]
    assert [r.seq for r in recs] == seqs
