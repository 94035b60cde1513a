import math
from types import SimpleNamespace

import numpy as np
import pytest

import oracles
from dimattn.metrics import (
    MetricBundle,
    corpus_bleu,
    coverage_entropy,
    instance_bundle,
    lcs_length,
    lead,
    lead_overlap,
    ngrams,
    novel_ngram_pct,
    repetition_ratio,
    rouge_l,
    rouge_n,
    short_long_split,
    split_sentences,
    write_csv,
)

# mpmath, 30 digits: entropy of [2, 1, 1] / 4
H_211 = 1.03972077083991796


def random_pairs(seed, count=200, vocab=5, max_len=9):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        a = rng.integers(0, vocab, rng.integers(0, max_len + 1)).tolist()
        b = rng.integers(0, vocab, rng.integers(0, max_len + 1)).tolist()
        yield a, b


class TestRouge:
    def test_identical(self):
        assert rouge_n("abcd", "abcd", 2)[2] == 1.0
        assert rouge_l("abcd", "abcd")[2] == 1.0

    def test_hand_unigram(self):
        p, r, f = rouge_n(["the", "cat", "sat"], ["the", "cat"], 1)
        assert (p, r) == (2 / 3, 1.0)
        assert f == pytest.approx(0.8, abs=1e-15)

    def test_disjoint(self):
        assert rouge_n("abc", "xyz", 1) == (0.0, 0.0, 0.0)

    def test_clipping(self):
        # "the" appears three times in the candidate but once in the reference
        assert rouge_n(["the"] * 3, ["the", "cat"], 1)[0] == 1 / 3

    def test_lcs_hand(self):
        assert lcs_length("acbd", "abcd") == 3
        assert rouge_l("acbd", "abcd")[:2] == (0.75, 0.75)

    def test_empty_candidate(self):
        assert rouge_l([], "abc") == (0.0, 0.0, 0.0)
        assert rouge_n([], "abc", 1) == (0.0, 0.0, 0.0)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            rouge_n("ab", "ab", 0)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_rouge_n_matches_oracle(self, n):
        for a, b in random_pairs(n):
            assert rouge_n(a, b, n) == oracles.rouge_n(a, b, n)

    def test_rouge_l_matches_oracle(self):
        for a, b in random_pairs(4):
            assert rouge_l(a, b) == oracles.rouge_l(a, b)

    def test_lcs_dp_matches_exhaustive(self):
        for a, b in random_pairs(5, count=150, max_len=7):
            assert lcs_length(a, b) == oracles.lcs_exhaustive(a, b)


class TestBleu:
    def test_perfect(self):
        corpus = [list("abcdef"), list("ghijk")]
        assert corpus_bleu(corpus, corpus) == 1.0

    def test_brevity_penalty_closed_form(self):
        ref = list("abcdefgh")
        cand = ref[:6]
        assert corpus_bleu([cand], [ref]) == pytest.approx(math.exp(1 - 8 / 6), rel=1e-15)

    def test_no_fourgram_match(self):
        assert corpus_bleu([list("abcab")], [list("abcxbcab")[:4]]) == 0.0
        assert corpus_bleu([list("abcx")], [list("abcy")]) == 0.0

    def test_smoothing_keeps_positive(self):
        assert corpus_bleu([list("abcx")], [list("abcy")], smooth=True) > 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            corpus_bleu([[1]], [[1], [2]])

    @pytest.mark.parametrize("smooth", [False, True])
    def test_matches_oracle(self, smooth):
        rng = np.random.default_rng(6)
        pairs = list(random_pairs(7, count=400, vocab=3, max_len=12))
        for start in range(0, 400, 4):
            chunk = pairs[start : start + int(rng.integers(1, 5))]
            cands, refs = [a for a, _ in chunk], [b for _, b in chunk]
            assert corpus_bleu(cands, refs, smooth=smooth) == pytest.approx(
                oracles.bleu(cands, refs, smooth=smooth), rel=1e-12, abs=0
            )


class TestRepetitionAndNovelty:
    def test_hand_examples(self):
        assert repetition_ratio("abcd", 1) == 0.0
        assert repetition_ratio("abab", 1) == 0.5
        assert repetition_ratio("ababa", 2) == 0.5

    def test_short_sequence(self):
        assert repetition_ratio("ab", 3) == 0.0

    def test_novel_hand(self):
        src = list("the cat sat on the mat".split())
        assert novel_ngram_pct(src[1:4], src, 2) == 0.0
        assert novel_ngram_pct(["dog", "ran"], src, 1) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_matches_oracle(self, n):
        for a, b in random_pairs(10 + n):
            assert repetition_ratio(a, n) == oracles.repetition(a, n)
            assert novel_ngram_pct(a, b, n) == oracles.novel(a, b, n)

    def test_ngrams(self):
        assert ngrams("abc", 2) == [("a", "b"), ("b", "c")]
        assert ngrams("ab", 3) == []


class TestLead:
    SOURCE = ["a", "b", ".", "c", ".", "d", "e", ".", "f"]

    def test_split(self):
        assert split_sentences(self.SOURCE, ".") == [["a", "b"], ["c"], ["d", "e"], ["f"]]

    def test_lead(self):
        assert lead(self.SOURCE, 2, ".") == ["a", "b", "c"]

    def test_no_delimiter_is_one_sentence(self):
        assert lead(list("xyz"), 3, ".") == list("xyz")

    def test_exact_lead_scores_one(self):
        scores = lead_overlap(["a", "b", "c", "d", "e"], self.SOURCE, 3)
        assert all(v[2] == 1.0 for v in scores.values())

    def test_disjoint_scores_zero(self):
        scores = lead_overlap(["q", "r"], self.SOURCE, 3)
        assert all(v == (0.0, 0.0, 0.0) for v in scores.values())


class TestCoverageEntropy:
    def test_uniform(self):
        assert coverage_entropy([0.3] * 4) == pytest.approx(math.log(4), rel=1e-15)

    def test_oracle(self):
        assert coverage_entropy([2, 1, 1]) == pytest.approx(H_211, rel=1e-15)

    def test_single_mass(self):
        assert coverage_entropy([0, 5, 0]) == 0.0

    def test_scale_invariant(self):
        c = np.random.default_rng(0).random(10)
        assert coverage_entropy(c) == pytest.approx(coverage_entropy(7.5 * c), rel=1e-14)

    def test_uniform_is_max(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            assert coverage_entropy(rng.random(6)) <= math.log(6) + 1e-12

    def test_invalid(self):
        with pytest.raises(ValueError):
            coverage_entropy([0, 0])
        with pytest.raises(ValueError):
            coverage_entropy([1, -1])


class TestShortLongSplit:
    def test_odd_count_puts_middle_in_short_half(self):
        items = [SimpleNamespace(source=[0] * k, v=k) for k in (5, 1, 3, 2, 4)]
        short, long = short_long_split(items, lambda xs: [x.v for x in xs])
        assert short == [1, 2, 3]
        assert long == [4, 5]

    def test_stable_ties(self):
        items = [SimpleNamespace(source=[0, 0], v=i) for i in range(4)]
        short, long = short_long_split(items, lambda xs: [x.v for x in xs])
        assert (short, long) == ([0, 1], [2, 3])

    def test_too_few(self):
        with pytest.raises(ValueError):
            short_long_split([SimpleNamespace(source=[1])], len)


class TestBundle:
    def test_fields_and_ranges(self):
        b = instance_bundle(list("abcab"), list("abcd"), source=list("abcd.ef"), coverage=[1.0, 2.0, 0.0])
        row = b.flat()
        assert row["rouge1_r"] == 0.75
        assert set(row) >= {"bleu", "rep1", "rep2", "rep3", "novel5", "lead_rouge1_f", "entropy"}
        assert all(0.0 <= v <= 1.0 for k, v in row.items() if k != "entropy")

    def test_no_coverage_gives_nan(self):
        assert math.isnan(MetricBundle().flat()["entropy"])

    def test_write_csv(self, tmp_path):
        path = tmp_path / "m.csv"
        write_csv(path, [{"a": 1}, {"a": 2, "b": 3}])
        assert path.read_text().splitlines() == ["a,b", "1,", "2,3"]
        with pytest.raises(ValueError):
            write_csv(path, [])
