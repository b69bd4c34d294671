import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qeleak.errors import DataError
from qeleak.metrics import (
    evidence_text_score,
    hungarian_assign,
    macro_f1,
    meteor,
    ndcg_at_k,
    recall_at_k,
    relevance_from_claims,
)


def ranking_of(*doc_ids):
    return [(doc_id, 1.0 - 0.01 * i) for i, doc_id in enumerate(doc_ids)]


def brute_force_assignment(matrix) -> float:
    """Exhaustive-permutation optimum for the rectangular assignment."""
    n_cand, n_ref = len(matrix), len(matrix[0]) if matrix else 0
    if n_cand == 0 or n_ref == 0:
        return 0.0
    best = 0.0
    if n_cand <= n_ref:
        for perm in itertools.permutations(range(n_ref), n_cand):
            best = max(best, sum(matrix[i][perm[i]] for i in range(n_cand)))
    else:
        for perm in itertools.permutations(range(n_cand), n_ref):
            best = max(best, sum(matrix[perm[j]][j] for j in range(n_ref)))
    return best


class TestRecall:
    def test_half_found(self):
        assert recall_at_k(ranking_of("d1", "x", "y"), {"d1", "d2"}, 5) == 0.5

    def test_all_found(self):
        assert recall_at_k(ranking_of("d1", "d2"), {"d1", "d2"}, 5) == 1.0

    def test_empty_relevant_rejected(self):
        with pytest.raises(DataError):
            recall_at_k(ranking_of("d1"), set(), 5)

    @given(st.integers(min_value=1, max_value=10))
    def test_nondecreasing_in_k(self, k):
        ranking = ranking_of(*[f"d{i}" for i in range(10)])
        relevant = {"d1", "d4", "d9"}
        assert recall_at_k(ranking, relevant, k) <= recall_at_k(ranking, relevant, k + 1)


class TestNdcg:
    def test_single_relevant_rank_1(self):
        assert ndcg_at_k(ranking_of("d1", "x"), {"d1"}, 5) == 1.0

    def test_single_relevant_rank_2(self):
        got = ndcg_at_k(ranking_of("x", "d1", "y"), {"d1"}, 5)
        assert got == pytest.approx(0.6309, abs=1e-4)

    def test_none_retrieved(self):
        assert ndcg_at_k(ranking_of("x", "y"), {"d1"}, 5) == 0.0

    def test_all_relevant_first_is_one(self):
        ranking = ranking_of("d1", "d2", "d3", "x", "y")
        assert ndcg_at_k(ranking, {"d1", "d2", "d3"}, 5) == pytest.approx(1.0)

    def test_ideal_uses_min_relevant_k(self):
        # 3 relevant, k=2: ideal places 2 of them; retrieving both gives 1.0
        ranking = ranking_of("d1", "d2")
        assert ndcg_at_k(ranking, {"d1", "d2", "d3"}, 2) == pytest.approx(1.0)


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1(["a", "b"], ["a", "b"], ["a", "b"]) == 1.0

    def test_hand_value(self):
        got = macro_f1(["A", "A"], ["A", "B"], ["A", "B"])
        assert got == pytest.approx(1 / 3, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            macro_f1(["a"], ["a", "b"], ["a", "b"])

    @given(st.lists(st.sampled_from(["x", "y", "z"]), min_size=1, max_size=30))
    def test_relabeling_invariance(self, golds):
        rng = random.Random(0)
        preds = [rng.choice(["x", "y", "z"]) for _ in golds]
        labels = ["x", "y", "z"]
        base = macro_f1(preds, golds, labels)
        mapping = {"x": "p", "y": "q", "z": "r"}
        assert macro_f1([mapping[p] for p in preds],
                        [mapping[g] for g in golds],
                        [mapping[l] for l in labels]) == pytest.approx(base)


class TestMeteor:
    def test_disjoint_zero(self):
        assert meteor("alpha beta", "gamma delta") == 0.0

    def test_identical_three_tokens(self):
        assert meteor("the cat sat", "the cat sat") == pytest.approx(0.98148, abs=1e-4)

    def test_identical_one_token(self):
        assert meteor("alpha", "alpha") == pytest.approx(0.5, abs=1e-12)

    def test_stem_stage_matches(self):
        # exact stage misses, Porter-stem stage aligns running/runs
        assert meteor("the dog running", "the dog runs") > \
            meteor("the dog walking", "the dog runs")

    @given(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=12))
    def test_self_score_formula(self, tokens):
        text = " ".join(tokens)
        m = len(tokens)
        expected = 1.0 * (1.0 - 0.5 * (1.0 / m) ** 3)
        assert meteor(text, text) == pytest.approx(expected, abs=1e-12)

    @given(
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=10),
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=10),
    )
    def test_range(self, cand, ref):
        score = meteor(" ".join(cand), " ".join(ref))
        assert 0.0 <= score <= 1.0


class TestHungarian:
    def test_hand_value(self):
        result = hungarian_assign([[0.9, 0.1], [0.2, 0.8]])
        assert sorted(result.pairs) == [(0, 0), (1, 1)]
        assert result.total == pytest.approx(1.7)
        assert result.normalized == pytest.approx(0.85)

    def test_identity_matrix(self):
        result = hungarian_assign([[1.0, 0.0], [0.0, 1.0]])
        assert result.normalized == pytest.approx(1.0)

    def test_rectangular_matching_size(self):
        rng = random.Random(5)
        matrix = [[rng.random() for _ in range(2)] for _ in range(5)]
        result = hungarian_assign(matrix)
        assert len(result.pairs) == 2
        cands = [i for i, _ in result.pairs]
        refs = [j for _, j in result.pairs]
        assert len(set(cands)) == len(cands)
        assert len(set(refs)) == len(refs)

    def test_empty_axes(self):
        assert hungarian_assign([]).normalized == 0.0
        assert hungarian_assign([]).pairs == []

    def test_normalization_divides_by_reference_count(self):
        # one candidate, three references: best pair over |Y| = 3
        result = hungarian_assign([[0.9, 0.3, 0.6]])
        assert result.normalized == pytest.approx(0.3)

    def test_matches_permutation_oracle(self):
        rng = random.Random(77)
        for _ in range(100):
            rows = rng.randint(1, 6)
            cols = rng.randint(1, 6)
            matrix = [[rng.random() for _ in range(cols)] for _ in range(rows)]
            expected = brute_force_assignment(matrix)
            assert hungarian_assign(matrix).total == pytest.approx(expected, abs=1e-9)

    def test_beats_random_matchings(self):
        rng = random.Random(31)
        matrix = [[rng.random() for _ in range(5)] for _ in range(5)]
        best = hungarian_assign(matrix).total
        for _ in range(100):
            perm = list(range(5))
            rng.shuffle(perm)
            assert best >= sum(matrix[i][perm[i]] for i in range(5)) - 1e-12


class TestEvidenceTextScore:
    def test_gold_subset_of_retrieved(self):
        gold = ["the harbor lantern glows at night", "timber prices fell sharply this year"]
        retrieved = gold + ["an unrelated filler sentence appears here"]
        assert evidence_text_score(retrieved, gold, scorer="meteor") >= 0.98

    def test_zero_overlap(self):
        assert evidence_text_score(["alpha beta"], ["gamma delta"], scorer="meteor") == 0.0

    def test_no_retrieved(self):
        assert evidence_text_score([], ["gold"], scorer="meteor") == 0.0

    def test_bertscore_requires_pair_scorer(self):
        with pytest.raises(DataError, match="meteor"):
            evidence_text_score(["a"], ["b"], scorer="bertscore")

    def test_bertscore_uses_pair_scorer(self):
        def fake(cands, refs):
            return [[0.5 for _ in refs] for _ in cands]

        got = evidence_text_score(["a", "b"], ["x"], scorer="bertscore", pair_scorer=fake)
        assert got == pytest.approx(0.5)


class TestRelevance:
    def test_from_claims(self):
        from qeleak.core import Claim, Evidence

        claims = [
            Claim("c1", "t", None, (Evidence(corpus_ref="d1"), Evidence(corpus_ref="d2"))),
            Claim("c2", "t", None, (Evidence(free_text="x"),)),
        ]
        assert relevance_from_claims(claims) == {"c1": {"d1", "d2"}}
