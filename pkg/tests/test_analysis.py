import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qeleak.analysis import (
    GROUP_ALL,
    GROUP_MATCHED,
    GROUP_UNMATCHED,
    Comparison,
    build_report,
    mann_whitney_u,
    mean_se,
    render_text,
    report_json,
    stratify,
)
from qeleak.errors import DataError
from qeleak.matching import MatchRecord


def rec(claim_id, matched, repeat=0):
    return MatchRecord(claim_id=claim_id, repeat_index=repeat, matched=matched)


class TestStratify:
    def test_partition(self):
        claim_ids = ["c1", "c2", "c3", "c4"]
        records = [rec("c1", True), rec("c2", False), rec("c3", True), rec("c4", False)]
        matched, unmatched = stratify(claim_ids, records)
        assert matched == {"c1", "c3"}
        assert unmatched == {"c2", "c4"}

    def test_all_matched_leaves_empty_unmatched(self):
        matched, unmatched = stratify(["c1"], [rec("c1", True)])
        assert matched == {"c1"} and unmatched == set()

    def test_missing_record_names_claim(self):
        with pytest.raises(DataError, match="c2"):
            stratify(["c1", "c2"], [rec("c1", True)])

    def test_duplicate_record_names_claim(self):
        with pytest.raises(DataError, match="c1"):
            stratify(["c1"], [rec("c1", True), rec("c1", False)])

    @given(st.dictionaries(st.sampled_from([f"c{i}" for i in range(10)]),
                           st.booleans(), min_size=1))
    def test_partition_law(self, flags):
        claim_ids = sorted(flags)
        records = [rec(cid, flag) for cid, flag in flags.items()]
        matched, unmatched = stratify(claim_ids, records)
        assert matched | unmatched == set(claim_ids)
        assert matched & unmatched == set()


class TestMeanSe:
    def test_constant(self):
        assert mean_se([2, 2, 2]) == (2.0, 0.0)

    def test_hand_value(self):
        mean, se = mean_se([1, 3])
        assert mean == 2.0
        assert se == pytest.approx(1.0, abs=1e-12)

    def test_single_value_convention(self):
        assert mean_se([5]) == (5.0, 0.0)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            mean_se([])

    @given(st.floats(min_value=-100, max_value=100), st.integers(2, 10))
    def test_constant_vector_zero_se(self, value, n):
        assert mean_se([value] * n)[1] == 0.0


class TestMannWhitney:
    def test_exact_hand_case(self):
        u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
        assert u == 0.0
        assert p == pytest.approx(0.1, abs=1e-12)

    def test_symmetry(self):
        _, p1 = mann_whitney_u([1, 5, 2], [4, 3, 6])
        _, p2 = mann_whitney_u([4, 3, 6], [1, 5, 2])
        assert p1 == pytest.approx(p2, abs=1e-12)

    def test_identical_samples_p_one(self):
        _, p = mann_whitney_u([1, 2, 3], [1, 2, 3])
        assert p == 1.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            mann_whitney_u([], [1])

    def test_exact_matches_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = random.Random(8)
        for _ in range(30):
            n1, n2 = rng.randint(2, 6), rng.randint(2, 6)
            pool = rng.sample(range(100), n1 + n2)  # tie-free
            a, b = pool[:n1], pool[n1:]
            u, p = mann_whitney_u(a, b)
            ref = scipy_stats.mannwhitneyu(a, b, method="exact",
                                           alternative="two-sided")
            assert u == pytest.approx(ref.statistic)
            assert p == pytest.approx(ref.pvalue, abs=1e-9)

    def test_normal_path_matches_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = random.Random(9)
        for _ in range(20):
            n1, n2 = rng.randint(7, 12), rng.randint(7, 12)
            a = [rng.random() for _ in range(n1)]
            b = [rng.random() + 0.3 for _ in range(n2)]
            u, p = mann_whitney_u(a, b)
            ref = scipy_stats.mannwhitneyu(a, b, method="asymptotic",
                                           alternative="two-sided")
            assert u == pytest.approx(ref.statistic)
            assert p == pytest.approx(ref.pvalue, rel=1e-6)

    def test_normal_path_with_ties_matches_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        a = [1, 2, 2, 3, 5, 5, 6, 7, 7, 7]
        b = [2, 2, 4, 4, 5, 8, 8, 9, 9, 1]
        u, p = mann_whitney_u(a, b)
        ref = scipy_stats.mannwhitneyu(a, b, method="asymptotic",
                                       alternative="two-sided")
        assert u == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue, rel=1e-6)

    def test_all_equal_values_p_one(self):
        _, p = mann_whitney_u([3] * 10, [3] * 10)
        assert p == 1.0


def small_report(**overrides):
    values = [
        {
            GROUP_ALL: {"Recall@5": 0.36, "F1": 0.55},
            GROUP_MATCHED: {"Recall@5": 0.40, "F1": 0.58},
            GROUP_UNMATCHED: {"Recall@5": 0.24, "F1": 0.45},
        },
        {
            GROUP_ALL: {"Recall@5": 0.37, "F1": 0.56},
            GROUP_MATCHED: {"Recall@5": 0.41, "F1": 0.59},
            GROUP_UNMATCHED: {"Recall@5": 0.23, "F1": 0.44},
        },
    ]
    kwargs = dict(
        method="query2doc",
        model_id="mock-llm",
        eval_mode="id",
        k=5,
        metrics=["Recall@5", "F1"],
        per_repeat_group_values=values,
        group_sizes={GROUP_ALL: [4, 4], GROUP_MATCHED: [2, 2], GROUP_UNMATCHED: [2, 2]},
        baseline_name="BM25",
        baseline={"Recall@5": 0.31, "F1": 0.54},
        matched_rate={"mean": 0.5, "se": 0.0, "per_repeat": {"0": 0.5, "1": 0.5}},
        comparisons=[
            Comparison("matched_vs_unmatched", "Recall@5", "per_claim_pooled",
                       a=[1.0, 1.0, 0.9, 0.8], b=[0.1, 0.0, 0.2, 0.0]),
        ],
        tallies={"nli_parse_failures": 0},
        tool_version="0.1.0",
    )
    kwargs.update(overrides)
    return build_report(**kwargs)


class TestBuildReport:
    def test_cell_shape(self):
        report = small_report()
        cell = report.groups[GROUP_ALL]["Recall@5"]
        assert cell.n_repeats == 2
        assert cell.mean == pytest.approx(0.365)
        assert cell.se == pytest.approx(mean_se([0.36, 0.37])[1])

    def test_significance_computed(self):
        report = small_report()
        res = report.significance[0]
        assert res.name == "matched_vs_unmatched"
        assert res.p < 0.05
        assert res.mean_a > res.mean_b

    def test_empty_group_renders_none(self):
        values = [{
            GROUP_ALL: {"Recall@5": 0.5},
            GROUP_MATCHED: {"Recall@5": 0.5},
            GROUP_UNMATCHED: {"Recall@5": None},
        }]
        report = build_report(
            method="query2doc", model_id="m", eval_mode="id", k=5,
            metrics=["Recall@5"], per_repeat_group_values=values,
            group_sizes={GROUP_ALL: [2], GROUP_MATCHED: [2], GROUP_UNMATCHED: [0]},
        )
        assert report.groups[GROUP_UNMATCHED]["Recall@5"] is None
        text = render_text(report)
        assert "¬M" in text

    def test_json_deterministic(self):
        a = report_json(small_report())
        b = report_json(small_report())
        assert a == b
        parsed = json.loads(a)
        assert parsed["groups"]["M"]["Recall@5"]["mean"] == 0.405

    def test_text_table_structure(self):
        text = render_text(small_report())
        lines = text.splitlines()
        assert any("BM25" in ln and "31.0" in ln for ln in lines)
        assert any(ln.startswith("query2doc") and "ALL" in ln for ln in lines)
        assert any("±" in ln for ln in lines)
        assert any("matched_vs_unmatched" in ln for ln in lines)

    def test_inconsistent_repeats_rejected(self):
        values = [{GROUP_ALL: {"Recall@5": 0.5}, GROUP_MATCHED: {}}]
        with pytest.raises(DataError):
            build_report(
                method="q", model_id="m", eval_mode="id", k=5,
                metrics=["Recall@5"], per_repeat_group_values=values,
                group_sizes={},
            )
