import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qeleak.core import Claim, Evidence, RunConfig
from qeleak.errors import DataError
from qeleak.expansion import (
    PROMPTS,
    GenerationRecord,
    PromptTemplate,
    expand_query2doc,
    generate_all,
    hyde_query_vector,
    read_generations,
    render_prompt,
)
from qeleak.providers import DiskCache, MockProvider


def claim_of(text, claim_id="c1"):
    return Claim(claim_id, text, None, (Evidence(free_text="ev"),))


class TestPromptTemplates:
    def test_query2doc_layout(self):
        got = render_prompt(PROMPTS["query2doc"], claim_of("X"))
        assert got == "Write a passage that answers the following query: X"

    def test_newline_inserted_verbatim(self):
        got = render_prompt(PROMPTS["hyde-fever"], claim_of("line1\nline2"))
        assert "Claim: line1\nline2" in got

    def test_slot_invariant_at_construction(self):
        with pytest.raises(ValueError):
            PromptTemplate("bad", "no slot here")
        with pytest.raises(ValueError):
            PromptTemplate("bad", "{CLAIM} and {CLAIM}")

    def test_registry_prompts(self):
        assert PROMPTS["hyde-fever"].template.startswith(
            "Please write a wikipedia passage to verify the claim."
        )
        assert PROMPTS["hyde-scifact"].template.startswith(
            "Please write a scientific paper passage to support/refute the claim."
        )
        assert PROMPTS["hyde-averitec"].template.startswith(
            "Please write a fact-checking article to verify the claim."
        )


class TestExpandQuery2doc:
    def test_hand_example(self):
        assert expand_query2doc("a b", "x y", n=2) == "a b a b x y"

    def test_n_one(self):
        assert expand_query2doc("q", "d", n=1) == "q d"

    def test_default_is_five_copies(self):
        got = expand_query2doc("q", "d")
        assert got == "q q q q q d"

    def test_empty_claim_rejected(self):
        with pytest.raises(DataError):
            expand_query2doc("", "d", n=2)

    def test_empty_pseudo_doc_rejected(self):
        with pytest.raises(DataError):
            expand_query2doc("q", "", n=2)

    @given(
        st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=5), min_size=1, max_size=6),
        st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=5), min_size=1, max_size=6),
        st.integers(min_value=1, max_value=6),
    )
    @settings(max_examples=100)
    def test_round_trip_tokens(self, claim_tokens, doc_tokens, n):
        claim = " ".join(claim_tokens)
        doc = " ".join(doc_tokens)
        expanded = expand_query2doc(claim, doc, n)
        assert expanded.split(" ") == claim_tokens * n + doc_tokens


class TestHydeQueryVector:
    def test_hand_n1(self):
        got = hyde_query_vector([1.0, 0.0], [[0.0, 1.0]])
        assert np.allclose(got, [0.5, 0.5], atol=1e-15)

    def test_identity_under_equal_vectors(self):
        got = hyde_query_vector([2.0, 2.0], [[2.0, 2.0]])
        assert np.allclose(got, [2.0, 2.0], atol=1e-15)

    def test_hand_n2_weights_query_inside_sum(self):
        got = hyde_query_vector([1.0, 0.0], [[0.0, 1.0], [0.0, 3.0]])
        assert np.allclose(got, [2 / 3, 4 / 3], atol=1e-15)

    def test_n2_logs_weighting(self, caplog):
        with caplog.at_level("WARNING"):
            hyde_query_vector([1.0], [[1.0], [1.0]])
        assert "N/(N+1)" in caplog.text

    def test_empty_docs_rejected(self):
        with pytest.raises(DataError):
            hyde_query_vector([1.0], [])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DataError):
            hyde_query_vector([1.0, 0.0], [[1.0]])

    @given(st.integers(1, 64), st.floats(-3, 3), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_linearity(self, dim, alpha, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=dim)
        d = rng.normal(size=dim)
        left = hyde_query_vector(alpha * q, [alpha * d])
        right = alpha * hyde_query_vector(q, [d])
        assert np.allclose(left, right, atol=1e-12)

    @given(st.integers(1, 64), st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_n1_is_arithmetic_mean(self, dim, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=dim)
        d = rng.normal(size=dim)
        got = hyde_query_vector(q, [d])
        assert np.array_equal(got, (q + d) / 2.0)


class TestGenerationRecord:
    def test_empty_text_requires_failed_flag(self):
        with pytest.raises(DataError):
            GenerationRecord("c1", "query2doc", "m", 0, "query2doc", "")
        rec = GenerationRecord("c1", "query2doc", "m", 0, "query2doc", "", failed=True)
        assert rec.failed


class TestGenerateAll:
    def make_claims(self, n):
        return [claim_of(f"Claim number {i} about topic.", f"c{i:02d}") for i in range(n)]

    def config(self, **kw):
        return RunConfig(method="query2doc", model_id="mock-llm",
                         claims_path="x", corpus_path="y", **kw)

    def test_cardinality(self, tmp_path):
        provider = MockProvider(seed=0)
        records = generate_all(self.make_claims(3), self.config(repeats=2), provider,
                               out_path=tmp_path / "gen.jsonl")
        assert len(records) == 6
        assert sorted({r.repeat_index for r in records}) == [0, 1]
        assert all(r.method == "query2doc" for r in records)

    def test_default_repeats_is_eight(self, tmp_path):
        provider = MockProvider(seed=0)
        records = generate_all(self.make_claims(1), self.config(), provider)
        assert len(records) == 8

    def test_warm_cache_rerun_identical_zero_calls(self, tmp_path):
        cache = DiskCache(tmp_path / "cache")
        provider = MockProvider(seed=0, cache=cache)
        config = self.config(repeats=2)
        first = generate_all(self.make_claims(2), config, provider,
                             out_path=tmp_path / "a.jsonl")
        calls = provider.calls["chat"]
        second = generate_all(self.make_claims(2), config, provider,
                              out_path=tmp_path / "b.jsonl")
        assert provider.calls["chat"] == calls
        assert first == second

    def test_resume_skips_existing(self, tmp_path):
        provider = MockProvider(seed=0)
        config = self.config(repeats=2)
        out = tmp_path / "gen.jsonl"
        generate_all(self.make_claims(2), config, provider, out_path=out)
        calls = provider.calls["chat"]
        records = generate_all(self.make_claims(3), config, provider, out_path=out)
        assert len(records) == 6
        assert provider.calls["chat"] == calls + 2  # only the new claim

    def test_failures_flagged_not_dropped(self, tmp_path):
        from qeleak.errors import ProviderError

        class Flaky(MockProvider):
            def _chat_raw(self, req):
                if "number 1" in req.prompt:
                    raise ProviderError("boom", status=500)
                return super()._chat_raw(req)

        records = generate_all(self.make_claims(2), self.config(repeats=1),
                               Flaky(seed=0), out_path=tmp_path / "gen.jsonl")
        assert len(records) == 2
        flagged = [r for r in records if r.failed]
        assert len(flagged) == 1 and flagged[0].claim_id == "c01"

    def test_records_sorted_and_persisted(self, tmp_path):
        provider = MockProvider(seed=0)
        out = tmp_path / "gen.jsonl"
        records = generate_all(self.make_claims(3), self.config(repeats=2),
                               provider, out_path=out)
        keys = [(r.claim_id, r.repeat_index) for r in records]
        assert keys == sorted(keys)
        assert read_generations(out) == records

    def test_params_snapshot(self, tmp_path):
        provider = MockProvider(seed=0)
        records = generate_all(self.make_claims(1), self.config(repeats=1), provider)
        assert records[0].params == {"temperature": 0.7, "top_p": 1.0, "max_tokens": 512}
