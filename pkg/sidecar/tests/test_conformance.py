"""Wire-protocol conformance: the primary toolkit's provider client and
its contract suite run unchanged against the live sidecar, and the
service's NLI head reaches the agreement bar on the hand-labeled fixture.
"""

import json
import time
from pathlib import Path

import requests

from qeleak.contract import run_all_checks
from qeleak.providers import HttpProvider

DATA = Path(__file__).parent / "data"


def make_provider(sidecar_url: str) -> HttpProvider:
    return HttpProvider(sidecar_url, scorer_url=sidecar_url,
                        nli_route="endpoint", api_key="")


def test_provider_contract_suite_passes(sidecar_url):
    start = time.monotonic()
    provider = make_provider(sidecar_url)
    health = requests.get(f"{sidecar_url}/health", timeout=10).json()
    run_all_checks(provider, health["embedding_model"], health["nli_model"])
    assert time.monotonic() - start < 300


def test_health_dim_matches_embeddings(sidecar_url):
    provider = make_provider(sidecar_url)
    health = requests.get(f"{sidecar_url}/health", timeout=10).json()
    vectors = provider.embed(["one text", "two texts"], health["embedding_model"])
    assert all(len(vec) == health["dim"] for vec in vectors)


def test_nli_fixture_agreement(sidecar_url):
    """>= 80% agreement with the 20 hand-labeled pairs."""
    provider = make_provider(sidecar_url)
    pairs = json.loads((DATA / "nli_pairs.json").read_text("utf-8"))["pairs"]
    assert len(pairs) == 20
    agree = 0
    for pair in pairs:
        label, failed = provider.nli_judge(pair["premise"], pair["hypothesis"], "nli")
        assert not failed
        if label == pair["label"]:
            agree += 1
    assert agree / len(pairs) >= 0.8, f"only {agree}/20 pairs agree"


def test_identity_pairs_entail(sidecar_url):
    """Identical premise/hypothesis: entailment on >= 19 of 20 pairs."""
    provider = make_provider(sidecar_url)
    pairs = json.loads((DATA / "nli_pairs.json").read_text("utf-8"))["pairs"]
    texts = [p["premise"] for p in pairs]
    assert len(texts) == 20
    hits = sum(
        1 for text in texts
        if provider.nli_judge(text, text, "nli")[0] == "entailment"
    )
    assert hits >= 19, f"only {hits}/20 identity pairs entail"


def test_dense_index_builds_through_sidecar(sidecar_url, tmp_path):
    """The primary's vector-index build path works over the live wire."""
    from qeleak.core import Corpus, Document
    from qeleak.dense import build_vector_index, dense_search

    provider = make_provider(sidecar_url)
    health = requests.get(f"{sidecar_url}/health", timeout=10).json()
    corpus = Corpus([
        Document("d1", "the harbor lantern glows at night"),
        Document("d2", "timber prices fell sharply"),
        Document("d3", "the orchestra performed a symphony"),
    ])
    index = build_vector_index(corpus, provider, model_id=health["embedding_model"])
    assert index.matrix.shape == (3, health["dim"])
    q_vec = provider.embed(["harbor lantern at night"], health["embedding_model"])[0]
    ranking = dense_search(index, q_vec, 3)
    assert ranking[0][0] == "d1"
