"""Provider contract checks, shared by the unit tests and by conformance
testing of any live endpoint (e.g. the local sidecar service).

Each check raises AssertionError with a readable message on violation, so
the same suite runs under pytest and against a running service.
"""

from .providers import NLI_LABELS, Provider


def check_embedding_contract(provider: Provider, model_id: str) -> None:
    """Determinism, ordering, uniform dimension, repeat-input equality."""
    texts = ["a cold harbor wind", "granite beacon", "a cold harbor wind"]
    first = provider.embed(texts, model_id)
    second = provider.embed(texts, model_id)
    assert first == second, "embed is not deterministic for identical inputs"
    assert len(first) == len(texts), "embed must be order-preserving, one vector per text"
    dims = {len(v) for v in first}
    assert len(dims) == 1, f"embedding dims differ within a batch: {dims}"
    assert first[0] == first[2], "identical texts must embed identically"
    assert first[0] != first[1], "distinct texts should not collide"
    try:
        provider.embed([], model_id)
    except ValueError:
        pass
    else:
        raise AssertionError("embed([]) must be rejected as a precondition violation")


def check_nli_contract(provider: Provider, model_id: str) -> None:
    """Labels stay in the three-way set; identity pairs entail; flags work."""
    label, failed = provider.nli_judge(
        "The museum opens on Monday.", "The museum opens on Monday.", model_id
    )
    assert label in NLI_LABELS, f"label {label!r} outside the three-way set"
    assert label == "entailment", "identical premise/hypothesis should entail"
    assert not failed
    label, _ = provider.nli_judge(
        "The museum opens on Monday.", "Quarterly basalt exports fell.", model_id
    )
    assert label in NLI_LABELS, f"label {label!r} outside the three-way set"
    for premise, hypothesis in (("", "x"), ("x", ""), ("  ", "x")):
        try:
            provider.nli_judge(premise, hypothesis, model_id)
        except ValueError:
            continue
        raise AssertionError("empty premise/hypothesis must be rejected")


def check_score_contract(provider: Provider, scorer: str = "bertscore") -> None:
    """Matrix shape, determinism, [0,1] range, self-similarity dominance."""
    candidates = ["the harbor lantern glows", "timber prices fell sharply"]
    references = ["the harbor lantern glows", "orchard wages rose", "timber prices fell sharply"]
    matrix = provider.score_pairs(candidates, references, scorer)
    again = provider.score_pairs(candidates, references, scorer)
    assert matrix == again, "score_pairs is not deterministic"
    assert len(matrix) == len(candidates)
    assert all(len(row) == len(references) for row in matrix)
    for row in matrix:
        for val in row:
            assert 0.0 <= val <= 1.0, f"score {val} outside [0, 1]"
    # each candidate appears verbatim in references: that entry tops its row
    assert matrix[0][0] == max(matrix[0]), "identical pair must dominate its row"
    assert matrix[1][2] == max(matrix[1]), "identical pair must dominate its row"
    assert provider.score_pairs([], references, scorer) == []
    assert provider.score_pairs(candidates, [], scorer) == [[], []]


def run_all_checks(provider: Provider, model_id: str, nli_model_id: str | None = None,
                   scorer: str = "bertscore") -> None:
    check_embedding_contract(provider, model_id)
    check_nli_contract(provider, nli_model_id or model_id)
    check_score_contract(provider, scorer)
