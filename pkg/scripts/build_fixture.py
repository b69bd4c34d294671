#!/usr/bin/env python3
"""Generate the bundled toy fixture: 30 claims, 200 documents, canned mock
generations for both expansion methods, and the planted-entailment ground
truth.

Construction guarantees, relied on by the smoke tests:
  * every planted claim's canned generations contain each gold document's
    fact sentence verbatim (entailed under the mock's containment rule,
    and carrying rare index terms that pull the gold docs to the top);
  * unplanted claims' generations are filler that is never a substring of
    any gold document text;
  * each claim has five dedicated short distractor documents hammering its
    first two topic words, so claim-only retrieval misses the gold docs;
  * the first generated sentence reproduces the claim byte-for-byte, so
    the reproduction filter always has work to do.
"""

import json
import random
from pathlib import Path

from qeleak.core import RunConfig
from qeleak.expansion import PROMPTS
from qeleak.providers import MockProvider

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "qeleak" / "fixtures" / "toy"

N_CLAIMS = 30
N_DOCS = 200
REPEATS = 8
SEED = 20240801

TOPICS = [
    "harbor", "signal", "meadow", "lantern", "summit", "railway", "orchard",
    "compass", "quarry", "beacon", "saddle", "timber", "harvest", "lagoon",
    "granite", "willow", "anchor", "furnace", "prairie", "chapel", "mill",
    "canyon", "ledger", "vineyard", "terrace", "glacier", "market", "steeple",
    "tunnel", "meridian", "plateau", "estuary", "foundry", "monsoon", "parish",
    "bastion", "causeway", "derrick", "escarpment", "floodgate",
]

FILLER_FRAMES = [
    "The {a} {b} commentary discussed {c} matters again.",
    "Observers described {a} and {b} debates near the {c} office.",
    "A seasonal {a} bulletin mentioned {b} plans with {c} overtones.",
    "Local {a} writers compared {b} customs against {c} traditions.",
]


def rare_tokens(claim_idx: int, doc_slot: int) -> list[str]:
    return [f"z{claim_idx:02d}{doc_slot}{s}q" for s in ("alpha", "brux", "corv")]


def fact_sentence(t_a: str, t_b: str, rares: list[str]) -> str:
    return (
        f"The {t_a} record confirms {rares[0]} {rares[1]} {rares[2]} "
        f"during the {t_b} season."
    )


def main() -> None:
    rng = random.Random(SEED)
    OUT_DIR.mkdir(parents=True, exist_ok=True)

    claim_topics = [rng.sample(TOPICS, 3) for _ in range(N_CLAIMS)]
    planted = sorted(f"c{i:02d}" for i in range(0, N_CLAIMS, 2))
    multi_evidence = [i for i in range(N_CLAIMS) if i % 5 == 0]  # 6 claims

    # Gold docs and dedicated distractors carry the same distinct topic
    # terms (tf 1 each), but distractors are shorter: with tf saturation,
    # BM25's length normalization then ranks all five distractors above the
    # gold doc for claim-only queries. Planted generations copy the gold
    # fact sentences, whose rare high-idf terms pull the gold docs back to
    # the top of the expanded-query ranking.
    docs = []
    gold_docs: dict[int, list[tuple[str, str]]] = {}  # claim idx -> [(doc_id, fact)]
    for i in range(N_CLAIMS):
        t0, t1, t2 = claim_topics[i]
        fact = fact_sentence(t0, t1, rare_tokens(i, 0))
        text = (
            f"{fact} Notes about the {t2} division appear in seasonal archives."
        )
        doc_id = f"d{i:03d}"
        docs.append({"doc_id": doc_id, "title": None, "text": text})
        gold_docs[i] = [(doc_id, fact)]

    next_doc = N_CLAIMS
    for slot, i in enumerate(multi_evidence):
        t0, t1, t2 = claim_topics[i]
        fact = fact_sentence(t1, t2, rare_tokens(i, 1))
        doc_id = f"d{next_doc + slot:03d}"
        docs.append({
            "doc_id": doc_id,
            "title": None,
            "text": f"{fact} Extra notes cover the {t0} division in archives.",
        })
        gold_docs[i].append((doc_id, fact))
    next_doc += len(multi_evidence)

    for i in range(N_CLAIMS):
        t0, t1, t2 = claim_topics[i]
        for _ in range(5):
            doc_id = f"d{next_doc:03d}"
            next_doc += 1
            docs.append({
                "doc_id": doc_id,
                "title": None,
                "text": f"The {t0} {t1} summary reviews the {t2} division archives.",
            })
    while next_doc < N_DOCS:
        extra = rng.sample(TOPICS, 4)
        docs.append({
            "doc_id": f"d{next_doc:03d}",
            "title": None,
            "text": (
                f"General almanac entry covering {extra[0]} {extra[1]} "
                f"{extra[2]} and {extra[3]} affairs."
            ),
        })
        next_doc += 1

    # --- claims -----------------------------------------------------------
    labels = ["supported", "refuted", "not_enough_evidence"]
    claims = []
    for i in range(N_CLAIMS):
        topics = claim_topics[i]
        claims.append({
            "id": f"c{i:02d}",
            "claim": (
                f"The {topics[0]} {topics[1]} program reported new results "
                f"for the {topics[2]} community in autumn."
            ),
            "label": labels[i % 3],
            "evidence": [{"doc_id": doc_id} for doc_id, _ in gold_docs[i]],
        })

    # --- canned generations -------------------------------------------------
    # Every generation opens with a byte-identical claim reproduction (the
    # filter must remove it) and varies filler by repeat; planted claims
    # additionally carry each gold doc's fact sentence verbatim.
    entries: dict[str, str] = {}
    for i, claim in enumerate(claims):
        claim_text = claim["claim"]
        is_planted = claim["id"] in planted
        for repeat in range(REPEATS):
            sentences = [claim_text]
            if is_planted:
                sentences.extend(fact for _, fact in gold_docs[i])
            for s in range(3):
                frame = FILLER_FRAMES[(i + repeat + s) % len(FILLER_FRAMES)]
                picks = rng.sample(TOPICS, 3)
                sentences.append(frame.format(a=picks[0], b=picks[1], c=picks[2]))
            text = " ".join(sentences)
            for method in ("query2doc", "hyde"):
                template = PROMPTS["query2doc" if method == "query2doc" else "hyde-fever"]
                prompt = template.template.replace("{CLAIM}", claim_text)
                entries[MockProvider.canned_key(prompt, repeat)] = text

    # --- config and ground truth -------------------------------------------
    config = RunConfig(
        method="query2doc",
        model_id="mock-llm",
        repeats=REPEATS,
        k=5,
        seed=7,
        claims_path="claims.jsonl",
        corpus_path="corpus.jsonl",
        label_set="fever",
        hyde_prompt_id="hyde-fever",
        mock_canned_path="canned_generations.json",
    ).as_dict()

    with open(OUT_DIR / "claims.jsonl", "w", encoding="utf-8") as fh:
        for rec in claims:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(OUT_DIR / "corpus.jsonl", "w", encoding="utf-8") as fh:
        for rec in docs:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(OUT_DIR / "canned_generations.json", "w", encoding="utf-8") as fh:
        json.dump({"entries": entries}, fh, ensure_ascii=False, indent=1, sort_keys=True)
    with open(OUT_DIR / "planted.json", "w", encoding="utf-8") as fh:
        json.dump({"planted": planted}, fh, indent=2)
    with open(OUT_DIR / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    print(f"fixture written to {OUT_DIR}: {len(claims)} claims, {len(docs)} docs, "
          f"{len(entries)} canned generations, {len(planted)} planted")


if __name__ == "__main__":
    main()
