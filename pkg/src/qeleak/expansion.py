"""Expanded-query construction: pseudo-document generation with per-dataset
prompts and R repeats, lexical concatenation for the BM25 route, and
query/pseudo-document vector averaging for the dense route.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Claim, RunConfig
from .errors import DataError, ProviderError
from .providers import ChatRequest, Provider

logger = logging.getLogger(__name__)

CLAIM_SLOT = "{CLAIM}"


@dataclass(frozen=True)
class PromptTemplate:
    prompt_id: str
    template: str

    def __post_init__(self):
        if self.template.count(CLAIM_SLOT) != 1:
            raise ValueError(
                f"template {self.prompt_id!r} must contain exactly one {CLAIM_SLOT} slot"
            )


PROMPTS: dict[str, PromptTemplate] = {
    t.prompt_id: t
    for t in (
        PromptTemplate(
            "hyde-fever",
            "Please write a wikipedia passage to verify the claim.\n"
            "Claim: {CLAIM}\nPassage:",
        ),
        PromptTemplate(
            "hyde-scifact",
            "Please write a scientific paper passage to support/refute the claim.\n"
            "Claim: {CLAIM}\nPassage:",
        ),
        PromptTemplate(
            "hyde-averitec",
            "Please write a fact-checking article to verify the claim.\n"
            "Claim: {CLAIM}\nPassage:",
        ),
        PromptTemplate(
            "query2doc",
            "Write a passage that answers the following query: {CLAIM}",
        ),
    )
}


def render_prompt(template: PromptTemplate, claim: Claim) -> str:
    """Replace the slot with the claim text verbatim; nothing else changes."""
    return template.template.replace(CLAIM_SLOT, claim.text)


def expand_query2doc(claim_text: str, pseudo_doc: str, n: int = 5) -> str:
    """Expanded lexical query: n copies of the claim, then the pseudo-doc,
    joined by single spaces with no other normalization."""
    if not claim_text:
        raise DataError("expand_query2doc: claim_text is empty")
    if not pseudo_doc:
        raise DataError("expand_query2doc: pseudo_doc is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    return " ".join([claim_text] * n + [pseudo_doc])


def hyde_query_vector(q_vec: Sequence[float], doc_vecs: Sequence[Sequence[float]]) -> np.ndarray:
    """Compose the dense query vector: v = (1/(N+1)) * sum_k (d_k + q).

    Implemented exactly as written, with the query embedding inside the
    summation; for N > 1 this weights the query N/(N+1) rather than
    equally, so such use is logged.
    """
    if len(doc_vecs) == 0:
        raise DataError("hyde_query_vector needs at least one pseudo-document vector")
    q = np.asarray(q_vec, dtype=np.float64)
    n_docs = len(doc_vecs)
    if n_docs > 1:
        logger.warning(
            "hyde_query_vector called with N=%d: query weighted N/(N+1)", n_docs
        )
    acc = np.zeros_like(q)
    for d_vec in doc_vecs:
        d = np.asarray(d_vec, dtype=np.float64)
        if d.shape != q.shape:
            raise DataError(
                f"vector dimension mismatch: query {q.shape[0]}, doc {d.shape[0]}"
            )
        acc += d + q
    return acc / (n_docs + 1)


@dataclass
class GenerationRecord:
    """One pseudo-document for a (claim, method, model, repeat) tuple."""

    claim_id: str
    method: str
    model_id: str
    repeat_index: int
    prompt_id: str
    text: str
    params: dict = field(default_factory=dict)
    failed: bool = False

    def __post_init__(self):
        if not self.text and not self.failed:
            raise DataError(
                f"generation for claim {self.claim_id!r} repeat {self.repeat_index}"
                " is empty but not flagged failed"
            )

    def key(self) -> tuple[str, str, str, int]:
        return (self.claim_id, self.method, self.model_id, self.repeat_index)

    def to_json(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "method": self.method,
            "model_id": self.model_id,
            "repeat_index": self.repeat_index,
            "prompt_id": self.prompt_id,
            "text": self.text,
            "params": self.params,
            "failed": self.failed,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "GenerationRecord":
        return cls(**rec)


def prompt_for(config: RunConfig) -> PromptTemplate:
    if config.method == "query2doc":
        return PROMPTS["query2doc"]
    if config.hyde_prompt_id not in PROMPTS:
        raise DataError(f"unknown hyde prompt {config.hyde_prompt_id!r}")
    return PROMPTS[config.hyde_prompt_id]


def generate_all(
    claims: Sequence[Claim],
    config: RunConfig,
    provider: Provider,
    out_path: str | Path | None = None,
) -> list[GenerationRecord]:
    """Generate R pseudo-documents per claim, bounded-parallel.

    Provider failures are flagged on the record rather than dropped. When
    out_path already holds records, those (claim, repeat) pairs are not
    regenerated, so interrupted runs resume. Output is sorted by
    (claim_id, repeat_index) and rewritten in full for determinism.
    """
    template = prompt_for(config)
    existing: dict[tuple, GenerationRecord] = {}
    if out_path is not None and Path(out_path).exists():
        for rec in read_generations(out_path):
            if not rec.failed:  # failed records are retried on resume
                existing[rec.key()] = rec

    tasks = []
    for claim in claims:
        prompt = render_prompt(template, claim)
        for repeat in range(config.repeats):
            key = (claim.id, config.method, config.model_id, repeat)
            if key not in existing:
                tasks.append((claim, prompt, repeat))

    def run_task(task) -> GenerationRecord:
        claim, prompt, repeat = task
        req = ChatRequest(
            model_id=config.model_id,
            prompt=prompt,
            temperature=config.gen_params.temperature,
            top_p=config.gen_params.top_p,
            max_tokens=config.gen_params.max_tokens,
            repeat_index=repeat,
        )
        try:
            text = provider.chat_complete(req)
            failed = False
        except ProviderError as exc:
            logger.error("generation failed for claim %s repeat %d: %s", claim.id, repeat, exc)
            text = ""
            failed = True
        return GenerationRecord(
            claim_id=claim.id,
            method=config.method,
            model_id=config.model_id,
            repeat_index=repeat,
            prompt_id=template.prompt_id,
            text=text,
            params=config.gen_params.as_dict(),
            failed=failed,
        )

    records = list(existing.values())
    fresh: list[GenerationRecord] = []
    if tasks:
        if config.parallelism > 1:
            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                fresh = list(pool.map(run_task, tasks))
        else:
            fresh = [run_task(t) for t in tasks]
    records.extend(fresh)
    records.sort(key=lambda r: (r.claim_id, r.repeat_index))
    if out_path is not None:
        write_generations(records, out_path)
    if fresh and all(rec.failed for rec in fresh):
        raise ProviderError(
            f"all {len(fresh)} generation calls failed; partial output persisted"
        )
    return records


def write_generations(records: Sequence[GenerationRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_generations(path: str | Path) -> list[GenerationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(GenerationRecord.from_json(json.loads(line)))
    return records
