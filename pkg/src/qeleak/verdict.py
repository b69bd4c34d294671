"""Verdict prediction: prompt a judge model with the claim and the top-k
retrieved evidence, then parse a veracity label.

Responses that match no canonical label or alias get one re-ask; a second
failure falls back to the label set's "insufficient"-style label with the
parse-failure flag set, so macro-F1 denominators stay intact and failures
stay visible in reports.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import Claim, LabelSet
from .errors import DataError
from .providers import ChatRequest, Provider

logger = logging.getLogger(__name__)

EVIDENCE_MAX_CHARS = 2000

VERDICT_PROMPT_HEADER = (
    "Your task is to predict the verdict of a claim based on the provided "
    "evidence. Select one of the following labels: {LABELS}. Generate only "
    "the label without additional explanation or content.\n"
    "\n"
    "Claim: {CLAIM}\n"
)


@dataclass
class VerdictRecord:
    claim_id: str
    repeat_index: int
    predicted: str
    raw_response: str
    parse_failed: bool = False
    evidence_used: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "repeat_index": self.repeat_index,
            "predicted": self.predicted,
            "raw_response": self.raw_response,
            "parse_failed": self.parse_failed,
            "evidence_used": self.evidence_used,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "VerdictRecord":
        return cls(**rec)


def render_verdict_prompt(claim_text: str, evidence_texts: Sequence[str],
                          label_set: LabelSet) -> str:
    parts = [VERDICT_PROMPT_HEADER
             .replace("{LABELS}", label_set.display())
             .replace("{CLAIM}", claim_text)]
    for i, text in enumerate(evidence_texts, start=1):
        parts.append(f"\nEvidence {i}: {text}\n")
    parts.append("\nLabel:")
    return "".join(parts)


def parse_verdict(response: str, label_set: LabelSet) -> str | None:
    cleaned = response.strip().strip(".:;,!?\"'` \t\r\n")
    return label_set.try_normalize(cleaned)


def _truncate_evidence(texts: Sequence[str], claim_id: str) -> list[str]:
    out = []
    for text in texts:
        if len(text) > EVIDENCE_MAX_CHARS:
            logger.warning("claim %s: evidence truncated to %d chars",
                           claim_id, EVIDENCE_MAX_CHARS)
            text = text[:EVIDENCE_MAX_CHARS]
        out.append(text)
    return out


def predict_verdict(
    claim: Claim,
    evidence_texts: Sequence[str],
    label_set: LabelSet,
    provider: Provider,
    model_id: str,
    repeat_index: int = 0,
    fallback: str | None = None,
) -> VerdictRecord:
    """One verdict for (claim, repeat); prompt rendering is deterministic."""
    if not evidence_texts:
        raise DataError(f"claim {claim.id!r}: predict_verdict needs evidence texts")
    fallback = fallback or label_set.fallback or label_set.names[-1]
    evidence = _truncate_evidence(evidence_texts, claim.id)
    prompt = render_verdict_prompt(claim.text, evidence, label_set)
    response = ""
    for reask in (0, 1):
        req = ChatRequest(
            model_id=model_id,
            prompt=prompt,
            temperature=0.0,
            top_p=1.0,
            max_tokens=16,
            # the baseline pseudo-repeat (-1) shares the repeat-0 cache slot;
            # at temperature 0 identical prompts answer identically anyway
            repeat_index=max(repeat_index, 0),
            reask=reask,
        )
        response = provider.chat_complete(req)
        label = parse_verdict(response, label_set)
        if label is not None:
            return VerdictRecord(
                claim_id=claim.id,
                repeat_index=repeat_index,
                predicted=label,
                raw_response=response,
                evidence_used=list(evidence),
            )
    return VerdictRecord(
        claim_id=claim.id,
        repeat_index=repeat_index,
        predicted=fallback,
        raw_response=response,
        parse_failed=True,
        evidence_used=list(evidence),
    )


def verdict_run(
    claims: Sequence[Claim],
    evidence_by_claim_repeat: dict[tuple[str, int], list[str]],
    label_set: LabelSet,
    provider: Provider,
    model_id: str,
    out_path: str | Path | None = None,
    parallelism: int = 1,
) -> list[VerdictRecord]:
    """One record per (claim, repeat) pair in the evidence map; resumable."""
    claims_by_id = {c.id: c for c in claims}
    existing: dict[tuple[str, int], VerdictRecord] = {}
    if out_path is not None and Path(out_path).exists():
        for rec in read_verdicts(out_path):
            existing[(rec.claim_id, rec.repeat_index)] = rec

    tasks = []
    for (claim_id, repeat), evidence in sorted(evidence_by_claim_repeat.items()):
        if (claim_id, repeat) in existing:
            continue
        if claim_id not in claims_by_id:
            raise DataError(f"verdict_run: unknown claim {claim_id!r}")
        tasks.append((claims_by_id[claim_id], repeat, evidence))

    def run_task(task) -> VerdictRecord:
        claim, repeat, evidence = task
        return predict_verdict(claim, evidence, label_set, provider, model_id, repeat)

    records = list(existing.values())
    if tasks:
        if parallelism > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                records.extend(pool.map(run_task, tasks))
        else:
            records.extend(run_task(t) for t in tasks)
    records.sort(key=lambda r: (r.claim_id, r.repeat_index))
    if out_path is not None:
        write_verdicts(records, out_path)
    return records


def write_verdicts(records: Sequence[VerdictRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_verdicts(path: str | Path) -> list[VerdictRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(VerdictRecord.from_json(json.loads(line)))
    return records
