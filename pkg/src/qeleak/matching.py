"""Leakage matching: segment generated documents, strip claim
reproductions, label every (evidence, sentence) pair with a three-way
entailment judgment, and aggregate to a matched/unmatched flag per
(claim, repeat).

A claim counts as matched exactly when at least one generated sentence is
judged entailed by some gold evidence text.
"""

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .analyzer import tokenize
from .core import Claim, Corpus
from .errors import DataError

logger = logging.getLogger(__name__)

Judge = Callable[[str, str], tuple[str, bool]]  # (premise, hypothesis) -> (label, parse_failed)

PREMISE_MAX_CHARS = 6000

# Trailing abbreviations that must not end a sentence.
_ABBREVIATIONS = {
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc",
    "fig", "no", "inc", "ltd", "co", "approx", "dept", "est", "al",
    "e.g", "i.e", "u.s", "u.k", "u.n",
}

_SPLIT_RE = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9])")
_BLANK_RE = re.compile(r"\n\s*\n")


def _ends_with_abbreviation(chunk: str) -> bool:
    if not chunk.endswith("."):
        return False
    tail = chunk[:-1].rsplit(None, 1)
    last = tail[-1] if tail else chunk[:-1]
    return last.lower().strip("(\"'") in _ABBREVIATIONS


def segment_sentences(text: str) -> list[str]:
    """Split into sentences on blank lines and terminal punctuation.

    A terminal ., ! or ? splits only when followed by whitespace and a
    capital letter or digit; a built-in abbreviation list suppresses
    splits after tokens like "Dr." or "U.S.".
    """
    sentences: list[str] = []
    for block in _BLANK_RE.split(text):
        block = " ".join(block.split())
        if not block:
            continue
        parts = _SPLIT_RE.split(block)
        merged: list[str] = []
        for part in parts:
            if merged and _ends_with_abbreviation(merged[-1]):
                merged[-1] = merged[-1] + " " + part
            else:
                merged.append(part)
        sentences.extend(s.strip() for s in merged if s.strip())
    return sentences


def _bigrams(tokens: list[str]) -> Counter:
    return Counter(zip(tokens, tokens[1:]))


def rouge2_f(candidate: str, reference: str, variant: str = "f") -> float:
    """Bigram-overlap score on lowercase alphanumeric tokens.

    variant selects F (default), precision, or recall. When either side
    has no bigrams the score is 0, except token-identical texts score 1.
    """
    if variant not in ("f", "p", "r"):
        raise ValueError(f"unknown rouge variant {variant!r}")
    cand_tokens = tokenize(candidate)
    ref_tokens = tokenize(reference)
    cand_bi = _bigrams(cand_tokens)
    ref_bi = _bigrams(ref_tokens)
    if not cand_bi or not ref_bi:
        return 1.0 if cand_tokens and cand_tokens == ref_tokens else 0.0
    overlap = sum((cand_bi & ref_bi).values())
    precision = overlap / sum(cand_bi.values())
    recall = overlap / sum(ref_bi.values())
    if variant == "p":
        return precision
    if variant == "r":
        return recall
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class SentenceSet:
    """Generated-document sentences surviving the reproduction filter."""

    claim_id: str
    repeat_index: int
    sentences: list[str]
    removed_count: int


@dataclass
class NliJudgment:
    evidence_index: int
    sentence_index: int
    label: str  # entailment | contradiction | neutral
    parse_failed: bool = False


@dataclass
class MatchRecord:
    claim_id: str
    repeat_index: int
    matched: bool
    judgments: list[NliJudgment] = field(default_factory=list)
    empty_sentence_set: bool = False

    def to_json(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "repeat_index": self.repeat_index,
            "matched": self.matched,
            "empty_sentence_set": self.empty_sentence_set,
            "judgments": [
                {
                    "i": j.evidence_index,
                    "j": j.sentence_index,
                    "label": j.label,
                    "parse_failed": j.parse_failed,
                }
                for j in self.judgments
            ],
        }

    @classmethod
    def from_json(cls, rec: dict) -> "MatchRecord":
        return cls(
            claim_id=rec["claim_id"],
            repeat_index=rec["repeat_index"],
            matched=rec["matched"],
            empty_sentence_set=rec.get("empty_sentence_set", False),
            judgments=[
                NliJudgment(
                    evidence_index=j["i"],
                    sentence_index=j["j"],
                    label=j["label"],
                    parse_failed=j.get("parse_failed", False),
                )
                for j in rec.get("judgments", [])
            ],
        )


def filter_reproductions(
    sentences: Sequence[str],
    claim_text: str,
    threshold: float = 0.95,
    variant: str = "f",
) -> tuple[list[str], int]:
    """Drop sentences whose bigram overlap with the claim reaches threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    kept = [s for s in sentences if rouge2_f(s, claim_text, variant) < threshold]
    return kept, len(sentences) - len(kept)


def build_sentence_set(
    claim_id: str,
    repeat_index: int,
    generated_text: str,
    claim_text: str,
    threshold: float = 0.95,
    variant: str = "f",
) -> SentenceSet:
    sentences = segment_sentences(generated_text)
    kept, removed = filter_reproductions(sentences, claim_text, threshold, variant)
    return SentenceSet(
        claim_id=claim_id,
        repeat_index=repeat_index,
        sentences=kept,
        removed_count=removed,
    )


def resolve_evidence_texts(claim: Claim, corpus: Corpus | None) -> list[str]:
    """Evidence texts used as premises: referenced document text for
    corpus_ref entries (truncated, with a log line), the entry's own text
    for free_text entries."""
    texts = []
    for ev in claim.evidence:
        if ev.is_corpus_ref:
            if corpus is None:
                raise DataError(f"claim {claim.id!r}: corpus_ref evidence without a corpus")
            text = corpus[ev.corpus_ref].text
            if len(text) > PREMISE_MAX_CHARS:
                logger.warning(
                    "claim %s: premise %s truncated to %d chars",
                    claim.id, ev.corpus_ref, PREMISE_MAX_CHARS,
                )
                text = text[:PREMISE_MAX_CHARS]
            texts.append(text)
        else:
            texts.append(ev.free_text)
    return texts


def match_document(
    evidence_texts: Sequence[str],
    sentence_set: SentenceSet,
    judge: Judge,
    exhaustive: bool = True,
    parallelism: int = 1,
) -> MatchRecord:
    """Judge every (evidence, sentence) pair and aggregate to matched/unmatched.

    Judgments are recorded in (evidence, sentence) lexicographic order.
    With exhaustive=False, remaining judge calls are skipped after the
    first entailment (cost control only; the default keeps the full
    judgment matrix for audits).
    """
    if not evidence_texts:
        raise DataError("match_document needs nonempty evidence")
    if not sentence_set.sentences:
        return MatchRecord(
            claim_id=sentence_set.claim_id,
            repeat_index=sentence_set.repeat_index,
            matched=False,
            judgments=[],
            empty_sentence_set=True,
        )

    pairs = [
        (i, j, premise, hypothesis)
        for i, premise in enumerate(evidence_texts)
        for j, hypothesis in enumerate(sentence_set.sentences)
    ]
    judgments: list[NliJudgment] = []
    if exhaustive and parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            labels = list(pool.map(lambda p: judge(p[2], p[3]), pairs))
        for (i, j, _, _), (label, failed) in zip(pairs, labels):
            judgments.append(NliJudgment(i, j, label, failed))
    else:
        for i, j, premise, hypothesis in pairs:
            label, failed = judge(premise, hypothesis)
            judgments.append(NliJudgment(i, j, label, failed))
            if not exhaustive and label == "entailment":
                break

    matched = any(j.label == "entailment" for j in judgments)
    return MatchRecord(
        claim_id=sentence_set.claim_id,
        repeat_index=sentence_set.repeat_index,
        matched=matched,
        judgments=judgments,
    )


@dataclass
class MatchedRateSummary:
    per_repeat: dict[int, float]
    mean: float
    se: float

    def to_json(self) -> dict:
        return {
            "per_repeat": {str(r): v for r, v in sorted(self.per_repeat.items())},
            "mean": self.mean,
            "se": self.se,
        }


def matched_rate(records: Sequence[MatchRecord]) -> MatchedRateSummary:
    """Per-repeat matched proportion, then mean and SE across repeats."""
    from .analysis import mean_se

    by_repeat: dict[int, list[MatchRecord]] = {}
    for rec in records:
        by_repeat.setdefault(rec.repeat_index, []).append(rec)
    if not by_repeat:
        raise DataError("matched_rate needs at least one match record")
    per_repeat = {
        repeat: sum(1 for r in recs if r.matched) / len(recs)
        for repeat, recs in by_repeat.items()
    }
    mean, se = mean_se(list(per_repeat.values()))
    return MatchedRateSummary(per_repeat=per_repeat, mean=mean, se=se)


def write_match_records(records: Sequence[MatchRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def read_match_records(path: str | Path) -> list[MatchRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(MatchRecord.from_json(json.loads(line)))
    return records
