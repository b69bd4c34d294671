"""Domain types, dataset file loading/validation, and run configuration.

File formats (one JSON object per line, UTF-8):
  claims:  {"id": str, "claim": str, "label": str|null,
            "evidence": [{"doc_id": str} | {"text": str}, ...]}
  corpus:  {"doc_id": str, "title": str|null, "text": str}
Run config is a single JSON document mirroring RunConfig fields.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Evidence:
    """One gold-evidence entry: either a corpus reference or free text.

    Exactly one of corpus_ref / free_text is set. ID-matchable datasets
    reference knowledge-store documents; free-text datasets carry
    human-written evidence strings.
    """

    corpus_ref: str | None = None
    free_text: str | None = None

    def __post_init__(self):
        if (self.corpus_ref is None) == (self.free_text is None):
            raise DataError("evidence must set exactly one of corpus_ref or free_text")
        if self.free_text is not None and not self.free_text.strip():
            raise DataError("evidence free_text must be nonempty")
        if self.corpus_ref is not None and not self.corpus_ref:
            raise DataError("evidence corpus_ref must be nonempty")

    @property
    def is_corpus_ref(self) -> bool:
        return self.corpus_ref is not None


@dataclass(frozen=True)
class Claim:
    """A checkable statement with optional veracity label and gold evidence."""

    id: str
    text: str
    label: str | None
    evidence: tuple[Evidence, ...]

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"claim {self.id!r}: text is empty")
        if not self.evidence:
            raise DataError(f"claim {self.id!r}: evidence list is empty")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"document {self.doc_id!r}: text is empty")


class Corpus:
    """Immutable id-addressable document collection (the knowledge store)."""

    def __init__(self, documents: list[Document]):
        self._docs: dict[str, Document] = {}
        for doc in documents:
            if doc.doc_id in self._docs:
                raise DataError(f"duplicate doc_id {doc.doc_id!r}")
            self._docs[doc.doc_id] = doc

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __iter__(self):
        return iter(self._docs.values())

    def get(self, doc_id: str) -> Document | None:
        return self._docs.get(doc_id)

    def __getitem__(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise DataError(f"doc_id {doc_id!r} not in corpus") from None

    @property
    def doc_ids(self) -> list[str]:
        return list(self._docs.keys())


class LabelSet:
    """Ordered canonical veracity labels plus a case-insensitive alias map."""

    def __init__(
        self,
        names: list[str],
        aliases: dict[str, str] | None = None,
        fallback: str | None = None,
    ):
        if len(set(names)) != len(names):
            raise ConfigError("canonical label names must be distinct")
        self.names: tuple[str, ...] = tuple(names)
        self._map: dict[str, str] = {}
        for name in names:
            self._map[name.lower()] = name
            # display form used in prompts ("not_enough_evidence" -> "not enough evidence")
            self._map[name.replace("_", " ").lower()] = name
        for alias, target in (aliases or {}).items():
            if target not in self.names:
                raise ConfigError(f"alias {alias!r} maps to unknown label {target!r}")
            key = alias.lower()
            if key in self._map and self._map[key] != target:
                raise ConfigError(f"alias {alias!r} maps onto more than one label")
            self._map[key] = target
        if fallback is not None and fallback not in self.names:
            raise ConfigError(f"fallback label {fallback!r} not in label set")
        self.fallback = fallback

    def normalize(self, raw: str) -> str:
        """Map a raw label string to its canonical name (idempotent)."""
        canonical = self._map.get(raw.strip().lower())
        if canonical is None:
            raise DataError(f"unknown label {raw!r}")
        return canonical

    def display(self) -> str:
        return ", ".join(name.replace("_", " ") for name in self.names)

    def try_normalize(self, raw: str) -> str | None:
        return self._map.get(raw.strip().lower())


LABEL_SETS: dict[str, LabelSet] = {
    "fever": LabelSet(
        ["supported", "refuted", "not_enough_evidence"],
        aliases={
            "supports": "supported",
            "refutes": "refuted",
            "not enough info": "not_enough_evidence",
            "nei": "not_enough_evidence",
        },
        fallback="not_enough_evidence",
    ),
    "scifact": LabelSet(
        ["supported", "refuted", "not_enough_evidence"],
        aliases={
            "support": "supported",
            # dataset's CONTRADICT is treated equivalently to refuted
            "contradict": "refuted",
            "not enough info": "not_enough_evidence",
            "nei": "not_enough_evidence",
        },
        fallback="not_enough_evidence",
    ),
    "averitec": LabelSet(
        ["supported", "refuted", "not_enough_evidence", "conflicting_evidence"],
        aliases={
            "conflicting evidence/cherrypicking": "conflicting_evidence",
            "not enough info": "not_enough_evidence",
        },
        fallback="not_enough_evidence",
    ),
}


@dataclass
class ClaimsLoadResult:
    claims: list[Claim]
    skipped_no_evidence: int = 0


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from exc


def load_claims(path: str | Path, label_set: LabelSet) -> ClaimsLoadResult:
    """Load a claims file; claims lacking gold evidence are skipped and counted."""
    path = Path(path)
    claims: list[Claim] = []
    seen: dict[str, int] = {}
    skipped = 0
    for lineno, rec in _iter_jsonl(path):
        try:
            claim_id = rec["id"]
            text = rec["claim"]
            raw_label = rec.get("label")
            raw_evidence = rec.get("evidence") or []
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: line {lineno}: missing field {exc}") from exc
        if claim_id in seen:
            raise DataError(
                f"{path}: line {lineno}: duplicate claim id {claim_id!r}"
                f" (first seen on line {seen[claim_id]})"
            )
        seen[claim_id] = lineno
        if not raw_evidence:
            skipped += 1
            continue
        evidence = []
        for ev in raw_evidence:
            if "doc_id" in ev:
                evidence.append(Evidence(corpus_ref=ev["doc_id"]))
            elif "text" in ev:
                evidence.append(Evidence(free_text=ev["text"]))
            else:
                raise DataError(f"{path}: line {lineno}: evidence entry needs doc_id or text")
        label = label_set.normalize(raw_label) if raw_label is not None else None
        try:
            claims.append(Claim(id=claim_id, text=text, label=label, evidence=tuple(evidence)))
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
    if skipped:
        logger.info("load_claims: skipped %d claims without gold evidence", skipped)
    return ClaimsLoadResult(claims=claims, skipped_no_evidence=skipped)


def serialize_claims(claims: list[Claim], path: str | Path) -> None:
    """Write claims back in the claims file format (round-trip safe)."""
    with open(path, "w", encoding="utf-8") as fh:
        for claim in claims:
            evidence = [
                {"doc_id": ev.corpus_ref} if ev.is_corpus_ref else {"text": ev.free_text}
                for ev in claim.evidence
            ]
            rec = {"id": claim.id, "claim": claim.text, "label": claim.label,
                   "evidence": evidence}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus file; empty-text documents are skipped with a warning."""
    path = Path(path)
    docs: list[Document] = []
    seen: dict[str, int] = {}
    skipped_empty = 0
    for lineno, rec in _iter_jsonl(path):
        try:
            doc_id = rec["doc_id"]
            text = rec.get("text", "")
            title = rec.get("title")
        except TypeError as exc:
            raise DataError(f"{path}: line {lineno}: malformed record") from exc
        if doc_id in seen:
            raise DataError(
                f"{path}: line {lineno}: duplicate doc_id {doc_id!r}"
                f" (first seen on line {seen[doc_id]})"
            )
        seen[doc_id] = lineno
        if not str(text).strip():
            skipped_empty += 1
            logger.warning("load_corpus: skipping %r (empty text, line %d)", doc_id, lineno)
            continue
        docs.append(Document(doc_id=doc_id, text=text, title=title))
    corpus = Corpus(docs)
    logger.info("load_corpus: %d documents (%d skipped empty)", len(corpus), skipped_empty)
    return corpus


def validate_references(claims: list[Claim], corpus: Corpus) -> list[tuple[str, str]]:
    """Report (claim_id, doc_id) pairs whose corpus_ref is not in the corpus."""
    dangling = []
    for claim in claims:
        for ev in claim.evidence:
            if ev.is_corpus_ref and ev.corpus_ref not in corpus:
                dangling.append((claim.id, ev.corpus_ref))
    return dangling


@dataclass
class GenParams:
    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 512

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunConfig:
    """Run configuration; defaults mirror the audited generation protocol."""

    method: str = "query2doc"  # {query2doc, hyde}
    model_id: str = "mock-llm"
    repeats: int = 8
    k: int = 5
    query_copies: int = 5      # number of query copies concatenated for query2doc
    pseudo_docs: int = 1       # number of pseudo-documents averaged for hyde
    gen_params: GenParams = field(default_factory=GenParams)
    rouge_threshold: float = 0.95
    rouge_variant: str = "f"   # {f, p, r}
    seed: int = 0
    claims_path: str = ""
    corpus_path: str = ""
    label_set: str = "fever"
    hyde_prompt_id: str = "hyde-fever"
    judge_model_id: str = "mock-llm"
    nli_model_id: str = "mock-llm"
    embed_model_id: str = "mock-embed"
    eval_mode: str = "auto"    # {auto, id, text}
    text_scorers: tuple[str, ...] = ("meteor",)
    exhaustive: bool = True
    parallelism: int = 8
    mwu_unit: str = "per_claim"  # {per_claim, per_repeat}
    bm25_k1: float = 0.9
    bm25_b: float = 0.4
    base_url: str = ""
    scorer_url: str = ""
    mock_canned_path: str = ""  # canned response map for the mock provider

    def __post_init__(self):
        if self.method not in ("query2doc", "hyde"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.query_copies < 1:
            raise ConfigError("query_copies must be >= 1")
        if self.pseudo_docs < 1:
            raise ConfigError("pseudo_docs must be >= 1")
        if not 0.0 <= self.rouge_threshold <= 1.0:
            raise ConfigError("rouge_threshold must be in [0, 1]")
        if self.rouge_variant not in ("f", "p", "r"):
            raise ConfigError(f"unknown rouge_variant {self.rouge_variant!r}")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.eval_mode not in ("auto", "id", "text"):
            raise ConfigError(f"unknown eval_mode {self.eval_mode!r}")
        if self.mwu_unit not in ("per_claim", "per_repeat"):
            raise ConfigError(f"unknown mwu_unit {self.mwu_unit!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(raw)
        if "gen_params" in kwargs and isinstance(kwargs["gen_params"], dict):
            kwargs["gen_params"] = GenParams(**kwargs["gen_params"])
        if "text_scorers" in kwargs:
            kwargs["text_scorers"] = tuple(kwargs["text_scorers"])
        return cls(**kwargs)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["text_scorers"] = list(self.text_scorers)
        return d

    def label_set_obj(self) -> LabelSet:
        if self.label_set not in LABEL_SETS:
            raise ConfigError(f"unknown label set {self.label_set!r}")
        return LABEL_SETS[self.label_set]
