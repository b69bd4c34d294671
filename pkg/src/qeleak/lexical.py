"""Self-contained BM25 inverted-index engine for lexical retrieval.

Scoring: score(d) = sum over query-term occurrences of
    idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avglen))
with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)). Defaults k1=0.9, b=0.4.
Rankings order by score descending with ties broken by doc_id ascending,
so results are reproducible byte-for-byte.

Persistence is a directory holding a versioned manifest, a document
table, and varint-encoded binary postings; loading refuses mismatched
format or analyzer versions.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .analyzer import ANALYZER_VERSION, analyze
from .core import Corpus
from .errors import DataError, IndexFormatError

FORMAT_VERSION = 1

Ranking = list[tuple[str, float]]


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


class InvertedIndex:
    """Immutable term -> postings index over an analyzed corpus."""

    def __init__(
        self,
        doc_ids: list[str],
        doc_lens: list[int],
        postings: dict[str, list[tuple[int, int]]],
        params: Bm25Params,
        analyzer_version: str = ANALYZER_VERSION,
    ):
        self.doc_ids = list(doc_ids)
        self.doc_lens = list(doc_lens)
        self.postings = postings
        self.params = params
        self.analyzer_version = analyzer_version
        self.doc_count = len(doc_ids)
        self.avg_doc_len = sum(doc_lens) / len(doc_lens) if doc_lens else 0.0
        self._ordinal = {doc_id: i for i, doc_id in enumerate(doc_ids)}

    def ordinal(self, doc_id: str) -> int:
        return self._ordinal[doc_id]

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))


def document_index_text(doc) -> str:
    """Index-side document text: the title is prepended when present."""
    return f"{doc.title} {doc.text}" if doc.title else doc.text


def build_index(corpus: Corpus, params: Bm25Params | None = None) -> InvertedIndex:
    """Analyze and index every document; deterministic for a given corpus."""
    if len(corpus) == 0:
        raise DataError("cannot index an empty corpus")
    params = params or Bm25Params()
    doc_ids = []
    doc_lens = []
    postings: dict[str, list[tuple[int, int]]] = {}
    for ordinal, doc in enumerate(corpus):
        tokens = analyze(document_index_text(doc))
        doc_ids.append(doc.doc_id)
        doc_lens.append(len(tokens))
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((ordinal, tf))
    # postings lists are built in ordinal order, hence already sorted
    return InvertedIndex(doc_ids, doc_lens, postings, params)


def bm25_search(index: InvertedIndex, query_text: str, k: int) -> Ranking:
    """Top-k (doc_id, score), score descending, ties by doc_id ascending.

    Query text passes through the same analyzer; duplicated query terms
    contribute once per occurrence. Only documents matching at least one
    query term are scored, so fewer than k results may come back.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    k1, b = index.params.k1, index.params.b
    avg = index.avg_doc_len
    scores: dict[int, float] = {}
    # accumulate per document in query-token order: keeps float sums
    # identical to a per-document oracle that walks terms in the same order
    for term in analyze(query_text):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for ordinal, tf in plist:
            norm = tf + k1 * (1.0 - b + b * index.doc_lens[ordinal] / avg)
            contribution = idf * tf * (k1 + 1.0) / norm
            scores[ordinal] = scores.get(ordinal, 0.0) + contribution
    ranked = sorted(
        ((index.doc_ids[ordinal], score) for ordinal, score in scores.items()),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:k]


# --- persistence ----------------------------------------------------------


def _write_varint(buf: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


class _VarintReader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self) -> int:
        shift = 0
        result = 0
        while True:
            byte = self.data[self.pos]
            self.pos += 1
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return result
            shift += 7

    def read_bytes(self, count: int) -> bytes:
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def save_index(index: InvertedIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "analyzer_version": index.analyzer_version,
        "k1": index.params.k1,
        "b": index.params.b,
        "doc_count": index.doc_count,
        "avg_doc_len": index.avg_doc_len,
        "term_count": len(index.postings),
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", "utf-8"
    )
    (directory / "docs.json").write_text(
        json.dumps({"doc_ids": index.doc_ids, "doc_lens": index.doc_lens}) + "\n",
        "utf-8",
    )
    buf = bytearray()
    for term in sorted(index.postings):
        plist = index.postings[term]
        raw = term.encode("utf-8")
        _write_varint(buf, len(raw))
        buf.extend(raw)
        _write_varint(buf, len(plist))
        prev = 0
        for ordinal, tf in plist:
            _write_varint(buf, ordinal - prev)
            _write_varint(buf, tf)
            prev = ordinal
    (directory / "postings.bin").write_bytes(bytes(buf))


def load_index(directory: str | Path) -> InvertedIndex:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text("utf-8"))
    except FileNotFoundError as exc:
        raise IndexFormatError(f"{directory}: no index manifest") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IndexFormatError(
            f"index format version {manifest.get('format_version')} != {FORMAT_VERSION}"
        )
    if manifest.get("analyzer_version") != ANALYZER_VERSION:
        raise IndexFormatError(
            f"index analyzer {manifest.get('analyzer_version')!r} does not match"
            f" this build ({ANALYZER_VERSION!r})"
        )
    docs = json.loads((directory / "docs.json").read_text("utf-8"))
    reader = _VarintReader((directory / "postings.bin").read_bytes())
    postings: dict[str, list[tuple[int, int]]] = {}
    while not reader.exhausted:
        term = reader.read_bytes(reader.read()).decode("utf-8")
        df = reader.read()
        plist = []
        ordinal = 0
        for _ in range(df):
            ordinal += reader.read()
            tf = reader.read()
            plist.append((ordinal, tf))
        postings[term] = plist
    index = InvertedIndex(
        doc_ids=docs["doc_ids"],
        doc_lens=docs["doc_lens"],
        postings=postings,
        params=Bm25Params(k1=manifest["k1"], b=manifest["b"]),
        analyzer_version=manifest["analyzer_version"],
    )
    if index.doc_count != manifest["doc_count"]:
        raise IndexFormatError("doc table does not match manifest doc_count")
    return index
