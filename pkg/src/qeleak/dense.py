"""Exact inner-product vector search over corpus embeddings.

Similarity is the raw inner product (no cosine normalization), scanned
exhaustively, so results are oracle-testable: the ranking equals the
argsort of the full score vector with ties broken by doc_id ascending.

Persistence is a directory with manifest.json {model_id, dim, count,
checksum} plus a row-major little-endian float32 matrix file; searching
with a different embedding model than the one stamped is refused.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Corpus
from .errors import DataError, IndexFormatError, ProviderError
from .expansion import hyde_query_vector
from .lexical import document_index_text
from .providers import Provider

logger = logging.getLogger(__name__)

Ranking = list[tuple[str, float]]


@dataclass
class VectorIndex:
    matrix: np.ndarray  # (doc_count, dim) float32
    doc_ids: list[str]
    model_id: str

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise DataError("vector index matrix must be 2-dimensional")
        if self.matrix.shape[0] != len(self.doc_ids):
            raise DataError("vector index row count does not match doc count")
        if not np.isfinite(self.matrix).all():
            raise DataError("vector index contains non-finite values")

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


def build_vector_index(
    corpus: Corpus,
    provider: Provider,
    model_id: str,
    batch_size: int = 64,
) -> VectorIndex:
    """Embed every document once (cache-backed) into a flat float32 matrix."""
    if len(corpus) == 0:
        raise DataError("cannot build a vector index over an empty corpus")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    doc_ids = []
    texts = []
    for doc in corpus:
        doc_ids.append(doc.doc_id)
        texts.append(document_index_text(doc))
    rows: list[list[float]] = []
    dim: int | None = None
    for start in range(0, len(texts), batch_size):
        batch_ids = doc_ids[start : start + batch_size]
        batch = provider.embed(texts[start : start + batch_size], model_id)
        for doc_id, vec in zip(batch_ids, batch):
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ProviderError(
                    f"embedding dim drifted at doc {doc_id!r}: {len(vec)} != {dim}"
                )
            rows.append(vec)
    matrix = np.asarray(rows, dtype=np.float32)
    return VectorIndex(matrix=matrix, doc_ids=doc_ids, model_id=model_id)


def dense_search(index: VectorIndex, query_vec: Sequence[float], k: int) -> Ranking:
    """Top-k by inner product over an exhaustive scan."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != index.dim:
        raise DataError(f"query dim {q.shape} does not match index dim {index.dim}")
    scores = index.matrix.astype(np.float64) @ q
    order = sorted(range(len(index.doc_ids)), key=lambda i: (-scores[i], index.doc_ids[i]))
    return [(index.doc_ids[i], float(scores[i])) for i in order[:k]]


def hyde_search(
    claim,
    generations,
    index: VectorIndex,
    provider: Provider,
    k: int,
    n_docs: int = 1,
) -> Ranking:
    """Embed the claim and its pseudo-documents, average, and search."""
    texts = [g.text for g in generations if not g.failed][:n_docs]
    if len(texts) < n_docs:
        raise DataError(
            f"claim {claim.id!r}: need {n_docs} generated documents, have {len(texts)}"
        )
    vectors = provider.embed([claim.text] + texts, index.model_id)
    if len(vectors[0]) != index.dim:
        raise DataError(
            f"provider dim {len(vectors[0])} does not match index dim {index.dim}"
        )
    composed = hyde_query_vector(vectors[0], vectors[1:])
    return dense_search(index, composed, k)


def save_vector_index(index: VectorIndex, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    raw = np.ascontiguousarray(index.matrix, dtype="<f4").tobytes()
    manifest = {
        "model_id": index.model_id,
        "dim": index.dim,
        "count": len(index.doc_ids),
        "checksum": hashlib.sha256(raw).hexdigest(),
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", "utf-8"
    )
    (directory / "doc_ids.json").write_text(json.dumps(index.doc_ids) + "\n", "utf-8")
    (directory / "vectors.f32").write_bytes(raw)


def load_vector_index(directory: str | Path, expect_model_id: str | None = None) -> VectorIndex:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text("utf-8"))
    except FileNotFoundError as exc:
        raise IndexFormatError(f"{directory}: no vector index manifest") from exc
    if expect_model_id is not None and manifest["model_id"] != expect_model_id:
        raise IndexFormatError(
            f"vector index was built with model {manifest['model_id']!r}, "
            f"refusing to search with {expect_model_id!r}"
        )
    raw = (directory / "vectors.f32").read_bytes()
    if hashlib.sha256(raw).hexdigest() != manifest["checksum"]:
        raise IndexFormatError(f"{directory}: vector file checksum mismatch")
    doc_ids = json.loads((directory / "doc_ids.json").read_text("utf-8"))
    matrix = np.frombuffer(raw, dtype="<f4").reshape(manifest["count"], manifest["dim"])
    return VectorIndex(matrix=matrix.copy(), doc_ids=doc_ids, model_id=manifest["model_id"])
