"""Scoring functions: Recall@K, NDCG@K, macro F1, METEOR, and
Hungarian-assignment evidence scoring for free-text gold evidence.

All functions are pure and return values in [0, 1]; reports scale them
by 100 at render time only.
"""

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from . import porter
from .analyzer import tokenize
from .errors import DataError

Ranking = Sequence[tuple[str, float]]


def relevance_from_claims(claims) -> dict[str, set[str]]:
    """claim_id -> set of relevant doc_ids, from corpus_ref evidence."""
    out: dict[str, set[str]] = {}
    for claim in claims:
        refs = {ev.corpus_ref for ev in claim.evidence if ev.is_corpus_ref}
        if refs:
            out[claim.id] = refs
    return out


def recall_at_k(ranking: Ranking, relevant: set[str], k: int) -> float:
    """Proportion of the relevant set present in the top-k results."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise DataError("empty relevant set (claim should have been dropped at load)")
    top = {doc_id for doc_id, _ in ranking[:k]}
    return len(top & relevant) / len(relevant)


def ndcg_at_k(ranking: Ranking, relevant: set[str], k: int) -> float:
    """Binary-gain NDCG: DCG over the top k divided by the ideal DCG."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise DataError("empty relevant set (claim should have been dropped at load)")
    dcg = 0.0
    for i, (doc_id, _) in enumerate(ranking[:k], start=1):
        if doc_id in relevant:
            dcg += 1.0 / math.log2(i + 1)
    ideal_hits = min(len(relevant), k)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, ideal_hits + 1))
    return dcg / idcg if idcg > 0 else 0.0


def macro_f1(predictions: Sequence[str], golds: Sequence[str],
             label_names: Sequence[str]) -> float:
    """Unweighted mean of per-label F1 over every label in the set.

    A label with zero precision+recall contributes F1 = 0.
    """
    if len(predictions) != len(golds):
        raise DataError(
            f"predictions ({len(predictions)}) and golds ({len(golds)}) differ in length"
        )
    total = 0.0
    for label in label_names:
        tp = sum(1 for p, g in zip(predictions, golds) if p == label and g == label)
        fp = sum(1 for p, g in zip(predictions, golds) if p == label and g != label)
        fn = sum(1 for p, g in zip(predictions, golds) if p != label and g == label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total += f1
    return total / len(label_names)


# --- METEOR ------------------------------------------------------------

_ALPHA = 0.9
_BETA = 3.0
_GAMMA = 0.5


def _align(cand: list[str], ref: list[str]) -> list[tuple[int, int]]:
    """Unigram alignment in two stages: exact match, then stem match.

    Within a stage, each candidate token takes the first still-unmatched
    reference occurrence, scanning in order; this maximizes the per-stage
    match count (tokens of equal surface form are interchangeable).
    """
    matched_c = [False] * len(cand)
    matched_r = [False] * len(ref)
    pairs: list[tuple[int, int]] = []

    def run_stage(key: Callable[[str], str]) -> None:
        ref_keys = [key(tok) for tok in ref]
        for i, tok in enumerate(cand):
            if matched_c[i]:
                continue
            k = key(tok)
            for j, rk in enumerate(ref_keys):
                if not matched_r[j] and rk == k:
                    matched_c[i] = True
                    matched_r[j] = True
                    pairs.append((i, j))
                    break

    run_stage(lambda t: t)
    run_stage(porter.stem)
    return sorted(pairs)


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or (i, j) != (prev[0] + 1, prev[1] + 1):
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(candidate: str, reference: str) -> float:
    """Unigram-alignment score with stem matching and a fragmentation penalty.

    Fmean = P*R / (alpha*P + (1-alpha)*R); penalty = gamma*(chunks/m)^beta;
    score = Fmean * (1 - penalty); zero when no unigram aligns.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    pairs = _align(cand, ref)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    fmean = precision * recall / (_ALPHA * precision + (1 - _ALPHA) * recall)
    penalty = _GAMMA * (_count_chunks(pairs) / m) ** _BETA
    return fmean * (1.0 - penalty)


# --- Hungarian assignment ----------------------------------------------


@dataclass
class AssignmentResult:
    total: float
    normalized: float
    pairs: list[tuple[int, int]]


def _solve_min_square(cost: list[list[float]]) -> list[int]:
    """Potentials-based O(n^3) minimization on a square matrix.

    Returns assignment[row] = column.
    """
    n = len(cost)
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)       # p[col] = assigned row (1-based), 0 = free
    way = [0] * (n + 1)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    assignment = [0] * n
    for j in range(1, n + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    return assignment


def hungarian_assign(score_matrix: Sequence[Sequence[float]]) -> AssignmentResult:
    """Maximize the summed pairwise score over one-to-one matchings.

    Rectangular matrices are padded with zero-score dummies; the matching
    has size min(#candidates, #references). normalized divides the optimal
    total by the reference count (the matrix's column count), even when
    there are fewer candidates than references.
    """
    n_cand = len(score_matrix)
    n_ref = len(score_matrix[0]) if n_cand else 0
    if n_cand == 0 or n_ref == 0:
        return AssignmentResult(total=0.0, normalized=0.0, pairs=[])
    for row in score_matrix:
        if len(row) != n_ref:
            raise ValueError("score matrix is ragged")
        for val in row:
            if not math.isfinite(val):
                raise ValueError("score matrix entries must be finite")

    n = max(n_cand, n_ref)
    cost = [[0.0] * n for _ in range(n)]
    for i in range(n_cand):
        for j in range(n_ref):
            cost[i][j] = -float(score_matrix[i][j])
    assignment = _solve_min_square(cost)

    pairs = []
    total = 0.0
    for i in range(n_cand):
        j = assignment[i]
        if j < n_ref:
            pairs.append((i, j))
            total += float(score_matrix[i][j])
    return AssignmentResult(total=total, normalized=total / n_ref, pairs=pairs)


def evidence_text_score(
    retrieved_texts: Sequence[str],
    gold_texts: Sequence[str],
    scorer: str = "meteor",
    pair_scorer: Callable[[Sequence[str], Sequence[str]], Sequence[Sequence[float]]] | None = None,
) -> float:
    """Optimal-assignment similarity of retrieved texts against gold texts.

    scorer "meteor" is computed locally; "bertscore" requires pair_scorer
    (the provider's pair-scoring call building the full matrix).
    """
    if not gold_texts:
        raise DataError("empty gold text set")
    if not retrieved_texts:
        return 0.0
    if scorer == "meteor":
        matrix = [[meteor(cand, ref) for ref in gold_texts] for cand in retrieved_texts]
    elif scorer == "bertscore":
        if pair_scorer is None:
            raise DataError(
                "bertscore needs a pair-scoring endpoint (sidecar) or a fixture scorer; "
                "configure one or fall back to meteor"
            )
        matrix = [list(row) for row in pair_scorer(list(retrieved_texts), list(gold_texts))]
    else:
        raise ValueError(f"unknown scorer {scorer!r}")
    return hungarian_assign(matrix).normalized
