"""Resumable pipeline stages over a run directory.

Stage order: ingest -> index -> expand -> retrieve -> match -> verdict ->
report. Every stage persists flat files under the run directory and
records completion in manifest.json; re-running a completed stage with an
unchanged config is a no-op. One process owns a run directory at a time
via a lock file.
"""

import contextlib
import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import (
    GROUP_ALL,
    GROUP_MATCHED,
    GROUP_UNMATCHED,
    GROUPS,
    Comparison,
    build_report,
    render_text,
    report_json,
    stratify,
)
from .core import (
    Claim,
    RunConfig,
    load_claims,
    load_corpus,
    serialize_claims,
    validate_references,
)
from .dense import (
    build_vector_index,
    dense_search,
    hyde_search,
    load_vector_index,
    save_vector_index,
)
from .errors import ConfigError, DataError, PipelineStateError
from .expansion import expand_query2doc, generate_all, read_generations
from .lexical import Bm25Params, bm25_search, build_index, load_index, save_index
from .matching import (
    build_sentence_set,
    match_document,
    matched_rate,
    read_match_records,
    resolve_evidence_texts,
    write_match_records,
)
from .metrics import (
    evidence_text_score,
    macro_f1,
    ndcg_at_k,
    recall_at_k,
    relevance_from_claims,
)
from .providers import DiskCache, HttpProvider, MockProvider, Provider
from .verdict import read_verdicts, verdict_run

logger = logging.getLogger(__name__)

STAGES = ("ingest", "index", "expand", "retrieve", "match", "verdict", "report")

BASELINE_REPEAT = -1


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.as_dict(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    run_id: str
    config: dict
    config_hash: str
    tool_version: str = __version__
    stages: dict = field(default_factory=dict)

    def stage_completed(self, stage: str) -> bool:
        return self.stages.get(stage, {}).get("completed", False)

    def stage_stats(self, stage: str) -> dict:
        return self.stages.get(stage, {}).get("stats", {})

    def mark(self, stage: str, outputs: list[str], stats: dict) -> None:
        self.stages[stage] = {"completed": True, "outputs": outputs, "stats": stats}

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "stages": self.stages,
        }

    @classmethod
    def from_json(cls, rec: dict) -> "RunManifest":
        return cls(
            run_id=rec["run_id"],
            config=rec["config"],
            config_hash=rec["config_hash"],
            tool_version=rec.get("tool_version", ""),
            stages=rec.get("stages", {}),
        )


def _manifest_path(run_dir: Path) -> Path:
    return run_dir / "manifest.json"


def load_manifest(run_dir: Path) -> RunManifest | None:
    path = _manifest_path(run_dir)
    if not path.exists():
        return None
    return RunManifest.from_json(json.loads(path.read_text("utf-8")))


def save_manifest(manifest: RunManifest, run_dir: Path) -> None:
    path = _manifest_path(run_dir)
    fd, tmp = tempfile.mkstemp(dir=run_dir, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
    os.replace(tmp, path)


@contextlib.contextmanager
def run_lock(run_dir: Path):
    """One run directory is owned by one process at a time."""
    lock_path = run_dir / "run.lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineStateError(
            f"{run_dir} is locked ({lock_path} exists); remove it if the owning "
            "process is gone"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(lock_path)


def build_provider(config: RunConfig, mock: bool, cache_dir: str | None) -> Provider:
    cache = DiskCache(cache_dir) if cache_dir else None
    if mock:
        canned = None
        if config.mock_canned_path:
            canned = MockProvider.load_canned(config.mock_canned_path)
        return MockProvider(seed=config.seed, cache=cache, canned=canned)
    if not config.base_url:
        raise ConfigError("no endpoint configured: set base_url in the config or pass --mock")
    return HttpProvider(config.base_url, cache=cache, scorer_url=config.scorer_url)


class _LazyProvider:
    """Defers provider construction until a stage actually uses it."""

    def __init__(self, factory):
        self._factory = factory
        self._provider: Provider | None = None

    def __getattr__(self, name):
        if self._provider is None:
            self._provider = self._factory()
        return getattr(self._provider, name)


# --- per-stage implementations -------------------------------------------


def _load_run_claims(config: RunConfig, run_dir: Path) -> list[Claim]:
    return load_claims(run_dir / "claims.jsonl", config.label_set_obj()).claims


def _stage_ingest(config: RunConfig, run_dir: Path, provider) -> tuple[list[str], dict]:
    corpus = load_corpus(config.corpus_path)
    result = load_claims(config.claims_path, config.label_set_obj())
    dangling = validate_references(result.claims, corpus)
    dangling_set = set(dangling)

    kept: list[Claim] = []
    dropped_unresolved = 0
    for claim in result.claims:
        evidence = tuple(
            ev for ev in claim.evidence
            if not (ev.is_corpus_ref and (claim.id, ev.corpus_ref) in dangling_set)
        )
        if not evidence:
            dropped_unresolved += 1
            continue
        if len(evidence) != len(claim.evidence):
            claim = Claim(id=claim.id, text=claim.text, label=claim.label, evidence=evidence)
        kept.append(claim)

    serialize_claims(kept, run_dir / "claims.jsonl")
    stats = {
        "claims": len(kept),
        "skipped_no_evidence": result.skipped_no_evidence,
        "dangling_refs": len(dangling),
        "dropped_unresolved": dropped_unresolved,
        "corpus_docs": len(corpus),
    }
    return ["claims.jsonl"], stats


def _stage_index(config: RunConfig, run_dir: Path, provider: Provider) -> tuple[list[str], dict]:
    corpus = load_corpus(config.corpus_path)
    if config.method == "query2doc":
        index = build_index(corpus, Bm25Params(k1=config.bm25_k1, b=config.bm25_b))
        save_index(index, run_dir / "index" / "lexical")
        stats = {"kind": "lexical", "docs": index.doc_count,
                 "terms": len(index.postings), "avg_doc_len": index.avg_doc_len}
        return ["index/lexical"], stats
    vindex = build_vector_index(corpus, provider, model_id=config.embed_model_id)
    save_vector_index(vindex, run_dir / "index" / "dense")
    stats = {"kind": "dense", "docs": len(vindex.doc_ids), "dim": vindex.dim}
    return ["index/dense"], stats


def _stage_expand(config: RunConfig, run_dir: Path, provider: Provider) -> tuple[list[str], dict]:
    claims = _load_run_claims(config, run_dir)
    records = generate_all(claims, config, provider, out_path=run_dir / "generations.jsonl")
    failures = sum(1 for r in records if r.failed)
    return ["generations.jsonl"], {"records": len(records), "generation_failures": failures}


def _stage_retrieve(config: RunConfig, run_dir: Path, provider: Provider) -> tuple[list[str], dict]:
    claims = _load_run_claims(config, run_dir)
    generations = read_generations(run_dir / "generations.jsonl")
    by_claim_repeat = {(g.claim_id, g.repeat_index): g for g in generations}
    rows = []
    fallbacks = 0

    if config.method == "query2doc":
        index = load_index(run_dir / "index" / "lexical")
        for claim in claims:
            rows.append((claim.id, BASELINE_REPEAT, bm25_search(index, claim.text, config.k)))
            for repeat in range(config.repeats):
                gen = by_claim_repeat.get((claim.id, repeat))
                if gen is None:
                    raise DataError(f"missing generation for claim {claim.id!r} repeat {repeat}")
                if gen.failed or not gen.text:
                    fallbacks += 1
                    query = claim.text
                else:
                    query = expand_query2doc(claim.text, gen.text, config.query_copies)
                rows.append((claim.id, repeat, bm25_search(index, query, config.k)))
    else:
        vindex = load_vector_index(run_dir / "index" / "dense",
                                   expect_model_id=config.embed_model_id)
        for claim in claims:
            q_vec = provider.embed([claim.text], config.embed_model_id)[0]
            rows.append((claim.id, BASELINE_REPEAT, dense_search(vindex, q_vec, config.k)))
            for repeat in range(config.repeats):
                gen = by_claim_repeat.get((claim.id, repeat))
                if gen is None:
                    raise DataError(f"missing generation for claim {claim.id!r} repeat {repeat}")
                if gen.failed or not gen.text:
                    fallbacks += 1
                    rows.append((claim.id, repeat, dense_search(vindex, q_vec, config.k)))
                else:
                    rows.append(
                        (claim.id, repeat,
                         hyde_search(claim, [gen], vindex, provider, config.k,
                                     n_docs=config.pseudo_docs))
                    )

    with open(run_dir / "rankings.jsonl", "w", encoding="utf-8") as fh:
        for claim_id, repeat, ranking in rows:
            fh.write(json.dumps(
                {"claim_id": claim_id, "repeat_index": repeat,
                 "ranking": [[doc_id, score] for doc_id, score in ranking]},
                ensure_ascii=False) + "\n")
    return ["rankings.jsonl"], {"rows": len(rows), "expansion_fallbacks": fallbacks}


def read_rankings(path: str | Path) -> dict[tuple[str, int], list[tuple[str, float]]]:
    out: dict[tuple[str, int], list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out[(rec["claim_id"], rec["repeat_index"])] = [
                (doc_id, score) for doc_id, score in rec["ranking"]
            ]
    return out


def _stage_match(config: RunConfig, run_dir: Path, provider: Provider) -> tuple[list[str], dict]:
    claims = _load_run_claims(config, run_dir)
    corpus = load_corpus(config.corpus_path)
    generations = {(g.claim_id, g.repeat_index): g
                   for g in read_generations(run_dir / "generations.jsonl")}

    # NLI judging runs at temperature 0, so identical (premise, sentence)
    # pairs share one cache entry across repeats.
    def judge(premise: str, hypothesis: str) -> tuple[str, bool]:
        return provider.nli_judge(premise, hypothesis, config.nli_model_id, repeat_index=0)

    records = []
    parse_failures = 0
    for claim in claims:
        evidence_texts = resolve_evidence_texts(claim, corpus)
        for repeat in range(config.repeats):
            gen = generations.get((claim.id, repeat))
            if gen is None:
                raise DataError(f"missing generation for claim {claim.id!r} repeat {repeat}")
            sentence_set = build_sentence_set(
                claim.id, repeat, gen.text, claim.text,
                threshold=config.rouge_threshold, variant=config.rouge_variant,
            )
            record = match_document(
                evidence_texts, sentence_set, judge, exhaustive=config.exhaustive,
            )
            parse_failures += sum(1 for j in record.judgments if j.parse_failed)
            records.append(record)

    records.sort(key=lambda r: (r.claim_id, r.repeat_index))
    write_match_records(records, run_dir / "matches.jsonl")
    summary = matched_rate(records)
    (run_dir / "matched_summary.json").write_text(
        json.dumps(summary.to_json(), indent=2, sort_keys=True) + "\n", "utf-8"
    )
    stats = {
        "records": len(records),
        "nli_parse_failures": parse_failures,
        "matched_rate_mean": summary.mean,
    }
    return ["matches.jsonl", "matched_summary.json"], stats


def _stage_verdict(config: RunConfig, run_dir: Path, provider: Provider) -> tuple[list[str], dict]:
    claims = _load_run_claims(config, run_dir)
    corpus = load_corpus(config.corpus_path)
    rankings = read_rankings(run_dir / "rankings.jsonl")

    def evidence_for(ranking) -> list[str]:
        texts = []
        for doc_id, _ in ranking[: config.k]:
            doc = corpus[doc_id]
            texts.append(f"{doc.title}. {doc.text}" if doc.title else doc.text)
        return texts

    empty_rankings = 0
    evidence_map: dict[tuple[str, int], list[str]] = {}
    for claim in claims:
        for repeat in [BASELINE_REPEAT] + list(range(config.repeats)):
            ranking = rankings.get((claim.id, repeat))
            if ranking is None:
                raise DataError(f"missing ranking for claim {claim.id!r} repeat {repeat}")
            texts = evidence_for(ranking)
            if not texts:
                empty_rankings += 1
                texts = ["(no evidence retrieved)"]
            evidence_map[(claim.id, repeat)] = texts

    records = verdict_run(
        claims, evidence_map, config.label_set_obj(), provider,
        config.judge_model_id, out_path=run_dir / "verdicts.jsonl",
        parallelism=config.parallelism,
    )
    failures = sum(1 for r in records if r.parse_failed)
    stats = {"records": len(records), "verdict_parse_failures": failures,
             "empty_rankings": empty_rankings}
    return ["verdicts.jsonl"], stats


def _resolve_eval_mode(config: RunConfig, claims: list[Claim]) -> str:
    if config.eval_mode != "auto":
        return config.eval_mode
    id_claims = sum(1 for c in claims if any(ev.is_corpus_ref for ev in c.evidence))
    return "id" if id_claims * 2 >= len(claims) else "text"


def _stage_report(config: RunConfig, run_dir: Path, provider: Provider | None) -> tuple[list[str], dict]:
    claims = _load_run_claims(config, run_dir)
    corpus = load_corpus(config.corpus_path)
    rankings = read_rankings(run_dir / "rankings.jsonl")
    match_records = read_match_records(run_dir / "matches.jsonl")
    verdicts = {(v.claim_id, v.repeat_index): v
                for v in read_verdicts(run_dir / "verdicts.jsonl")}
    matched_summary = json.loads((run_dir / "matched_summary.json").read_text("utf-8"))
    label_set = config.label_set_obj()
    mode = _resolve_eval_mode(config, claims)
    claim_ids = [c.id for c in claims]

    if mode == "id":
        metrics = [f"Recall@{config.k}", f"NDCG@{config.k}", "F1"]
        primary_metric = f"Recall@{config.k}"
    else:
        metrics = ["METEOR" if s == "meteor" else "BERTScore"
                   for s in config.text_scorers] + ["F1"]
        primary_metric = metrics[0]

    relevance = relevance_from_claims(claims) if mode == "id" else {}
    gold_texts = {
        c.id: [ev.free_text for ev in c.evidence if not ev.is_corpus_ref]
        for c in claims
    }

    def ranked_texts(ranking) -> list[str]:
        return [corpus[doc_id].text for doc_id, _ in ranking[: config.k]]

    def per_claim_values(repeat: int) -> dict[str, dict[str, float]]:
        """metric -> claim_id -> value, for per-claim decomposable metrics."""
        values: dict[str, dict[str, float]] = {m: {} for m in metrics if m != "F1"}
        for cid in claim_ids:
            ranking = rankings[(cid, repeat)]
            if mode == "id":
                rel = relevance[cid]
                values[f"Recall@{config.k}"][cid] = recall_at_k(ranking, rel, config.k)
                values[f"NDCG@{config.k}"][cid] = ndcg_at_k(ranking, rel, config.k)
            else:
                golds = gold_texts[cid]
                texts = ranked_texts(ranking)
                for scorer in config.text_scorers:
                    name = "METEOR" if scorer == "meteor" else "BERTScore"
                    values[name][cid] = evidence_text_score(
                        texts, golds, scorer=scorer,
                        pair_scorer=(provider.score_pairs if scorer == "bertscore" else None),
                    )
        return values

    # group membership per repeat
    by_repeat: dict[int, list] = {}
    for rec in match_records:
        by_repeat.setdefault(rec.repeat_index, []).append(rec)
    if sorted(by_repeat) != list(range(config.repeats)):
        raise DataError("match records do not cover every repeat")

    groups_per_repeat: dict[int, dict[str, set[str]]] = {}
    for repeat in range(config.repeats):
        matched, unmatched = stratify(claim_ids, by_repeat[repeat])
        groups_per_repeat[repeat] = {
            GROUP_ALL: set(claim_ids),
            GROUP_MATCHED: matched,
            GROUP_UNMATCHED: unmatched,
        }

    claims_by_id = {c.id: c for c in claims}

    def group_f1(members: set[str], repeat: int) -> float | None:
        labeled = [cid for cid in sorted(members) if claims_by_id[cid].label is not None]
        if not labeled:
            return None
        preds = [verdicts[(cid, repeat)].predicted for cid in labeled]
        golds = [claims_by_id[cid].label for cid in labeled]
        return macro_f1(preds, golds, label_set.names)

    per_repeat_group_values = []
    group_sizes: dict[str, list[int]] = {g: [] for g in GROUPS}
    claim_values_by_repeat: dict[int, dict[str, dict[str, float]]] = {}
    for repeat in range(config.repeats):
        claim_values = per_claim_values(repeat)
        claim_values_by_repeat[repeat] = claim_values
        table: dict[str, dict[str, float | None]] = {}
        for group, members in groups_per_repeat[repeat].items():
            group_sizes[group].append(len(members))
            row: dict[str, float | None] = {}
            for metric in metrics:
                if metric == "F1":
                    row[metric] = group_f1(members, repeat)
                else:
                    vals = [claim_values[metric][cid] for cid in members]
                    row[metric] = sum(vals) / len(vals) if vals else None
            table[group] = row
        per_repeat_group_values.append(table)

    # baseline (single deterministic run, no SE)
    baseline_values = per_claim_values(BASELINE_REPEAT)
    baseline: dict[str, float] = {}
    for metric in metrics:
        if metric == "F1":
            value = group_f1(set(claim_ids), BASELINE_REPEAT)
            if value is not None:
                baseline[metric] = value
        else:
            vals = list(baseline_values[metric].values())
            baseline[metric] = sum(vals) / len(vals)

    # significance comparisons on the primary retrieval metric
    comparisons = []
    if config.mwu_unit == "per_claim":
        a = []
        b = []
        for cid in claim_ids:
            per_repeat = [claim_values_by_repeat[r][primary_metric][cid]
                          for r in range(config.repeats)]
            a.append(sum(per_repeat) / len(per_repeat))
            b.append(baseline_values[primary_metric][cid])
        comparisons.append(Comparison(
            name="expansion_vs_baseline", metric=primary_metric,
            mode="per_claim", a=a, b=b,
        ))
        pooled_m = []
        pooled_not = []
        for repeat in range(config.repeats):
            for cid in groups_per_repeat[repeat][GROUP_MATCHED]:
                pooled_m.append(claim_values_by_repeat[repeat][primary_metric][cid])
            for cid in groups_per_repeat[repeat][GROUP_UNMATCHED]:
                pooled_not.append(claim_values_by_repeat[repeat][primary_metric][cid])
        if pooled_m and pooled_not:
            comparisons.append(Comparison(
                name="matched_vs_unmatched", metric=primary_metric,
                mode="per_claim_pooled", a=pooled_m, b=pooled_not,
            ))
    else:
        all_means = [per_repeat_group_values[r][GROUP_ALL][primary_metric]
                     for r in range(config.repeats)]
        comparisons.append(Comparison(
            name="expansion_vs_baseline", metric=primary_metric,
            mode="per_repeat", a=[v for v in all_means if v is not None],
            b=[baseline[primary_metric]],
        ))
        m_means = [per_repeat_group_values[r][GROUP_MATCHED][primary_metric]
                   for r in range(config.repeats)]
        n_means = [per_repeat_group_values[r][GROUP_UNMATCHED][primary_metric]
                   for r in range(config.repeats)]
        m_vals = [v for v in m_means if v is not None]
        n_vals = [v for v in n_means if v is not None]
        if m_vals and n_vals:
            comparisons.append(Comparison(
                name="matched_vs_unmatched", metric=primary_metric,
                mode="per_repeat", a=m_vals, b=n_vals,
            ))

    manifest = load_manifest(run_dir)
    tallies = {}
    for stage in ("expand", "match", "verdict", "retrieve"):
        for key, val in (manifest.stage_stats(stage) if manifest else {}).items():
            if key.endswith(("failures", "fallbacks", "empty_rankings")) or key in (
                "nli_parse_failures", "verdict_parse_failures", "generation_failures",
            ):
                tallies[key] = val

    report = build_report(
        method=config.method,
        model_id=config.model_id,
        eval_mode=mode,
        k=config.k,
        metrics=metrics,
        per_repeat_group_values=per_repeat_group_values,
        group_sizes=group_sizes,
        baseline_name="BM25" if config.method == "query2doc" else "dense",
        baseline=baseline,
        matched_rate=matched_summary,
        comparisons=comparisons,
        tallies=tallies,
        tool_version=__version__,
    )
    (run_dir / "report.json").write_text(report_json(report), "utf-8")
    (run_dir / "report.txt").write_text(render_text(report), "utf-8")
    return ["report.json", "report.txt"], {"metrics": metrics, "eval_mode": mode}


_STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "index": _stage_index,
    "expand": _stage_expand,
    "retrieve": _stage_retrieve,
    "match": _stage_match,
    "verdict": _stage_verdict,
    "report": _stage_report,
}

_NEEDS_PROVIDER = {"index", "expand", "retrieve", "match", "verdict", "report"}


def run_stage(
    stage: str,
    config: RunConfig,
    run_dir: str | Path,
    mock: bool = False,
    cache_dir: str | None = None,
    force: bool = False,
    provider: Provider | None = None,
) -> RunManifest:
    """Run one stage (prerequisites must be complete) and update the manifest."""
    if stage not in STAGES:
        raise PipelineStateError(f"unknown stage {stage!r}; stages are {', '.join(STAGES)}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    with run_lock(run_dir):
        manifest = load_manifest(run_dir)
        chash = config_hash(config)
        if manifest is None:
            manifest = RunManifest(run_id=chash[:16], config=config.as_dict(), config_hash=chash)
        elif manifest.config_hash != chash:
            if not force:
                raise PipelineStateError(
                    "config does not match this run directory's manifest; "
                    "rerun with --force to accept the new config"
                )
            # a forced config change invalidates this stage and everything after it
            manifest.config = config.as_dict()
            manifest.config_hash = chash
            manifest.run_id = chash[:16]
            for later in STAGES[STAGES.index(stage):]:
                manifest.stages.pop(later, None)

        missing = [s for s in STAGES[: STAGES.index(stage)] if not manifest.stage_completed(s)]
        if missing:
            raise PipelineStateError(
                f"stage {stage!r} requires completed prerequisites: {', '.join(missing)}"
            )

        if manifest.stage_completed(stage) and not force:
            logger.info("stage %s already complete; no-op", stage)
            save_manifest(manifest, run_dir)
            return manifest

        if provider is None and stage in _NEEDS_PROVIDER:
            provider = _LazyProvider(lambda: build_provider(config, mock, cache_dir))
        logger.info("running stage %s", stage)
        outputs, stats = _STAGE_FUNCS[stage](config, run_dir, provider)
        manifest.mark(stage, outputs, stats)
        save_manifest(manifest, run_dir)
        return manifest


def run_all(
    config: RunConfig,
    run_dir: str | Path,
    mock: bool = False,
    cache_dir: str | None = None,
    force: bool = False,
) -> RunManifest:
    manifest = None
    for stage in STAGES:
        manifest = run_stage(stage, config, run_dir, mock=mock,
                             cache_dir=cache_dir, force=force)
    return manifest
