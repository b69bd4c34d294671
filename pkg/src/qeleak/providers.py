"""Wire-protocol clients for generation, embeddings, NLI judging, and
pair scoring, with content-addressed disk caching, bounded retries, and a
seeded offline mock.

Endpoints (shared by remote APIs and the local sidecar):
  POST {base}/v1/chat/completions   -> choices[0].message.content
  POST {base}/v1/embeddings         -> data[i].embedding
  POST {base}/nli                   -> {"label": ...}       (sidecar)
  POST {scorer_base}/score          -> {"matrix": [[...]]}  (sidecar)
Bearer auth comes from the QELEAK_API_KEY environment variable.
"""

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .analyzer import tokenize
from .errors import DataError, ProviderError

logger = logging.getLogger(__name__)

NLI_LABELS = ("entailment", "contradiction", "neutral")

NLI_PROMPT = (
    "Given the premise sentence S1, determine if the hypothesis sentence S2 "
    "is entailed or contradicted or neutral, by three labels: entailment, "
    "contradiction, neutral.\n"
    "Respond only with one of the labels.\n"
    "S1: {premise}\n"
    "S2: {hypothesis}\n"
    "Label:"
)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    prompt: str
    temperature: float = 0.7
    top_p: float = 1.0
    max_tokens: int = 512
    repeat_index: int = 0
    reask: int = 0  # cache disambiguator for re-asks after unparseable output

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.repeat_index < 0:
            raise ValueError("repeat_index must be >= 0")


def cache_key(kind: str, model_id: str, payload: dict) -> str:
    """Content hash over endpoint kind, model, and the full request payload."""
    blob = json.dumps(
        {"kind": kind, "model_id": model_id, "payload": payload},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class DiskCache:
    """Content-addressed response cache; completed entries are immutable.

    Writes go through a temp file + atomic rename so concurrent readers
    never observe partial entries and interrupted runs resume for free.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None

    def put(self, key: str, value: dict) -> None:
        path = self._path(key)
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(value, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def parse_nli_label(response: str) -> str | None:
    cleaned = response.strip().strip(".:;,!?\"'` \t\r\n").lower()
    return cleaned if cleaned in NLI_LABELS else None


class Provider:
    """Base provider: caching layer plus the shared NLI judging protocol."""

    def __init__(self, cache: DiskCache | None = None):
        self.cache = cache

    # transport hooks -------------------------------------------------
    def _chat_raw(self, req: ChatRequest) -> str:
        raise NotImplementedError

    def _embed_raw(self, texts: list[str], model_id: str) -> list[list[float]]:
        raise NotImplementedError

    def _score_raw(self, candidates: list[str], references: list[str],
                   scorer: str) -> list[list[float]]:
        raise NotImplementedError

    # public operations ------------------------------------------------
    def chat_complete(self, req: ChatRequest) -> str:
        payload = {
            "prompt": req.prompt,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "repeat_index": req.repeat_index,
            "reask": req.reask,
        }
        key = cache_key("chat", req.model_id, payload)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit["text"]
        text = self._chat_raw(req)
        if self.cache is not None:
            self.cache.put(key, {"text": text})
        return text

    def embed(self, texts: list[str], model_id: str) -> list[list[float]]:
        """One vector per input text, order-preserving, uniform dimension."""
        if not texts:
            raise ValueError("embed requires a nonempty list of texts")
        keys = [cache_key("embed", model_id, {"text": t}) for t in texts]
        vectors: list[list[float] | None] = [None] * len(texts)
        misses: list[int] = []
        for i, key in enumerate(keys):
            hit = self.cache.get(key) if self.cache is not None else None
            if hit is not None:
                vectors[i] = hit["vector"]
            else:
                misses.append(i)
        if misses:
            fresh = self._embed_raw([texts[i] for i in misses], model_id)
            if len(fresh) != len(misses):
                raise ProviderError(
                    f"embedding endpoint returned {len(fresh)} vectors for "
                    f"{len(misses)} inputs"
                )
            for i, vec in zip(misses, fresh):
                vectors[i] = [float(x) for x in vec]
                if self.cache is not None:
                    self.cache.put(keys[i], {"vector": vectors[i]})
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise ProviderError(f"embedding dimension mismatch across batch: {sorted(dims)}")
        for vec in vectors:
            if not all(math.isfinite(x) for x in vec):
                raise ProviderError("embedding contains non-finite values")
        return vectors  # type: ignore[return-value]

    def score_pairs(self, candidates: list[str], references: list[str],
                    scorer: str = "bertscore") -> list[list[float]]:
        """|candidates| x |references| matrix of pairwise scores in [0, 1]."""
        if not candidates:
            return []
        if not references:
            return [[] for _ in candidates]
        payload = {"scorer": scorer, "candidates": candidates, "references": references}
        key = cache_key("score", scorer, payload)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit["matrix"]
        matrix = [[float(x) for x in row] for row in
                  self._score_raw(candidates, references, scorer)]
        if len(matrix) != len(candidates) or any(len(r) != len(references) for r in matrix):
            raise ProviderError("pair-scoring endpoint returned a misshapen matrix")
        if self.cache is not None:
            self.cache.put(key, {"matrix": matrix})
        return matrix

    def nli_judge(
        self,
        premise: str,
        hypothesis: str,
        model_id: str,
        repeat_index: int = 0,
    ) -> tuple[str, bool]:
        """Three-way entailment judgment via the chat prompt.

        Unparseable responses get one re-ask; a second failure degrades to
        neutral with the parse-failure flag set (tallied in reports, never
        silently coerced).
        """
        if not premise.strip() or not hypothesis.strip():
            raise ValueError("nli_judge requires nonempty premise and hypothesis")
        prompt = NLI_PROMPT.format(premise=premise, hypothesis=hypothesis)
        for reask in (0, 1):
            req = ChatRequest(
                model_id=model_id,
                prompt=prompt,
                temperature=0.0,
                top_p=1.0,
                max_tokens=8,
                repeat_index=repeat_index,
                reask=reask,
            )
            label = parse_nli_label(self.chat_complete(req))
            if label is not None:
                return label, False
        return "neutral", True


class HttpProvider(Provider):
    """Client for any endpoint speaking the chat/embeddings/score protocol."""

    RETRYABLE_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        base_url: str,
        cache: DiskCache | None = None,
        scorer_url: str = "",
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        nli_route: str = "chat",  # {chat, endpoint}
    ):
        super().__init__(cache=cache)
        self.base_url = base_url.rstrip("/")
        self.scorer_url = (scorer_url or base_url).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("QELEAK_API_KEY")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        if nli_route not in ("chat", "endpoint"):
            raise ValueError(f"unknown nli_route {nli_route!r}")
        self.nli_route = nli_route

    def _post(self, url: str, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = requests.post(url, json=payload, headers=headers, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProviderError(
                            f"{url}: non-JSON response", status=resp.status_code
                        ) from exc
                if resp.status_code not in self.RETRYABLE_STATUS:
                    raise ProviderError(
                        f"{url}: HTTP {resp.status_code}: {resp.text[:200]}",
                        status=resp.status_code,
                        attempts=attempt,
                    )
                last_error = ProviderError(
                    f"{url}: HTTP {resp.status_code}", status=resp.status_code
                )
            if attempt < self.max_attempts:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
        raise ProviderError(
            f"{url}: exhausted {self.max_attempts} attempts ({last_error})",
            attempts=self.max_attempts,
        )

    def _chat_raw(self, req: ChatRequest) -> str:
        body = self._post(
            f"{self.base_url}/v1/chat/completions",
            {
                "model": req.model_id,
                "messages": [{"role": "user", "content": req.prompt}],
                "temperature": req.temperature,
                "top_p": req.top_p,
                "max_tokens": req.max_tokens,
            },
        )
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("chat response missing choices[0].message.content") from exc

    def _embed_raw(self, texts: list[str], model_id: str) -> list[list[float]]:
        body = self._post(
            f"{self.base_url}/v1/embeddings",
            {"model": model_id, "input": texts},
        )
        try:
            data = sorted(body["data"], key=lambda item: item.get("index", 0))
            return [item["embedding"] for item in data]
        except (KeyError, TypeError) as exc:
            raise ProviderError("embeddings response missing data[i].embedding") from exc

    def _score_raw(self, candidates: list[str], references: list[str],
                   scorer: str) -> list[list[float]]:
        body = self._post(
            f"{self.scorer_url}/score",
            {"scorer": scorer, "candidates": candidates, "references": references},
        )
        try:
            return body["matrix"]
        except (KeyError, TypeError) as exc:
            raise ProviderError("score response missing matrix") from exc

    def nli_judge(self, premise, hypothesis, model_id, repeat_index=0):
        if self.nli_route == "chat":
            return super().nli_judge(premise, hypothesis, model_id, repeat_index)
        if not premise.strip() or not hypothesis.strip():
            raise ValueError("nli_judge requires nonempty premise and hypothesis")
        payload = {"premise": premise, "hypothesis": hypothesis}
        key = cache_key("nli", model_id, {**payload, "repeat_index": repeat_index})
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit["label"], hit["parse_failed"]
        label = None
        for _ in (0, 1):
            body = self._post(f"{self.base_url}/nli", payload)
            label = parse_nli_label(str(body.get("label", "")))
            if label is not None:
                break
        parse_failed = label is None
        if label is None:
            label = "neutral"
        if self.cache is not None:
            self.cache.put(key, {"label": label, "parse_failed": parse_failed})
        return label, parse_failed


def _digest_floats(seed_text: str, count: int) -> list[float]:
    """Deterministic floats in [-1, 1) derived from a hash stream."""
    out: list[float] = []
    counter = 0
    while len(out) < count:
        digest = hashlib.sha256(f"{seed_text}#{counter}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 3, 4):
            val = int.from_bytes(digest[i : i + 4], "little") / 2**31 - 1.0
            out.append(val)
            if len(out) == count:
                break
        counter += 1
    return out


_VERDICT_LABELS_RE = re.compile(r"Select one of the following labels: (.+?)\.")
_NLI_S_RE = re.compile(r"\nS1: (.*)\nS2: (.*)\nLabel:$", re.DOTALL)

_MOCK_WORDS = [
    "amber", "basalt", "cedar", "delta", "ember", "fjord", "garnet", "harbor",
    "iris", "juniper", "krill", "lumen", "maple", "nectar", "onyx", "pollen",
    "quartz", "reed", "sable", "tundra", "umber", "vellum", "willow", "yarrow",
]


class MockProvider(Provider):
    """Deterministic offline provider: a pure function of (seed, request).

    Chat behavior by prompt shape:
      * NLI prompts: entailment when the normalized hypothesis occurs
        inside the normalized premise, else neutral.
      * verdict prompts: a hash-picked label from the listed label set.
      * anything else: canned text when the (prompt, repeat) key is in the
        canned map, otherwise synthesized filler sentences.
    Embeddings are hash-derived unit vectors (default dim 8) built from
    token hashes, so token overlap moves vectors closer together.
    """

    def __init__(
        self,
        seed: int = 0,
        cache: DiskCache | None = None,
        canned: dict[str, str] | None = None,
        dim: int = 8,
    ):
        super().__init__(cache=cache)
        self.seed = seed
        self.dim = dim
        self.canned = dict(canned or {})
        self.calls = Counter()
        self._lock = threading.Lock()

    @staticmethod
    def canned_key(prompt: str, repeat_index: int) -> str:
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:24]
        return f"{digest}:{repeat_index}"

    @classmethod
    def load_canned(cls, path: str | Path) -> dict[str, str]:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return data["entries"]

    def _count(self, kind: str, amount: int = 1) -> None:
        with self._lock:
            self.calls[kind] += amount

    def _chat_raw(self, req: ChatRequest) -> str:
        self._count("chat")
        nli = _NLI_S_RE.search(req.prompt)
        if nli and req.prompt.startswith("Given the premise sentence S1"):
            premise = " ".join(tokenize(nli.group(1)))
            hypothesis = " ".join(tokenize(nli.group(2)))
            if hypothesis and hypothesis in premise:
                return "entailment"
            return "neutral"
        verdict = _VERDICT_LABELS_RE.search(req.prompt)
        if verdict and req.prompt.startswith("Your task is to predict the verdict"):
            labels = [lab.strip() for lab in verdict.group(1).split(",")]
            pick = _digest_floats(f"{self.seed}|verdict|{req.prompt}|{req.repeat_index}", 1)[0]
            return labels[int((pick + 1.0) / 2.0 * len(labels)) % len(labels)]
        key = self.canned_key(req.prompt, req.repeat_index)
        if key in self.canned:
            return self.canned[key]
        vals = _digest_floats(
            f"{self.seed}|chat|{req.model_id}|{req.prompt}|{req.repeat_index}|{req.reask}"
            f"|{req.temperature}|{req.top_p}|{req.max_tokens}",
            18,
        )
        words = [_MOCK_WORDS[int((v + 1.0) / 2.0 * len(_MOCK_WORDS)) % len(_MOCK_WORDS)]
                 for v in vals]
        sentences = []
        for start in range(0, 18, 6):
            chunk = words[start : start + 6]
            sentences.append(chunk[0].capitalize() + " " + " ".join(chunk[1:]) + ".")
        return " ".join(sentences)

    def _embed_raw(self, texts: list[str], model_id: str) -> list[list[float]]:
        self._count("embed", len(texts))
        out = []
        for text in texts:
            tokens = tokenize(text)
            acc = [0.0] * self.dim
            if tokens:
                for tok in tokens:
                    for i, v in enumerate(
                        _digest_floats(f"{self.seed}|{model_id}|tok|{tok}", self.dim)
                    ):
                        acc[i] += v
            else:
                acc = _digest_floats(f"{self.seed}|{model_id}|raw|{text}", self.dim)
            norm = math.sqrt(sum(x * x for x in acc))
            if norm == 0.0:
                acc[0] = 1.0
                norm = 1.0
            out.append([x / norm for x in acc])
        return out

    def _score_raw(self, candidates: list[str], references: list[str],
                   scorer: str) -> list[list[float]]:
        self._count("score")
        matrix = []
        for cand in candidates:
            c_tokens = Counter(tokenize(cand))
            row = []
            for ref in references:
                r_tokens = Counter(tokenize(ref))
                overlap = sum((c_tokens & r_tokens).values())
                total = sum(c_tokens.values()) + sum(r_tokens.values())
                row.append(2.0 * overlap / total if total else 0.0)
            matrix.append(row)
        return matrix


class FixturePairScorer:
    """Pair scorer reading a precomputed matrix file keyed by text hashes."""

    def __init__(self, path: str | Path):
        with open(path, encoding="utf-8") as fh:
            self._scores: dict[str, float] = json.load(fh)["scores"]

    @staticmethod
    def pair_key(candidate: str, reference: str) -> str:
        c = hashlib.sha256(candidate.encode("utf-8")).hexdigest()[:16]
        r = hashlib.sha256(reference.encode("utf-8")).hexdigest()[:16]
        return f"{c}:{r}"

    @classmethod
    def write_fixture(cls, path: str | Path, candidates: list[str],
                      references: list[str], matrix: list[list[float]]) -> None:
        scores = {}
        for i, cand in enumerate(candidates):
            for j, ref in enumerate(references):
                scores[cls.pair_key(cand, ref)] = matrix[i][j]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"scores": scores}, fh, ensure_ascii=False, sort_keys=True)

    def score_pairs(self, candidates: list[str], references: list[str],
                    scorer: str = "bertscore") -> list[list[float]]:
        matrix = []
        for cand in candidates:
            row = []
            for ref in references:
                key = self.pair_key(cand, ref)
                if key not in self._scores:
                    raise DataError(f"fixture scorer missing pair {key}")
                row.append(self._scores[key])
            matrix.append(row)
        return matrix
