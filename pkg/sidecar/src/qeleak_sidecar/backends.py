"""Model backends behind the wire protocol.

Builtin backends are pure deterministic functions with no model weights:
hashed-projection sentence embeddings, a lexical-overlap NLI classifier,
and token-level greedy-match pair scoring. They keep the full service
testable offline; real encoders plug in through the same interfaces by
configuring Hugging Face model names.
"""

import hashlib
import math
import re
import threading

NLI_LABELS = ("entailment", "contradiction", "neutral")

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FUNCTION_WORDS = frozenset(
    "the a an is are was were be been being of in on at to with for and or "
    "by every this that these those it its his her their has have had will "
    "would can could do does did as from over under about".split()
)

_NEGATION_TOKENS = frozenset(
    "not no never none cannot nothing neither nor isn aren wasn weren don "
    "doesn didn won wouldn couldn shouldn hasn haven hadn".split()
)

_ANTONYMS = {
    "rose": "fell", "rise": "fall", "rising": "falling", "increase": "decrease",
    "increased": "decreased", "more": "less", "open": "closed", "opened": "closed",
    "up": "down", "before": "after", "hot": "cold", "alive": "dead",
    "summer": "winter", "day": "night", "north": "south", "east": "west",
    "won": "lost", "above": "below", "begin": "end", "began": "ended",
}
_ANTONYMS.update({v: k for k, v in list(_ANTONYMS.items())})


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _strip_inflection(token: str) -> str:
    for suffix in ("ing", "ed", "es", "s"):
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def _content_tokens(text: str) -> list[str]:
    return [
        _strip_inflection(t)
        for t in _tokens(text)
        if t not in _FUNCTION_WORDS and t not in _NEGATION_TOKENS
    ]


def _hash_floats(seed_text: str, count: int) -> list[float]:
    out: list[float] = []
    block = 0
    while len(out) < count:
        digest = hashlib.sha256(f"{seed_text}|{block}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 3, 4):
            out.append(int.from_bytes(digest[i : i + 4], "little") / 2**31 - 1.0)
            if len(out) == count:
                break
        block += 1
    return out


class HashEmbedder:
    """Deterministic bag-of-token projection onto a fixed-dim unit sphere."""

    def __init__(self, dim: int = 64):
        self.dim = dim
        self.model_name = f"builtin:hash-{dim}"

    def embed(self, texts: list[str]) -> list[list[float]]:
        out = []
        for text in texts:
            acc = [0.0] * self.dim
            tokens = _tokens(text)
            if tokens:
                for tok in tokens:
                    for i, v in enumerate(_hash_floats(f"tok:{tok}", self.dim)):
                        acc[i] += v
            else:
                acc = _hash_floats(f"raw:{text}", self.dim)
            norm = math.sqrt(sum(x * x for x in acc)) or 1.0
            out.append([x / norm for x in acc])
        return out


class LexicalNli:
    """Heuristic three-way entailment from token containment.

    entailment: hypothesis content tokens are (almost) all present in the
    premise with matching negation parity; contradiction: high containment
    with flipped negation parity, an antonym substitution, or conflicting
    numbers; neutral otherwise. No semantic equivalence is claimed; the
    classifier exists for offline runs and is validated against a
    hand-labeled fixture.
    """

    model_name = "builtin:lexical-nli"

    CONTAINMENT = 0.8
    CONFLICT_CONTAINMENT = 0.6

    def judge(self, premise: str, hypothesis: str) -> str:
        prem_tokens = _tokens(premise)
        hyp_tokens = _tokens(hypothesis)
        prem_content = set(_content_tokens(premise))
        hyp_content = _content_tokens(hypothesis)
        if not hyp_content:
            return "neutral"
        prem_negs = sum(1 for t in prem_tokens if t in _NEGATION_TOKENS)
        hyp_negs = sum(1 for t in hyp_tokens if t in _NEGATION_TOKENS)
        parity_flip = (prem_negs % 2) != (hyp_negs % 2)

        missing = [t for t in hyp_content if t not in prem_content]
        containment = 1.0 - len(missing) / len(hyp_content)

        antonym_conflict = any(
            _ANTONYMS.get(t) in prem_content and t not in prem_content
            for t in hyp_content
        )
        hyp_numbers = {t for t in hyp_content if t.isdigit()}
        prem_numbers = {t for t in prem_content if t.isdigit()}
        number_conflict = bool(hyp_numbers - prem_numbers) and bool(
            prem_numbers - hyp_numbers
        )

        if (antonym_conflict or number_conflict) and \
                containment >= self.CONFLICT_CONTAINMENT:
            return "contradiction"
        if containment >= self.CONTAINMENT:
            return "contradiction" if parity_flip else "entailment"
        return "neutral"


class TokenOverlapScorer:
    """Token-level greedy-match F score (exact-match kernel), in [0, 1]."""

    model_name = "builtin:token-overlap"

    def score_matrix(self, candidates: list[str], references: list[str]) -> list[list[float]]:
        cand_tokens = [_tokens(c) for c in candidates]
        ref_tokens = [_tokens(r) for r in references]
        matrix = []
        for ct in cand_tokens:
            row = []
            for rt in ref_tokens:
                if not ct or not rt:
                    row.append(0.0)
                    continue
                counts: dict[str, int] = {}
                for t in rt:
                    counts[t] = counts.get(t, 0) + 1
                overlap = 0
                for t in ct:
                    if counts.get(t, 0) > 0:
                        counts[t] -= 1
                        overlap += 1
                precision = overlap / len(ct)
                recall = overlap / len(rt)
                f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
                row.append(min(1.0, max(0.0, f)))
            matrix.append(row)
        return matrix


# --- transformers-backed backends (require the [models] extra) -----------


class SentenceTransformerEmbedder:
    def __init__(self, model_name: str, device: str = "cpu"):
        from sentence_transformers import SentenceTransformer

        self.model_name = model_name
        self._model = SentenceTransformer(model_name, device=device)
        self.dim = int(self._model.get_sentence_embedding_dimension())
        self._lock = threading.Lock()

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            return []
        with self._lock:  # serialize inference; responses independent of interleaving
            vectors = self._model.encode(texts, convert_to_numpy=True,
                                         show_progress_bar=False)
        return [[float(x) for x in vec] for vec in vectors]


class TransformersNli:
    def __init__(self, model_name: str, device: str = "cpu"):
        import torch
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self.model_name = model_name
        self._tokenizer = AutoTokenizer.from_pretrained(model_name)
        self._model = AutoModelForSequenceClassification.from_pretrained(model_name)
        self._model.eval().to(device)
        self._device = device
        self._torch = torch
        self._lock = threading.Lock()
        self._label_map = {}
        for idx, name in self._model.config.id2label.items():
            lowered = str(name).lower()
            for target in NLI_LABELS:
                if target.startswith(lowered[:6]) or lowered.startswith(target[:6]):
                    self._label_map[int(idx)] = target
        if set(self._label_map.values()) != set(NLI_LABELS):
            raise ValueError(
                f"{model_name}: id2label {self._model.config.id2label} does not "
                "cover entailment/contradiction/neutral"
            )

    def judge(self, premise: str, hypothesis: str) -> str:
        with self._lock:
            inputs = self._tokenizer(premise, hypothesis, return_tensors="pt",
                                     truncation=True, max_length=512).to(self._device)
            with self._torch.no_grad():
                logits = self._model(**inputs).logits[0]
        return self._label_map[int(logits.argmax().item())]


class TransformersBertScorer:
    """Greedy-cosine token matching over encoder embeddings, clamped [0, 1]."""

    def __init__(self, model_name: str, device: str = "cpu"):
        import torch
        from transformers import AutoModel, AutoTokenizer

        self.model_name = model_name
        self._tokenizer = AutoTokenizer.from_pretrained(model_name)
        self._model = AutoModel.from_pretrained(model_name)
        self._model.eval().to(device)
        self._device = device
        self._torch = torch
        self._lock = threading.Lock()

    def _token_embeddings(self, text: str):
        inputs = self._tokenizer(text, return_tensors="pt", truncation=True,
                                 max_length=512).to(self._device)
        with self._torch.no_grad():
            hidden = self._model(**inputs).last_hidden_state[0]
        return hidden / hidden.norm(dim=-1, keepdim=True).clamp(min=1e-12)

    def score_matrix(self, candidates: list[str], references: list[str]) -> list[list[float]]:
        with self._lock:
            cand_emb = [self._token_embeddings(c) for c in candidates]
            ref_emb = [self._token_embeddings(r) for r in references]
            matrix = []
            for ce in cand_emb:
                row = []
                for re_ in ref_emb:
                    sim = ce @ re_.T
                    precision = float(sim.max(dim=1).values.mean())
                    recall = float(sim.max(dim=0).values.mean())
                    f = 2 * precision * recall / (precision + recall) \
                        if precision + recall else 0.0
                    row.append(min(1.0, max(0.0, f)))
                matrix.append(row)
        return matrix


def build_embedder(name: str, device: str):
    if name.startswith("builtin:"):
        dim = int(name.rsplit("-", 1)[1]) if "-" in name else 64
        return HashEmbedder(dim=dim)
    return SentenceTransformerEmbedder(name, device=device)


def build_nli(name: str, device: str):
    if name.startswith("builtin:"):
        return LexicalNli()
    return TransformersNli(name, device=device)


def build_scorer(name: str, device: str):
    if name.startswith("builtin:"):
        return TokenOverlapScorer()
    return TransformersBertScorer(name, device=device)
