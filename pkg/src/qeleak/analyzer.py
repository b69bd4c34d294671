"""Text analysis for the lexical index: lowercase, split, stopword, stem.

All tokenization in the toolkit operates on lowercased, NFC-normalized
text (UTF-8 throughout). The stopword list ships as a versioned data file;
ANALYZER_VERSION is stamped into persisted indexes so a loaded index is
never searched with a different analysis chain.
"""

import re
import unicodedata
from functools import lru_cache
from importlib import resources

from . import porter

ANALYZER_VERSION = "en-lower-stop1-porter"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def _load_stopwords() -> frozenset[str]:
    text = resources.files("qeleak").joinpath("data/stopwords.txt").read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


STOPWORDS = _load_stopwords()


@lru_cache(maxsize=65536)
def _stem(token: str) -> str:
    return porter.stem(token)


def tokenize(text: str) -> list[str]:
    """Lowercase NFC alphanumeric tokens, no stopwording or stemming."""
    return _TOKEN_RE.findall(unicodedata.normalize("NFC", text).lower())


def analyze(text: str) -> list[str]:
    """Full index-side analysis: tokenize, drop stopwords, Porter-stem.

    Single-character tokens are never treated as stopwords so that
    synthetic corpora built from letter tokens stay scorable.
    """
    out = []
    for tok in tokenize(text):
        if len(tok) > 1 and tok in STOPWORDS:
            continue
        out.append(_stem(tok))
    return out
