"""Service configuration.

Model names starting with "builtin:" select the deterministic offline
backends; anything else is treated as a Hugging Face model name and loaded
through transformers / sentence-transformers (requires the [models] extra
and local weights). Models must load at startup or the service refuses to
start.
"""

from dataclasses import dataclass

BUILTIN_EMBED = "builtin:hash-64"
BUILTIN_NLI = "builtin:lexical-nli"
BUILTIN_SCORE = "builtin:token-overlap"


@dataclass
class ServiceConfig:
    embedding_model: str = BUILTIN_EMBED
    nli_model: str = BUILTIN_NLI
    bertscore_model: str = BUILTIN_SCORE
    port: int = 8976
    max_batch: int = 256
    device: str = "cpu"

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if not 0 <= self.port <= 65535:
            raise ValueError("port out of range")
