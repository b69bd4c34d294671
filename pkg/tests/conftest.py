import pytest

from qeleak.core import Corpus, Document
from qeleak.providers import MockProvider


@pytest.fixture
def mock_provider():
    return MockProvider(seed=11)


@pytest.fixture
def tiny_corpus():
    return Corpus(
        [
            Document("d1", "a b"),
            Document("d2", "b b"),
        ]
    )


def make_corpus(texts: dict[str, str]) -> Corpus:
    return Corpus([Document(doc_id, text) for doc_id, text in texts.items()])
