import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from topicgraph.corpus import TokenizedDocument  # noqa: E402

SAMPLE = Path(__file__).resolve().parent.parent / "sample"


@pytest.fixture
def tiny_docs():
    return [
        TokenizedDocument("d1", ["a", "b"]),
        TokenizedDocument("d2", ["a", "c"]),
        TokenizedDocument("d3", ["a"]),
    ]


@pytest.fixture
def sample_dir():
    return SAMPLE
