import json
from pathlib import Path

import numpy as np
import pytest

from convsparse.context import Conversation, EncoderSet, Turn
from convsparse.encoder import PrecomputedEncoder, text_key
from convsparse.sparse import SparseVec, Vocabulary

DATA = Path(__file__).parent / "data"

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def obama():
    """Vocabulary, gold-query vector and conversation for the 'How old is he?' example."""
    weights = json.loads((DATA / "obama_weights.json").read_text())
    vocab = Vocabulary.with_markers(
        list(weights) + ["how", "is", "he", "tell", "me", "about", "was", "the", "44th",
                         "and", "visited", "france"]
    )
    vec = SparseVec.from_dict({vocab.id_of(w.lower()): v for w, v in weights.items()}, vocab.size)
    conv = Conversation("obama", (
        Turn("Tell me about Barack Obama", "Barack Obama was the 44th president and visited France.",
             "Tell me about Barack Obama"),
        Turn("How old is he?", None, "How old is Obama?"),
    ))
    frozen = PrecomputedEncoder({text_key("How old is Obama?"): vec}, vocab.size)
    return vocab, vec, conv, frozen


class ConstEncoder:
    """Returns a fixed vector and counts calls."""

    def __init__(self, vec):
        self.vec = vec
        self.calls = []

    def encode(self, text):
        self.calls.append(text)
        return self.vec


@pytest.fixture
def const_encoders():
    def make(u, v, ref=None):
        return EncoderSet(ConstEncoder(u), ConstEncoder(v), ConstEncoder(ref if ref is not None else u))
    return make
