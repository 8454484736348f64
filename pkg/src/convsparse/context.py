"""Conversation records and contextualized query composition.

A turn's query representation is the sum of two encodings: the current
query followed by all earlier queries, and the mean encoding of the current
query paired with each of the last ``k`` answers.
"""

from __future__ import annotations

import enum
import json
import string
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .sparse import CLS, MARKERS, SEP, SparseVec, Vocabulary, add, mean

DEFAULT_MAX_TOKENS = 256
_STRIP = string.punctuation + "“”‘’"


@dataclass(frozen=True)
class Turn:
    query: str
    answer: str | None = None
    gold: str | None = None


@dataclass(frozen=True)
class Conversation:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise ValueError(f"conversation {self.id!r} has no turns")

    def __len__(self) -> int:
        return len(self.turns)

    def turn(self, n: int) -> Turn:
        """1-based turn access."""
        if not 1 <= n <= len(self.turns):
            raise IndexError(f"turn {n} out of range 1..{len(self.turns)} in {self.id!r}")
        return self.turns[n - 1]

    def answer(self, i: int) -> str:
        a = self.turn(i).answer
        if a is None:
            raise ValueError(f"conversation {self.id!r}: turn {i} has no answer")
        return a


class AnswerScope(enum.Enum):
    LAST = "last"
    ALL = "all"

    def k(self, n: int) -> int:
        """Number of past answers used at turn ``n`` (0 at the first turn)."""
        if n <= 1:
            return 0
        return 1 if self is AnswerScope.LAST else n - 1


class Encoder(Protocol):
    def encode(self, text: str) -> SparseVec: ...


@dataclass(frozen=True)
class EncoderSet:
    """The two trainable encoders plus the frozen reference one."""

    queries: Encoder
    answers: Encoder
    reference: Encoder


# -- tokenization -----------------------------------------------------------

def split_words(text: str) -> list[str]:
    """Whitespace words with surrounding punctuation removed (markers kept)."""
    out = []
    for raw in text.split():
        if raw in MARKERS:
            out.append(raw)
            continue
        w = raw.strip(_STRIP)
        if w:
            out.append(w)
    return out


def normalize(word: str) -> str:
    return word if word in MARKERS else word.lower()


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Vocabulary ids of the words in ``text``; out-of-vocabulary words are dropped."""
    ids = []
    for w in split_words(text):
        i = vocab.id_of(normalize(w))
        if i is not None:
            ids.append(i)
    return ids


def truncate_input(text: str, max_tokens: int = DEFAULT_MAX_TOKENS) -> str:
    """Cut whitespace tokens from the right, never inside the leading segment.

    The leading segment runs up to the first ``[SEP]`` and always holds the
    current query, so it survives whole even when longer than ``max_tokens``.
    """
    toks = text.split()
    if len(toks) <= max_tokens:
        return text
    head = toks.index(SEP) if SEP in toks else len(toks)
    return " ".join(toks[: max(max_tokens, head)])


# -- input builders -----------------------------------------------------------

def build_query_history_input(conv: Conversation, n: int) -> str:
    """``[CLS] q_n [SEP] q_1 [SEP] ... [SEP] q_{n-1}``"""
    parts = [CLS, conv.turn(n).query]
    for i in range(1, n):
        parts += [SEP, conv.turn(i).query]
    return " ".join(parts)


def build_answer_inputs(conv: Conversation, n: int, scope: AnswerScope) -> list[str]:
    """``q_n [SEP] a_i`` for each of the last ``k`` answers; bare ``q_n`` at turn 1."""
    q = conv.turn(n).query
    k = scope.k(n)
    if k == 0:
        return [q]
    return [f"{q} {SEP} {conv.answer(i)}" for i in range(n - k, n)]


def flat_context_input(conv: Conversation, n: int) -> str:
    """Single-sequence context: ``[CLS] q_n [SEP] q_1 [SEP] a_1 ... [SEP] a_{n-1}``."""
    parts = [CLS, conv.turn(n).query]
    for i in range(1, n):
        parts += [SEP, conv.turn(i).query, SEP, conv.answer(i)]
    return " ".join(parts)


# -- composition ----------------------------------------------------------------

def query_parts(conv: Conversation, n: int, scope: AnswerScope,
                encoders: EncoderSet) -> tuple[SparseVec, SparseVec]:
    """(query-history encoding, mean answer-context encoding) for turn ``n``."""
    history = encoders.queries.encode(build_query_history_input(conv, n))
    answers = mean([encoders.answers.encode(t) for t in build_answer_inputs(conv, n, scope)])
    return history, answers


def compose_query(conv: Conversation, n: int, scope: AnswerScope, encoders: EncoderSet) -> SparseVec:
    return add(*query_parts(conv, n, scope, encoders))


def gold_representation(gold: str | None, encoders: EncoderSet) -> SparseVec:
    """Encode a rewritten query with the frozen reference encoder."""
    if gold is None:
        raise ValueError("gold query is missing")
    return encoders.reference.encode(gold)


# -- JSONL ---------------------------------------------------------------------

def _turn_from_json(obj) -> Turn:
    if not isinstance(obj, dict) or not isinstance(obj.get("query"), str):
        raise ValueError("each turn needs a string 'query'")
    answer, gold = obj.get("answer"), obj.get("gold")
    for name, val in (("answer", answer), ("gold", gold)):
        if val is not None and not isinstance(val, str):
            raise ValueError(f"turn field {name!r} must be a string or null")
    return Turn(obj["query"], answer, gold)


def read_conversations(path) -> list[Conversation]:
    convs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                conv = Conversation(str(rec["id"]), tuple(_turn_from_json(t) for t in rec["turns"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            convs.append(conv)
    return convs


def write_conversations(path, convs: Iterable[Conversation]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in convs:
            turns = [{"query": t.query, "answer": t.answer, "gold": t.gold} for t in c.turns]
            f.write(json.dumps({"id": c.id, "turns": turns}) + "\n")


def context_words(conv: Conversation, n: int) -> list[str]:
    """Words of ``q_1, a_1, ..., q_{n-1}, a_{n-1}`` in order of appearance."""
    words: list[str] = []
    for i in range(1, n):
        t = conv.turn(i)
        words += split_words(t.query)
        if t.answer:
            words += split_words(t.answer)
    return [w for w in words if w not in MARKERS]


def turn_ids(convs: Sequence[Conversation]) -> list[tuple[Conversation, int]]:
    return [(c, n) for c in convs for n in range(1, len(c) + 1)]


def query_id(conv: Conversation, n: int) -> str:
    return f"{conv.id}_{n}"
