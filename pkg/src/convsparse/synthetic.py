"""Synthetic conversational retrieval suite.

Conversations revolve around a hidden topic. Follow-up queries are made of
generic words only; the matching gold query appends one or two topic words
taken from the previous answer. Relevant documents are written from the gold
query, so a raw follow-up query alone cannot tell them apart from the many
documents sharing its generic words.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import Conversation, Turn, query_id
from .encoder import ToyEncoder, ToyEncoderParams
from .sparse import CLS, SparseVec, Vocabulary

GENERIC_WORDS = ("what", "how", "when", "where", "who", "why", "is", "was", "did", "does", "the", "about")


@dataclass
class SyntheticSuite:
    vocab: Vocabulary
    reference: ToyEncoderParams
    train: list[Conversation]
    test: list[Conversation]
    corpus: list[tuple[str, SparseVec]]
    qrels: dict[str, dict[str, int]]

    def reference_encoder(self) -> ToyEncoder:
        return ToyEncoder(self.reference, self.vocab)


def make_vocab(size: int = 200) -> Vocabulary:
    n_topic = size - 2 - len(GENERIC_WORDS)
    if n_topic < 8:
        raise ValueError("vocabulary too small for the synthetic suite")
    return Vocabulary.with_markers(list(GENERIC_WORDS) + [f"t{i:03d}" for i in range(n_topic)])


def make_reference(vocab: Vocabulary, rng: np.random.Generator) -> ToyEncoderParams:
    """Identity-embedding encoder: each word lights up its own dimension.

    Topic words get high weight, generic words low weight, markers none.
    """
    v = vocab.size
    gains = np.array([0.0 if t.startswith("[") else (0.6 if t in GENERIC_WORDS else 2.5)
                      for t in vocab.terms])
    projection = np.diag(gains) + rng.normal(0.0, 0.05, (v, v)) * (1 - np.eye(v))
    return ToyEncoderParams(np.eye(v), projection, np.full(v, -0.5))


def _pick(rng, pool, k):
    return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]


def _conversation(cid: str, rng: np.random.Generator, topic_pool: list[str]) -> Conversation:
    topic = _pick(rng, topic_pool, 8)
    turns = []
    prev_answer_topics: list[str] = []
    for n in range(1, int(rng.integers(3, 7)) + 1):
        if n == 1:
            words = _pick(rng, GENERIC_WORDS, 2) + _pick(rng, topic, 2)
            gold = words
        else:
            words = _pick(rng, GENERIC_WORDS, 3)
            gold = words + _pick(rng, prev_answer_topics, int(rng.integers(1, 3)))
        prev_answer_topics = _pick(rng, topic, 4)
        answer = prev_answer_topics + _pick(rng, GENERIC_WORDS, 2)
        rng.shuffle(answer)
        turns.append(Turn(" ".join(words) + "?", " ".join(answer) + ".", " ".join(gold) + "?"))
    return Conversation(cid, tuple(turns))


def _doc_text(rng, gold_words: list[str], extra_pool: list[str], n_extra: int = 3) -> str:
    extra = _pick(rng, [w for w in extra_pool if w not in gold_words], n_extra)
    words = gold_words + extra
    rng.shuffle(words)
    return " ".join(words)


def make_suite(n_train: int = 500, n_test: int = 100, vocab_size: int = 200, seed: int = 0) -> SyntheticSuite:
    rng = np.random.default_rng(seed)
    vocab = make_vocab(vocab_size)
    topic_pool = [t for t in vocab.terms if t.startswith("t")]
    reference = make_reference(vocab, rng)
    train = [_conversation(f"train{i:04d}", rng, topic_pool) for i in range(n_train)]
    test = [_conversation(f"test{i:04d}", rng, topic_pool) for i in range(n_test)]

    test_ids = {c.id for c in test}
    texts: list[tuple[str, str]] = []
    qrels: dict[str, dict[str, int]] = {}
    for conv in train + test:
        conv_words = sorted({w.strip("?.") for t in conv.turns for w in (t.query + " " + t.answer).split()})
        pool = [w for w in conv_words if w not in GENERIC_WORDS] + list(GENERIC_WORDS)
        for n, turn in enumerate(conv.turns, 1):
            gold = turn.gold.rstrip("?").split()
            qid = query_id(conv, n)
            texts.append((f"{qid}_d1", _doc_text(rng, gold, pool)))
            if conv.id in test_ids:
                specific = [w for w in gold if w not in GENERIC_WORDS] + gold[:1]
                texts.append((f"{qid}_d2", _doc_text(rng, specific, pool, 4)))
                qrels[qid] = {f"{qid}_d1": 2, f"{qid}_d2": 1}

    encoder = ToyEncoder(reference, vocab)
    order = rng.permutation(len(texts))
    corpus = [(texts[i][0], encoder.encode(f"{CLS} {texts[i][1]}")) for i in order]
    return SyntheticSuite(vocab, reference, train, test, corpus, qrels)
