"""Reranker inputs: keyword-enriched prompts and distillation pair sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .context import Conversation, context_words, normalize, split_words
from .sparse import SparseVec, Vocabulary

TOP_RANKS = 3
MAX_DEPTH = 1000


@dataclass(frozen=True)
class EnrichedQuery:
    text: str
    keywords: tuple[str, ...]
    budget: int


@dataclass(frozen=True)
class PairSample:
    d1: str
    d2: str
    rank1: int
    rank2: int


def extract_keywords(qvec: SparseVec, conv: Conversation, n: int, k: int, vocab: Vocabulary) -> list[str]:
    """Pick the ``k`` context words with the highest query weight.

    Candidates are words of earlier queries and answers that do not occur in
    the current query. A word scores the query weight of its vocabulary entry
    (0 when out of vocabulary); only positive scores qualify. Selection is by
    score (ties: earlier first appearance), output is in order of appearance.
    """
    if k < 0:
        raise ValueError("keyword budget must be >= 0")
    if qvec.dim != vocab.size:
        raise ValueError(f"query dim {qvec.dim} != vocabulary size {vocab.size}")
    current = {normalize(w) for w in split_words(conv.turn(n).query)}
    first_seen: dict[str, str] = {}
    for w in context_words(conv, n):
        key = normalize(w)
        if key not in current and key not in first_seen:
            first_seen[key] = w

    scored = []
    for pos, (key, surface) in enumerate(first_seen.items()):
        term_id = vocab.id_of(key)
        score = qvec.get(term_id) if term_id is not None else 0.0
        if score > 0:
            scored.append((-score, pos, key, surface))
    chosen = sorted(scored)[:k]
    return [surface for _, _, _, surface in sorted(chosen, key=lambda s: s[1])]


def build_enriched_query(conv: Conversation, n: int, keywords: Sequence[str],
                         budget: int | None = None) -> EnrichedQuery:
    """``q_n. Context: q_1 ... q_{n-1}. Keywords: w_1, ..., w_K``"""
    history = " ".join(conv.turn(i).query for i in range(1, n))
    text = f"{conv.turn(n).query}. Context: {history}. Keywords: {', '.join(keywords)}"
    return EnrichedQuery(text, tuple(keywords), len(keywords) if budget is None else budget)


def sample_pairs(run: Sequence[str], count: int, seed: int | np.random.Generator) -> list[PairSample]:
    """Draw ``(d1, d2)`` with d1 uniform over ranks 1-3 and d2 over ranks 4-1000."""
    if len(run) < TOP_RANKS + 1:
        raise ValueError(f"run has {len(run)} documents, need at least {TOP_RANKS + 1}")
    rng = np.random.default_rng(seed)
    depth = min(MAX_DEPTH, len(run))
    r1 = rng.integers(0, TOP_RANKS, size=count)
    r2 = rng.integers(TOP_RANKS, depth, size=count)
    return [PairSample(run[a], run[b], int(a) + 1, int(b) + 1) for a, b in zip(r1, r2)]


def write_enriched(path, rows: Iterable[tuple[str, EnrichedQuery]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for qid, eq in rows:
            f.write(json.dumps({"qid": qid, "text": eq.text, "keywords": list(eq.keywords)}) + "\n")


def write_pairs(path, rows: Iterable[tuple[str, PairSample]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        for qid, p in rows:
            w.writerow([qid, p.d1, p.d2])
