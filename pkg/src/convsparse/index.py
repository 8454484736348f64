"""Impact inverted index with exact term-at-a-time top-k retrieval.

Binary layout (all integers little-endian)::

    magic         8 bytes   b"CSPXIDX\\n"
    version       u32       FORMAT_VERSION
    dim           u32       vocabulary size
    doc_count     u32
    nnz           u64       total postings
    doc table     doc_count x (u32 byte length, utf-8 identifier)
    offsets       (dim + 1) x u64    posting-list boundaries per term id
    post_docs     nnz x u32          internal doc numbers, ascending per term
    post_weights  nnz x f64

The file must end exactly after ``post_weights``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .sparse import SparseVec, VocabularyMismatchError, check_same_dim, from_text, to_text

MAGIC = b"CSPXIDX\n"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIQ")


class IndexFormatError(ValueError):
    """Unreadable, truncated or wrong-version index file."""


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


class InvertedIndex:
    """Postings stored CSR-style: term ``t`` owns ``offsets[t]:offsets[t+1]``."""

    def __init__(self, dim: int, doc_ids: Sequence[str], offsets, post_docs, post_weights):
        self.dim = int(dim)
        self.doc_ids = list(doc_ids)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.post_docs = np.asarray(post_docs, dtype=np.int64)
        self.post_weights = np.asarray(post_weights, dtype=np.float64)
        if self.offsets.shape != (self.dim + 1,):
            raise ValueError("offsets must have dim + 1 entries")
        for arr in (self.offsets, self.post_docs, self.post_weights):
            arr.flags.writeable = False

    @property
    def doc_count(self) -> int:
        return len(self.doc_ids)

    @property
    def nnz(self) -> int:
        return int(self.post_docs.size)

    @classmethod
    def build(cls, docs: Iterable[tuple[str, SparseVec]], dim: int | None = None) -> "InvertedIndex":
        docs = list(docs)
        if not docs and dim is None:
            raise ValueError("dim is required to build an empty index")
        if docs:
            vec_dim = check_same_dim(*(v for _, v in docs))
            if dim is not None and dim != vec_dim:
                raise VocabularyMismatchError(f"documents have dim {vec_dim}, expected {dim}")
            dim = vec_dim
        doc_ids = [d for d, _ in docs]
        if len(set(doc_ids)) != len(doc_ids):
            seen = set()
            dup = next(d for d in doc_ids if d in seen or seen.add(d))
            raise ValueError(f"duplicate document identifier {dup!r}")

        terms = np.concatenate([v.ids for _, v in docs]) if docs else np.empty(0, np.int64)
        weights = np.concatenate([v.weights for _, v in docs]) if docs else np.empty(0)
        owners = np.repeat(np.arange(len(docs)), [v.nnz for _, v in docs]) if docs else np.empty(0, np.int64)
        # stable sort keeps doc numbers ascending inside each posting list
        order = np.argsort(terms, kind="stable")
        counts = np.bincount(terms, minlength=dim)
        offsets = np.zeros(dim + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(dim, doc_ids, offsets, owners[order], weights[order])

    def postings(self, term_id: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.offsets[term_id], self.offsets[term_id + 1]
        return self.post_docs[s:e], self.post_weights[s:e]

    def score_all(self, q: SparseVec) -> np.ndarray:
        """Exact dot-product score of every document, one accumulator per doc."""
        if q.dim != self.dim:
            raise VocabularyMismatchError(f"query dim {q.dim} != index dim {self.dim}")
        scores = np.zeros(self.doc_count)
        for t, w in zip(q.ids.tolist(), q.weights.tolist()):
            docs, weights = self.postings(t)
            if docs.size:
                scores[docs] += w * weights
        return scores

    def retrieve(self, q: SparseVec, k: int) -> list[ScoredDoc]:
        """Top-``k`` documents by descending score, ties by ascending doc number.

        Documents scoring 0 are never returned.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.score_all(q)
        hits = np.flatnonzero(scores > 0)
        if hits.size == 0:
            return []
        order = np.lexsort((hits, -scores[hits]))[:k]
        return [ScoredDoc(self.doc_ids[i], float(scores[i])) for i in hits[order]]

    def save(self, path) -> None:
        parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, self.dim, self.doc_count, self.nnz)]
        for d in self.doc_ids:
            raw = d.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
        parts.append(self.offsets.astype("<u8").tobytes())
        parts.append(self.post_docs.astype("<u4").tobytes())
        parts.append(self.post_weights.astype("<f8").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        buf = Path(path).read_bytes()
        if len(buf) < _HEADER.size:
            raise IndexFormatError("truncated index header")
        magic, version, dim, doc_count, nnz = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise IndexFormatError("not an index file (bad magic)")
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"unsupported index version {version}, expected {FORMAT_VERSION}")
        pos = _HEADER.size
        doc_ids = []
        for _ in range(doc_count):
            if pos + 4 > len(buf):
                raise IndexFormatError("truncated document table")
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + n > len(buf):
                raise IndexFormatError("truncated document table")
            doc_ids.append(buf[pos:pos + n].decode("utf-8"))
            pos += n
        need = (dim + 1) * 8 + nnz * 4 + nnz * 8
        if len(buf) - pos != need:
            raise IndexFormatError(f"posting section has {len(buf) - pos} bytes, expected {need}")
        offsets = np.frombuffer(buf, "<u8", dim + 1, pos).astype(np.int64)
        pos += (dim + 1) * 8
        post_docs = np.frombuffer(buf, "<u4", nnz, pos).astype(np.int64)
        pos += nnz * 4
        post_weights = np.frombuffer(buf, "<f8", nnz, pos).astype(np.float64)
        if offsets[0] != 0 or offsets[-1] != nnz or np.any(np.diff(offsets) < 0):
            raise IndexFormatError("corrupt posting offsets")
        if nnz and post_docs.max() >= doc_count:
            raise IndexFormatError("posting refers to unknown document")
        return cls(dim, doc_ids, offsets, post_docs, post_weights)


def read_corpus(path, dim: int) -> list[tuple[str, SparseVec]]:
    """Read JSONL documents ``{"id": str, "vector": "<id:weight ...>"}``."""
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc_id, text = rec["id"], rec["vector"]
                if not isinstance(doc_id, str) or not isinstance(text, str):
                    raise TypeError("'id' and 'vector' must be strings")
                docs.append((doc_id, from_text(text, dim)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return docs


def write_corpus(path, docs: Iterable[tuple[str, SparseVec]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, v in docs:
            f.write(json.dumps({"id": doc_id, "vector": to_text(v)}) + "\n")
