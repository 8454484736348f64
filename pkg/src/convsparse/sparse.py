"""Sparse term-weight vectors over a fixed vocabulary.

Vectors are stored as sorted coordinate lists (term ids ascending, strictly
positive weights). Every other module goes through the helpers here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

CLS = "[CLS]"
SEP = "[SEP]"
MARKERS = (CLS, SEP)

# weights below this are treated as structural zeros and dropped
WEIGHT_TOL = 1e-12


class VocabularyMismatchError(ValueError):
    """Raised when two operands live on vocabularies of different sizes."""


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("vocabulary must contain at least one term")
        index = {t: i for i, t in enumerate(terms)}
        if len(index) != len(terms):
            raise ValueError("vocabulary terms must be unique")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_index", index)

    @classmethod
    def with_markers(cls, words: Iterable[str]) -> "Vocabulary":
        """Vocabulary with ``[CLS]``/``[SEP]`` reserved at ids 0 and 1.

        Words are lowercased; duplicates keep their first position.
        """
        seen = dict.fromkeys(MARKERS)
        for w in words:
            w = w.lower()
            if w not in seen:
                seen[w] = None
        return cls(tuple(seen))

    @property
    def size(self) -> int:
        return len(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def id_of(self, term: str) -> int | None:
        return self._index.get(term)

    def term(self, term_id: int) -> str:
        return self.terms[term_id]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for t in self.terms:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls(tuple(line.rstrip("\n") for line in f if line.strip()))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SparseVec:
    """Non-negative weights over ``dim`` vocabulary entries.

    Only positive weights are stored; ``ids`` is strictly increasing.
    Instances are immutable (the backing arrays are read-only).
    """

    dim: int
    ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if ids.shape != weights.shape:
            raise ValueError("ids and weights differ in length")
        if ids.size:
            if np.any(np.diff(ids) <= 0):
                raise ValueError("term ids must be strictly increasing")
            if ids[0] < 0 or ids[-1] >= self.dim:
                raise ValueError(f"term id out of range [0, {self.dim})")
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise ValueError("weights must be finite and > 0")
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def empty(cls, dim: int) -> "SparseVec":
        return cls(dim, np.empty(0, np.int64), np.empty(0, np.float64))

    @classmethod
    def from_dense(cls, values, tol: float = WEIGHT_TOL) -> "SparseVec":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if np.any(values < -tol):
            raise ValueError("dense input has negative entries")
        ids = np.flatnonzero(values >= tol)
        return cls(values.size, ids, values[ids])

    @classmethod
    def from_dict(cls, mapping: Mapping[int, float], dim: int) -> "SparseVec":
        items = sorted((int(k), float(v)) for k, v in mapping.items() if v >= WEIGHT_TOL)
        if not items:
            return cls.empty(dim)
        ids, weights = zip(*items)
        return cls(dim, np.array(ids), np.array(weights))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.ids] = self.weights
        return out

    def to_dict(self) -> dict[int, float]:
        return dict(zip(self.ids.tolist(), self.weights.tolist()))

    def get(self, term_id: int) -> float:
        pos = np.searchsorted(self.ids, term_id)
        if pos < self.ids.size and self.ids[pos] == term_id:
            return float(self.weights[pos])
        return 0.0

    @property
    def nnz(self) -> int:
        return int(self.ids.size)

    def __len__(self) -> int:
        return self.nnz

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVec):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def __repr__(self) -> str:
        body = ", ".join(f"{i}:{w:.4g}" for i, w in zip(self.ids[:8], self.weights[:8]))
        more = ", ..." if self.nnz > 8 else ""
        return f"SparseVec(dim={self.dim}, {{{body}{more}}})"


def check_same_dim(*vs: SparseVec) -> int:
    dims = {v.dim for v in vs}
    if len(dims) != 1:
        raise VocabularyMismatchError(f"vocabulary sizes differ: {sorted(dims)}")
    return dims.pop()


def splade_aggregate(logits) -> SparseVec:
    """ReLU, log saturation, then max pooling over token rows.

    ``logits`` is a ``(tokens, vocab)`` matrix. Natural log is used.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("empty input")
    pooled = np.log1p(np.maximum(logits, 0.0)).max(axis=0)
    return SparseVec.from_dense(pooled)


def dot(a: SparseVec, b: SparseVec) -> float:
    """Sum of products over shared term ids, accumulated in ascending id order."""
    check_same_dim(a, b)
    _, ia, ib = np.intersect1d(a.ids, b.ids, assume_unique=True, return_indices=True)
    if ia.size == 0:
        return 0.0
    # cumsum is a strictly sequential reduction; the index accumulates the same way
    return float(np.cumsum(a.weights[ia] * b.weights[ib])[-1])


def _linear_combination(vs: Sequence[SparseVec], coef: float = 1.0) -> SparseVec:
    dim = check_same_dim(*vs)
    ids = np.concatenate([v.ids for v in vs])
    if ids.size == 0:
        return SparseVec.empty(dim)
    weights = np.concatenate([v.weights for v in vs])
    uniq, inverse = np.unique(ids, return_inverse=True)
    summed = np.bincount(inverse, weights=weights, minlength=uniq.size) * coef
    keep = summed >= WEIGHT_TOL
    return SparseVec(dim, uniq[keep], summed[keep])


def add(a: SparseVec, b: SparseVec) -> SparseVec:
    return _linear_combination([a, b])


def mean(vs: Sequence[SparseVec]) -> SparseVec:
    """Componentwise mean; absent entries count as zeros."""
    if not vs:
        raise ValueError("mean of an empty list")
    if len(vs) == 1:
        return vs[0]
    return _linear_combination(list(vs), 1.0 / len(vs))


def scale(a: SparseVec, c: float) -> SparseVec:
    if not c > 0:
        raise ValueError(f"scale factor must be > 0, got {c}")
    weights = a.weights * c
    keep = weights >= WEIGHT_TOL
    return SparseVec(a.dim, a.ids[keep], weights[keep])


def to_text(v: SparseVec) -> str:
    """``id:weight`` pairs, space separated, 6 decimals."""
    return " ".join(f"{i}:{w:.6f}" for i, w in zip(v.ids.tolist(), v.weights.tolist()))


def from_text(line: str, dim: int) -> SparseVec:
    pairs = {}
    for tok in line.split():
        try:
            k, w = tok.split(":")
            term_id, weight = int(k), float(w)
        except ValueError:
            raise ValueError(f"bad sparse entry {tok!r}") from None
        if term_id in pairs:
            raise ValueError(f"duplicate term id {term_id}")
        if weight < 0:
            raise ValueError(f"negative weight in {tok!r}")
        pairs[term_id] = weight
    if any(k < 0 or k >= dim for k in pairs):
        raise ValueError(f"term id out of range [0, {dim})")
    return SparseVec.from_dict(pairs, dim)
