"""Representation-matching losses with analytic gradients.

Vector losses return a :class:`LossValue` whose two gradients follow the two
paths into a composed query ``pred = history + answers``:

* ``grad_queries`` -- derivative w.r.t. the query-history encoding,
* ``grad_answers`` -- derivative w.r.t. the answer-context encoding.

A loss on ``pred`` reaches both paths identically; the asymmetric loss only
touches the answer path. Adding two ``LossValue`` objects therefore applies
the chain rule through the sum. Gold vectors and teacher scores are constants.

Every vector argument may be a :class:`SparseVec` or a dense 1-D array.
Reductions are means over all vocabulary dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .sparse import SparseVec, VocabularyMismatchError

VecLike = Union[SparseVec, np.ndarray]


@dataclass(frozen=True)
class LossValue:
    value: float
    grad_queries: np.ndarray
    grad_answers: np.ndarray

    def __add__(self, other: "LossValue") -> "LossValue":
        return LossValue(
            self.value + other.value,
            self.grad_queries + other.grad_queries,
            self.grad_answers + other.grad_answers,
        )


@dataclass(frozen=True)
class ScoreQuadruple:
    s_plus_1: float
    s_plus_2: float
    s_gold_1: float
    s_gold_2: float


@dataclass(frozen=True)
class ScoreLoss:
    """Margin loss value with gradients w.r.t. the two student scores."""

    value: float
    grad_s1: float
    grad_s2: float


def _dense(x: VecLike) -> np.ndarray:
    if isinstance(x, SparseVec):
        return x.to_dense()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("dense vectors must be 1-D")
    return arr


def _pair(a: VecLike, b: VecLike) -> tuple[np.ndarray, np.ndarray]:
    a, b = _dense(a), _dense(b)
    if a.shape != b.shape:
        raise VocabularyMismatchError(f"vocabulary sizes differ: {a.size} vs {b.size}")
    return a, b


def mse_loss(pred: VecLike, gold: VecLike) -> LossValue:
    p, g = _pair(pred, gold)
    diff = p - g
    grad = 2.0 * diff / p.size
    return LossValue(float(np.mean(diff * diff)), grad, grad.copy())


def asym_loss(answers_rep: VecLike, gold: VecLike) -> LossValue:
    """One-sided squared error: only under-shooting the gold weight costs."""
    a, g = _pair(answers_rep, gold)
    gap = np.maximum(g - a, 0.0)
    return LossValue(float(np.mean(gap * gap)), np.zeros_like(a), -2.0 * gap / a.size)


def combined_loss(pred: VecLike, answers_rep: VecLike, gold: VecLike) -> LossValue:
    """MSE on the composed query plus the asymmetric term on the answer part."""
    p, g = _pair(pred, gold)
    a, _ = _pair(answers_rep, g)
    return mse_loss(p, g) + asym_loss(a, g)


def cosine_loss(pred: VecLike, gold: VecLike) -> LossValue:
    p, g = _pair(pred, gold)
    np_, ng = np.linalg.norm(p), np.linalg.norm(g)
    if np_ == 0 or ng == 0:
        raise ValueError("cosine loss is undefined for a zero-norm vector")
    cos = float(p @ g) / (np_ * ng)
    grad = -(g / (np_ * ng) - cos * p / (np_ * np_))
    # rounding can push cos a hair above 1
    return LossValue(max(0.0, 1.0 - cos), grad, grad.copy())


def t5_score(p_true: float, p_false: float) -> float:
    """Normalized relevance: p(true) / (p(true) + p(false))."""
    if p_true < 0 or p_false < 0:
        raise ValueError("probabilities must be non-negative")
    total = p_true + p_false
    if total <= 0:
        raise ValueError("p_true and p_false are both zero")
    return p_true / total


def margin_mse_loss(q: ScoreQuadruple) -> ScoreLoss:
    vals = (q.s_plus_1, q.s_plus_2, q.s_gold_1, q.s_gold_2)
    if not all(np.isfinite(vals)):
        raise ValueError("scores must be finite")
    err = (q.s_plus_1 - q.s_plus_2) - (q.s_gold_1 - q.s_gold_2)
    return ScoreLoss(err * err, 2.0 * err, -2.0 * err)
