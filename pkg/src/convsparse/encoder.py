"""A small trainable sparse encoder and the two-encoder training loop.

The encoder maps each token to ``embedding[token] @ projection + bias`` and
pools the resulting logits with ReLU, log saturation and max pooling. It is
deliberately tiny so every gradient can be checked by finite differences.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .context import (
    DEFAULT_MAX_TOKENS,
    AnswerScope,
    Conversation,
    Encoder,
    build_answer_inputs,
    build_query_history_input,
    flat_context_input,
    tokenize,
    truncate_input,
)
from .losses import combined_loss, mse_loss
from .sparse import SparseVec, Vocabulary, add, from_text, mean, splade_aggregate, to_text

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CSPXCKP\n"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sIII")
PARAM_NAMES = ("embedding", "projection", "bias")


@dataclass
class ToyEncoderParams:
    embedding: np.ndarray  # (|V|, d)
    projection: np.ndarray  # (d, |V|)
    bias: np.ndarray  # (|V|,)

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        self.projection = np.asarray(self.projection, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        v, d = self.embedding.shape
        if self.projection.shape != (d, v) or self.bias.shape != (v,):
            raise ValueError(
                f"inconsistent shapes: embedding {self.embedding.shape}, "
                f"projection {self.projection.shape}, bias {self.bias.shape}"
            )
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def width(self) -> int:
        return self.embedding.shape[1]

    @classmethod
    def zeros(cls, vocab_size: int, width: int) -> "ToyEncoderParams":
        return cls(np.zeros((vocab_size, width)), np.zeros((width, vocab_size)), np.zeros(vocab_size))

    @classmethod
    def random(cls, vocab_size: int, width: int, rng: np.random.Generator,
               scale: float = 1.0) -> "ToyEncoderParams":
        return cls(
            rng.normal(0, scale, (vocab_size, width)),
            rng.normal(0, scale / np.sqrt(width), (width, vocab_size)),
            rng.normal(0, 0.1 * scale, vocab_size),
        )

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ToyEncoderParams":
        return ToyEncoderParams(self.embedding.copy(), self.projection.copy(), self.bias.copy())


def _check_tokens(params: ToyEncoderParams, tokens: Sequence[int]) -> np.ndarray:
    toks = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if toks.size and (toks.min() < 0 or toks.max() >= params.vocab_size):
        raise ValueError(f"token id out of range [0, {params.vocab_size})")
    return toks


def forward(params: ToyEncoderParams, tokens: Sequence[int]) -> tuple[np.ndarray, SparseVec]:
    toks = _check_tokens(params, tokens)
    logits = params.embedding[toks] @ params.projection + params.bias
    return logits, splade_aggregate(logits)


def backward(params: ToyEncoderParams, tokens: Sequence[int], upstream) -> dict[str, np.ndarray]:
    """Parameter gradients of ``upstream . encode(tokens)``.

    Max pooling routes each dimension's gradient to its first argmax token.
    """
    toks = _check_tokens(params, tokens)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (params.vocab_size,):
        raise ValueError(f"upstream gradient must have shape ({params.vocab_size},)")
    if toks.size == 0:
        raise ValueError("empty input")
    hidden = params.embedding[toks]
    logits = hidden @ params.projection + params.bias
    winner = np.argmax(logits, axis=0)
    top = logits[winner, np.arange(params.vocab_size)]
    # d/dx log(1 + relu(x)) = 1 / (1 + x) for x > 0, else 0
    local = np.where(top > 0, upstream / (1.0 + np.maximum(top, 0.0)), 0.0)
    g_logits = np.zeros_like(logits)
    g_logits[winner, np.arange(params.vocab_size)] = local

    g_embedding = np.zeros_like(params.embedding)
    np.add.at(g_embedding, toks, g_logits @ params.projection.T)
    return {
        "embedding": g_embedding,
        "projection": hidden.T @ g_logits,
        "bias": g_logits.sum(axis=0),
    }


class ToyEncoder:
    """:class:`Encoder` over text; safe to call concurrently while params are not updated."""

    concurrent_safe = True

    def __init__(self, params: ToyEncoderParams, vocab: Vocabulary, max_tokens: int = DEFAULT_MAX_TOKENS):
        if params.vocab_size != vocab.size:
            raise ValueError(f"params cover {params.vocab_size} terms, vocabulary has {vocab.size}")
        self.params = params
        self.vocab = vocab
        self.max_tokens = max_tokens

    def tokens(self, text: str) -> list[int]:
        return tokenize(truncate_input(text, self.max_tokens), self.vocab)

    def encode(self, text: str) -> SparseVec:
        toks = self.tokens(text)
        if not toks:
            return SparseVec.empty(self.vocab.size)
        return forward(self.params, toks)[1]


# -- precomputed vectors ---------------------------------------------------------

def text_key(text: str) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


class PrecomputedEncoder:
    """Frozen lookup encoder backed by a ``hash<TAB>sparse-vector`` file."""

    concurrent_safe = True

    def __init__(self, table: dict[str, SparseVec], dim: int):
        self.table = dict(table)
        self.dim = dim

    def encode(self, text: str) -> SparseVec:
        try:
            return self.table[text_key(text)]
        except KeyError:
            raise KeyError(f"no precomputed vector for input {text!r}") from None


def write_precomputed(path, vectors: dict[str, SparseVec]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for text, v in vectors.items():
            f.write(f"{text_key(text)}\t{to_text(v)}\n")


def precomputed_encoder(path, dim: int) -> PrecomputedEncoder:
    table = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, vec = line.partition("\t")
            try:
                table[key] = from_text(vec, dim)
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    return PrecomputedEncoder(table, dim)


# -- checkpoints ---------------------------------------------------------------------

def save_params(path, params: ToyEncoderParams) -> None:
    """Write ``magic, version, |V|, d`` then embedding, projection, bias as f64."""
    v, d = params.embedding.shape
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, v, d))
        for name in PARAM_NAMES:
            f.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_params(path) -> ToyEncoderParams:
    buf = Path(path).read_bytes()
    if len(buf) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, v, d = _CKPT_HEADER.unpack_from(buf, 0)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if len(buf) != _CKPT_HEADER.size + 8 * (2 * v * d + v):
        raise ValueError(f"{path}: truncated checkpoint")
    flat = np.frombuffer(buf, "<f8", offset=_CKPT_HEADER.size).astype(np.float64)
    return ToyEncoderParams(
        flat[: v * d].reshape(v, d),
        flat[v * d: 2 * v * d].reshape(d, v),
        flat[2 * v * d:],
    )


# -- optimization ----------------------------------------------------------------------

class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr_queries: float = 2e-5
    lr_answers: float = 3e-5
    epochs: int = 1
    seed: int = 0
    scope: AnswerScope = AnswerScope.LAST
    variant: str = "dual"  # "dual" or "flat"
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lr_queries <= 0 or self.lr_answers <= 0:
            raise ValueError("learning rates must be positive")
        if self.variant not in ("dual", "flat"):
            raise ValueError(f"unknown training variant {self.variant!r}")
        self.scope = AnswerScope(self.scope)


@dataclass
class TrainResult:
    queries: ToyEncoderParams
    answers: ToyEncoderParams
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    initial_loss: float | None = None
    final_loss: float | None = None


def _zero_grads(params: ToyEncoderParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.as_dict().items()}


def _accumulate(acc: dict[str, np.ndarray], grads: dict[str, np.ndarray], weight: float = 1.0) -> None:
    for k, g in grads.items():
        acc[k] += weight * g


def turn_loss_and_grads(queries: ToyEncoderParams, answers: ToyEncoderParams, conv: Conversation,
                        n: int, gold: SparseVec, vocab: Vocabulary, scope: AnswerScope,
                        max_tokens: int = DEFAULT_MAX_TOKENS):
    """Combined loss of one turn and its gradients for both encoders.

    Returns ``(loss_value, grads_queries, grads_answers)``.
    """
    q_toks = tokenize(truncate_input(build_query_history_input(conv, n), max_tokens), vocab)
    a_toks = [tokenize(truncate_input(t, max_tokens), vocab)
              for t in build_answer_inputs(conv, n, scope)]
    history = forward(queries, q_toks)[1] if q_toks else SparseVec.empty(vocab.size)
    answer_vecs = [forward(answers, t)[1] if t else SparseVec.empty(vocab.size) for t in a_toks]
    answer_rep = mean(answer_vecs)
    loss = combined_loss(add(history, answer_rep), answer_rep, gold)

    g_q = backward(queries, q_toks, loss.grad_queries) if q_toks else _zero_grads(queries)
    g_a = _zero_grads(answers)
    for toks in a_toks:
        if toks:
            _accumulate(g_a, backward(answers, toks, loss.grad_answers), 1.0 / len(a_toks))
    return loss.value, g_q, g_a


def flat_turn_loss_and_grads(params: ToyEncoderParams, conv: Conversation, n: int, gold: SparseVec,
                             vocab: Vocabulary, max_tokens: int = DEFAULT_MAX_TOKENS):
    toks = tokenize(truncate_input(flat_context_input(conv, n), max_tokens), vocab)
    pred = forward(params, toks)[1] if toks else SparseVec.empty(vocab.size)
    loss = mse_loss(pred, gold)
    grads = backward(params, toks, loss.grad_queries) if toks else _zero_grads(params)
    return loss.value, grads


def training_turns(conversations: Sequence[Conversation]) -> list[tuple[Conversation, int]]:
    turns = []
    for conv in conversations:
        for n, t in enumerate(conv.turns, 1):
            if t.gold is None:
                raise ValueError(f"conversation {conv.id!r}: turn {n} has no gold query")
            turns.append((conv, n))
    return turns


def train(conversations: Sequence[Conversation], cfg: TrainConfig, init: ToyEncoderParams,
          reference: Encoder, vocab: Vocabulary) -> TrainResult:
    """Fit both encoders (initialized from ``init``) to the reference encoding of gold queries.

    The ``flat`` variant trains only ``queries`` on the single flat context
    input with plain MSE; ``answers`` is returned untouched.
    """
    turns = training_turns(conversations)
    queries, answers = init.copy(), init.copy()
    result = TrainResult(queries, answers)
    if not turns:
        return result

    golds = {(c.id, n): reference.encode(c.turn(n).gold) for c, n in turns}

    def turn_eval(conv, n):
        gold = golds[(conv.id, n)]
        if cfg.variant == "flat":
            value, g_q = flat_turn_loss_and_grads(queries, conv, n, gold, vocab, cfg.max_tokens)
            return value, g_q, None
        return turn_loss_and_grads(queries, answers, conv, n, gold, vocab, cfg.scope, cfg.max_tokens)

    def mean_loss() -> float:
        return float(np.mean([turn_eval(c, n)[0] for c, n in turns]))

    result.initial_loss = mean_loss()
    opt_q, opt_a = Adam(cfg.lr_queries), Adam(cfg.lr_answers)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(turns))
        epoch_total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc_q, acc_a = _zero_grads(queries), _zero_grads(answers)
            batch_total = 0.0
            for i in batch:
                value, g_q, g_a = turn_eval(*turns[i])
                batch_total += value
                _accumulate(acc_q, g_q, 1.0 / len(batch))
                if g_a is not None:
                    _accumulate(acc_a, g_a, 1.0 / len(batch))
            opt_q.step(queries.as_dict(), acc_q)
            if cfg.variant == "dual":
                opt_a.step(answers.as_dict(), acc_a)
            result.step_losses.append(batch_total / len(batch))
            epoch_total += batch_total
        result.epoch_losses.append(epoch_total / len(turns))
        log.info("epoch %d: mean loss %.6g", epoch + 1, result.epoch_losses[-1])
    result.final_loss = mean_loss()
    return result
