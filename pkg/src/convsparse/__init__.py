"""Conversational sparse retrieval: contextualized query encodings over an impact index."""

from .context import (
    AnswerScope,
    Conversation,
    EncoderSet,
    Turn,
    build_answer_inputs,
    build_query_history_input,
    compose_query,
    flat_context_input,
    gold_representation,
)
from .index import InvertedIndex, ScoredDoc
from .losses import (
    LossValue,
    ScoreQuadruple,
    asym_loss,
    combined_loss,
    cosine_loss,
    margin_mse_loss,
    mse_loss,
    t5_score,
)
from .sparse import SparseVec, Vocabulary, add, dot, mean, scale, splade_aggregate

__version__ = "0.1.0"
