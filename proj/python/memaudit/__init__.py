"""Black-box training-data extraction audits for chat models."""

from ._memaudit import (
    DataError,
    Error,
    TriggerModel,
    ValidationError,
    is_refusal,
    lcs_length,
    normalized_edit_distance,
    objective,
    prefix_budget,
    rouge_l,
    run_cli,
    score_candidate,
    score_vector_stats,
    split_text,
    tokenize,
    top_ngrams,
)

__all__ = [
    "DataError",
    "Error",
    "TriggerModel",
    "ValidationError",
    "is_refusal",
    "lcs_length",
    "normalized_edit_distance",
    "objective",
    "prefix_budget",
    "rouge_l",
    "run_cli",
    "score_candidate",
    "score_vector_stats",
    "split_text",
    "tokenize",
    "top_ngrams",
]
