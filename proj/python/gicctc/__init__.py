"""Gated interlayer collaboration for CTC sequence recognition."""

from ._core import (
    BLANK,
    LM_END,
    ConfigError,
    DataError,
    Model,
    NgramModel,
    NumericError,
    OovError,
    ShapeError,
    cer,
    ctc_brute_force_prob,
    ctc_loss,
    edit_distance,
    greedy_decode,
    lm_perplexity,
    lm_train,
    prefix_beam_search,
    synth_dataset,
    tap_layer_indices,
)

__all__ = [
    "BLANK",
    "LM_END",
    "ConfigError",
    "DataError",
    "Model",
    "NgramModel",
    "NumericError",
    "OovError",
    "ShapeError",
    "cer",
    "ctc_brute_force_prob",
    "ctc_loss",
    "edit_distance",
    "greedy_decode",
    "lm_perplexity",
    "lm_train",
    "prefix_beam_search",
    "synth_dataset",
    "tap_layer_indices",
]
