# SPDX-License-Identifier: Apache-2.0
"""Neighbor-decoding text recognizer with CTC and parallel-attention baselines."""

from ._lister import (
    Corpus,
    GlyphAlphabet,
    ListerError,
    Prediction,
    Recognizer,
    Sample,
    alpha_schedule,
    build_corpus,
    ctc_collapse,
    ctc_loss,
    entropy_loss,
    eos_loss,
    evaluate,
    load_corpus,
    masked_softmax,
    render_sample,
    rollout,
    sharpen,
    train,
)

__all__ = [
    "Corpus",
    "GlyphAlphabet",
    "ListerError",
    "Prediction",
    "Recognizer",
    "Sample",
    "alpha_schedule",
    "build_corpus",
    "ctc_collapse",
    "ctc_loss",
    "entropy_loss",
    "eos_loss",
    "evaluate",
    "load_corpus",
    "masked_softmax",
    "render_sample",
    "rollout",
    "sharpen",
    "train",
]
