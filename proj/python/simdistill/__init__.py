"""Uncertainty-guided distillation of recommender user simulators."""

from ._core import (
    Error,
    build_exposure_list,
    decompose,
    entropy,
    epistemic_gap,
    floor_softmax,
    parse_decision,
    run_pipeline,
)

STAGES = ("ingest", "scenes", "generate", "score", "distill", "emit", "eval")

__all__ = [
    "Error",
    "STAGES",
    "build_exposure_list",
    "decompose",
    "entropy",
    "epistemic_gap",
    "floor_softmax",
    "parse_decision",
    "run_pipeline",
]
