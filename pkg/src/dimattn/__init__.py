"""Diminishing attention: submodular coverage for encoder-decoder attention."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    LOG,
    SQRT,
    ConcaveTransform,
    CoverageTracker,
    DiminishConfig,
    DomainError,
    crossover_point,
    diminishing_attention,
    dynamic_diminishing_attention,
    effective_coverage,
    eval_transform,
    parse_diminish,
    parse_transform,
    submodular_coverage,
    transform_derivative,
)

__all__ = [
    "LOG",
    "SQRT",
    "ConcaveTransform",
    "CoverageTracker",
    "DiminishConfig",
    "DomainError",
    "crossover_point",
    "diminishing_attention",
    "dynamic_diminishing_attention",
    "effective_coverage",
    "eval_transform",
    "parse_diminish",
    "parse_transform",
    "submodular_coverage",
    "transform_derivative",
]
