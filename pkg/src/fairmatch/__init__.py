"""Exact-rational fair and stable probabilistic matching for two-sided markets."""

from .core import (
    AllocationMatrix,
    DeterministicPrefs,
    Dominance,
    ExplicitPrefs,
    GeneralMetric,
    Instance,
    MatchingDistribution,
    ProtoMetric,
    Prospect,
    StrictIFPrefs,
    as_fraction,
    dominates,
    dominates_by_hospital,
    format_fraction,
    marginals,
    prefix_prob,
    tv_distance,
)

__all__ = [
    "AllocationMatrix",
    "DeterministicPrefs",
    "Dominance",
    "ExplicitPrefs",
    "GeneralMetric",
    "Instance",
    "MatchingDistribution",
    "ProtoMetric",
    "Prospect",
    "StrictIFPrefs",
    "as_fraction",
    "dominates",
    "dominates_by_hospital",
    "format_fraction",
    "marginals",
    "prefix_prob",
    "tv_distance",
]
