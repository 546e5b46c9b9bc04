"""Distributional feature attribution (DFAX) with density backends, baselines and evaluation."""

from dfax.core import (
    AttributionRanking,
    AttributionVector,
    Dataset,
    LabelVector,
    StandardizationParams,
    TargetInstance,
    rank_features,
    standardize,
    unstandardize,
)
from dfax.explainer import DfaxExplainer, attribute, attribute_batch, fit_explainer

__all__ = [
    "AttributionRanking",
    "AttributionVector",
    "Dataset",
    "DfaxExplainer",
    "LabelVector",
    "StandardizationParams",
    "TargetInstance",
    "attribute",
    "attribute_batch",
    "fit_explainer",
    "rank_features",
    "standardize",
    "unstandardize",
]
