"""Data models for CCN components."""

from .records import (
    BehaviorSequence,
    Exposure,
    ImpressionPage,
    ItemFeatures,
    ScoringRequest,
    TrainingSample,
    UserProfile,
    expand_page,
    expand_pages,
)
from .variant import ModelVariant

__all__ = [
    "ItemFeatures",
    "Exposure",
    "UserProfile",
    "BehaviorSequence",
    "ImpressionPage",
    "TrainingSample",
    "ScoringRequest",
    "expand_page",
    "expand_pages",
    "ModelVariant",
]
