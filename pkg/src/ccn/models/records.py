"""Data model of impression logs: items, users, pages and training samples.

Records are immutable. ImpressionPage validates its own invariants on
construction so every page in memory is a valid page.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

from ..errors import PageValidationError


class ItemFeatures(NamedTuple):
    """Streamlined item features: item, category and seller ids."""
    item_id: int
    category_id: int
    seller_id: int


class Exposure(NamedTuple):
    """One exposed item on a page with its click label."""
    item: ItemFeatures
    click_label: int


@dataclass(frozen=True)
class UserProfile:
    """User id plus a fixed-length list of categorical profile fields."""
    user_id: int
    profile_fields: Tuple[int, ...] = ()


@dataclass(frozen=True)
class BehaviorSequence:
    """Short- and long-term behaviour, most recent first."""
    short: Tuple[ItemFeatures, ...] = ()
    long: Tuple[ItemFeatures, ...] = ()

    def capped(self, l_short: int, l_long: int) -> "BehaviorSequence":
        """Keep the most recent l_short / l_long entries."""
        return BehaviorSequence(short=self.short[:l_short], long=self.long[:l_long])


def _check_item(item: ItemFeatures, where: str) -> None:
    if min(item) < 0:
        raise PageValidationError(f"{where}: ids must be nonnegative, got {tuple(item)}")


@dataclass(frozen=True)
class ImpressionPage:
    """One in-page exposure: user, trigger, ordered exposures, behaviour."""
    page_id: int
    user: UserProfile
    trigger: ItemFeatures
    exposures: Tuple[Exposure, ...]
    sequences: BehaviorSequence = field(default_factory=BehaviorSequence)

    def __post_init__(self):
        if self.page_id < 0:
            raise PageValidationError(f"page_id must be nonnegative, got {self.page_id}")
        if self.user.user_id < 0 or any(f < 0 for f in self.user.profile_fields):
            raise PageValidationError(f"page {self.page_id}: user ids must be nonnegative")
        if not self.exposures:
            raise PageValidationError(f"page {self.page_id}: at least one exposure required")
        _check_item(self.trigger, f"page {self.page_id} trigger")
        for position, (item, label) in enumerate(self.exposures):
            _check_item(item, f"page {self.page_id} exposure {position}")
            if label not in (0, 1):
                raise PageValidationError(
                    f"page {self.page_id} exposure {position}: click_label must be 0 or 1"
                )
            if item.item_id == self.trigger.item_id:
                raise PageValidationError(
                    f"page {self.page_id}: trigger item {item.item_id} must be excluded "
                    f"from exposures"
                )
        for item in self.sequences.short + self.sequences.long:
            _check_item(item, f"page {self.page_id} sequence")

    @property
    def labels(self) -> List[int]:
        return [e.click_label for e in self.exposures]

    @property
    def clicked_count(self) -> int:
        return sum(self.labels)

    @property
    def unclicked_count(self) -> int:
        return len(self.exposures) - self.clicked_count


@dataclass(frozen=True)
class TrainingSample:
    """A page with one exposure designated as the target; the rest is context."""
    page: ImpressionPage
    target_index: int

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.page.exposures):
            raise PageValidationError(
                f"page {self.page.page_id}: target_index {self.target_index} out of range"
            )

    @property
    def target(self) -> ItemFeatures:
        return self.page.exposures[self.target_index].item

    @property
    def label(self) -> int:
        return self.page.exposures[self.target_index].click_label

    @property
    def context(self) -> List[Exposure]:
        return [e for i, e in enumerate(self.page.exposures) if i != self.target_index]

    @property
    def user(self) -> UserProfile:
        return self.page.user

    @property
    def trigger(self) -> ItemFeatures:
        return self.page.trigger

    @property
    def sequences(self) -> BehaviorSequence:
        return self.page.sequences


def expand_page(page: ImpressionPage) -> List[TrainingSample]:
    """One sample per exposure; each exposure takes a turn as the target."""
    return [TrainingSample(page=page, target_index=i) for i in range(len(page.exposures))]


def expand_pages(pages: List[ImpressionPage]) -> List[TrainingSample]:
    return [sample for page in pages for sample in expand_page(page)]


@dataclass(frozen=True)
class ScoringRequest:
    """What inference sees: no in-page context, no label."""
    user: UserProfile
    trigger: ItemFeatures
    target: ItemFeatures
    sequences: BehaviorSequence = field(default_factory=BehaviorSequence)

    @property
    def label(self) -> int:
        return 0

    @classmethod
    def from_sample(cls, sample: TrainingSample) -> "ScoringRequest":
        return cls(user=sample.user, trigger=sample.trigger, target=sample.target,
                   sequences=sample.sequences)
