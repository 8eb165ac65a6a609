"""Hand-built pages for tests."""

from typing import List, Sequence

import numpy as np

from src.ccn.models.records import (
    BehaviorSequence,
    Exposure,
    ImpressionPage,
    ItemFeatures,
    UserProfile,
)

L_SHORT = 3
L_LONG = 5


def make_page(
    page_id: int,
    labels: Sequence[int],
    user_id: int = 1,
    trigger: ItemFeatures = ItemFeatures(900, 1, 1),
    short: Sequence[ItemFeatures] = (),
    long: Sequence[ItemFeatures] = (),
    first_item: int = 10,
) -> ImpressionPage:
    """Page whose exposures are items first_item, first_item + 1, ..."""
    exposures = tuple(
        Exposure(ItemFeatures(first_item + i, i % 3, i % 2), int(y)) for i, y in enumerate(labels)
    )
    return ImpressionPage(
        page_id=page_id,
        user=UserProfile(user_id, (user_id % 4, user_id % 3)),
        trigger=trigger,
        exposures=exposures,
        sequences=BehaviorSequence(short=tuple(short), long=tuple(long)),
    )


def random_label_pages(n_pages: int, exposures: int, seed: int) -> List[ImpressionPage]:
    """Pages whose labels are fair coin flips, independent of every feature."""
    rng = np.random.default_rng(seed)
    pages = []
    for page_id in range(n_pages):
        items = rng.choice(200, size=exposures, replace=False)
        pages.append(ImpressionPage(
            page_id=page_id,
            user=UserProfile(int(rng.integers(50)), (int(rng.integers(4)), int(rng.integers(3)))),
            trigger=ItemFeatures(500 + int(rng.integers(50)), int(rng.integers(5)), 0),
            exposures=tuple(
                Exposure(ItemFeatures(int(i), int(i) % 5, int(i) % 7), int(rng.integers(2)))
                for i in items
            ),
            sequences=BehaviorSequence(
                short=tuple(ItemFeatures(int(i), int(i) % 5, 0) for i in rng.choice(200, size=2)),
                long=tuple(ItemFeatures(int(i), int(i) % 5, 0) for i in rng.choice(200, size=4)),
            ),
        ))
    return pages

