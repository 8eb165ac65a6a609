"""
Synthetic impression pages with a known click model.

Users and items live in a k-dimensional latent space. Items cluster around
per-category centroids. On every page the user arrives through a trigger
drawn from their high-affinity items, and each exposure is clicked with

    p = sigmoid(scale * (alpha <u, v> + (1 - alpha) <v_trigger, v>)
                + click_bias + user_bias + noise * N(0, 1))

alpha = 1 gives purely user-driven clicks, alpha = 0 purely trigger-driven
ones. The shared user bias and trigger term make same-page labels correlated.

Behaviour sequences are the user's most recent clicks, most recent first,
seeded with a warm-up history of high-affinity items.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config import WorldSpec
from ..errors import ConfigError
from ..models.records import (
    BehaviorSequence,
    Exposure,
    ImpressionPage,
    ItemFeatures,
    UserProfile,
)

logger = logging.getLogger(__name__)

# share of an item latent explained by its category centroid
CENTROID_SHARE = 0.7


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _quantile_buckets(values: np.ndarray, buckets: int) -> np.ndarray:
    ranks = np.argsort(np.argsort(values, kind="stable"), kind="stable")
    return (ranks * buckets) // len(values)


def _user_stream(seed: int, user_id: int) -> np.random.Generator:
    """Independent RNG per user so any partition of users gives the same pages."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(user_id,)))


# ==============================================================================
# WORLD
# ==============================================================================

@dataclass
class SyntheticWorld:
    """Latent factors and catalogue of one synthetic world."""

    spec: WorldSpec
    user_latent: np.ndarray
    user_bias: np.ndarray
    user_profiles: np.ndarray
    item_latent: np.ndarray
    item_category: np.ndarray
    item_seller: np.ndarray

    @classmethod
    def build(cls, spec: WorldSpec) -> "SyntheticWorld":
        """Draw all latents from a single stream seeded by spec.seed."""
        rng = np.random.default_rng(spec.seed)
        k = spec.latent_dim
        std = 1.0 / np.sqrt(k)

        user_latent = rng.normal(0.0, std, size=(spec.num_users, k))
        user_bias = rng.normal(0.0, 1.0, size=spec.num_users) * spec.user_bias_std
        centroids = rng.normal(0.0, std, size=(spec.num_categories, k))
        item_category = rng.integers(0, spec.num_categories, size=spec.num_items)
        item_seller = rng.integers(0, spec.num_sellers, size=spec.num_items)
        noise = rng.normal(0.0, std, size=(spec.num_items, k))
        item_latent = np.sqrt(CENTROID_SHARE) * centroids[item_category] \
            + np.sqrt(1.0 - CENTROID_SHARE) * noise

        # profile fields are coarse views of the user latent
        profiles = np.zeros((spec.num_users, len(spec.profile_buckets)), dtype=np.int64)
        for j, buckets in enumerate(spec.profile_buckets):
            profiles[:, j] = _quantile_buckets(user_latent[:, j % k], buckets)

        return cls(
            spec=spec,
            user_latent=user_latent,
            user_bias=user_bias,
            user_profiles=profiles,
            item_latent=item_latent,
            item_category=item_category,
            item_seller=item_seller,
        )

    def item(self, item_id: int) -> ItemFeatures:
        return ItemFeatures(
            int(item_id), int(self.item_category[item_id]), int(self.item_seller[item_id])
        )

    def user(self, user_id: int) -> UserProfile:
        return UserProfile(int(user_id), tuple(int(f) for f in self.user_profiles[user_id]))

    def affinity(self, user_id: int) -> np.ndarray:
        """<u, v> for every item."""
        return self.item_latent @ self.user_latent[user_id]

    def click_logits(self, user_id: int, trigger_id: int, item_ids: Sequence[int]) -> np.ndarray:
        """Noise-free click logits of items shown after trigger_id."""
        spec = self.spec
        items = self.item_latent[np.asarray(item_ids, dtype=np.int64)]
        user_term = items @ self.user_latent[user_id]
        trigger_term = items @ self.item_latent[trigger_id]
        mixed = spec.alpha * user_term + (1.0 - spec.alpha) * trigger_term
        return spec.logit_scale * mixed + spec.click_bias + self.user_bias[user_id]

    def click_probabilities(
        self,
        user: UserProfile,
        trigger: ItemFeatures,
        items: Sequence[ItemFeatures],
    ) -> np.ndarray:
        """Ground-truth click probabilities without label noise."""
        logits = self.click_logits(user.user_id, trigger.item_id, [i.item_id for i in items])
        return _sigmoid(logits)


@dataclass
class GroundTruth:
    """Hidden side of a generated dataset."""

    world: SyntheticWorld
    # per page, the probabilities labels were drawn from (noise included)
    probabilities: List[np.ndarray]

    @property
    def mean_probability(self) -> float:
        if not self.probabilities:
            return 0.0
        return float(np.concatenate(self.probabilities).mean())


# ==============================================================================
# PAGE GENERATION
# ==============================================================================

def _draw_exposures(
    world: SyntheticWorld, rng: np.random.Generator, trigger_id: int
) -> np.ndarray:
    """Distinct exposed item ids, trigger excluded, mixing same-category items."""
    spec = world.spec
    count = int(rng.integers(spec.min_exposures, spec.max_exposures + 1))
    same = np.flatnonzero(world.item_category == world.item_category[trigger_id])
    same = same[same != trigger_id]
    n_same = min(int(rng.binomial(count, spec.same_category_share)), same.size)
    picked = rng.choice(same, size=n_same, replace=False) if n_same else np.zeros(0, dtype=np.int64)

    rest = np.setdiff1d(np.arange(spec.num_items), np.append(picked, trigger_id))
    others = rng.choice(rest, size=count - n_same, replace=False)
    return rng.permutation(np.concatenate([picked, others]).astype(np.int64))


def _generate_user(
    world: SyntheticWorld, user_id: int, l_short: int, l_long: int
) -> Tuple[List[ImpressionPage], List[np.ndarray]]:
    spec = world.spec
    rng = _user_stream(spec.seed, user_id)
    user = world.user(user_id)
    ranked = np.argsort(-world.affinity(user_id), kind="stable")
    pool = ranked[:spec.trigger_pool]

    warmup = rng.permutation(ranked[:spec.warmup_history])
    history: Tuple[ItemFeatures, ...] = tuple(world.item(i) for i in warmup)
    cap = l_short + l_long

    pages, probabilities = [], []
    for j in range(spec.pages_per_user):
        trigger_id = int(rng.choice(pool))
        item_ids = _draw_exposures(world, rng, trigger_id)
        logits = world.click_logits(user_id, trigger_id, item_ids)
        logits = logits + spec.noise * rng.normal(size=item_ids.size)
        probs = _sigmoid(logits)
        labels = (rng.random(item_ids.size) < probs).astype(int)

        trigger = world.item(trigger_id)
        exposures = tuple(Exposure(world.item(i), int(y)) for i, y in zip(item_ids, labels))
        pages.append(ImpressionPage(
            page_id=user_id * spec.pages_per_user + j,
            user=user,
            trigger=trigger,
            exposures=exposures,
            sequences=BehaviorSequence(short=history[:l_short], long=history[l_short:cap]),
        ))
        probabilities.append(probs)

        # the trigger click precedes the in-page clicks
        clicked = tuple(e.item for e in reversed(exposures) if e.click_label)
        history = (clicked + (trigger,) + history)[:cap]
    return pages, probabilities


def _generate_users(
    world: SyntheticWorld, user_ids: Sequence[int], l_short: int, l_long: int
) -> Tuple[List[ImpressionPage], List[np.ndarray]]:
    pages, probabilities = [], []
    for user_id in user_ids:
        p, q = _generate_user(world, int(user_id), l_short, l_long)
        pages.extend(p)
        probabilities.extend(q)
    return pages, probabilities


def generate_dataset(
    spec: WorldSpec,
    l_short: int = 20,
    l_long: int = 100,
    workers: Optional[int] = None,
) -> Tuple[List[ImpressionPage], GroundTruth]:
    """Generate every user's pages, in user order.

    Args:
        spec: World description (seed included)
        l_short: Short sequence length stored on each page
        l_long: Long sequence length stored on each page
        workers: Process count (defaults to spec.workers); output does not
            depend on it

    Returns:
        Tuple of (pages, ground truth)

    Raises:
        ConfigError: If the world spec cannot produce valid pages
    """
    if spec.max_exposures >= spec.num_items:
        raise ConfigError(
            f"world.max_exposures ({spec.max_exposures}) must be below world.num_items "
            f"({spec.num_items}) so the trigger can be excluded"
        )
    workers = spec.workers if workers is None else workers
    world = SyntheticWorld.build(spec)
    user_ids = np.arange(spec.num_users)

    if workers <= 1 or spec.num_users < 2:
        pages, probabilities = _generate_users(world, user_ids, l_short, l_long)
    else:
        chunks = [c for c in np.array_split(user_ids, workers) if c.size]
        pages, probabilities = [], []
        with ProcessPoolExecutor(max_workers=len(chunks)) as executor:
            futures = [
                executor.submit(_generate_users, world, chunk, l_short, l_long)
                for chunk in chunks
            ]
            # concatenated in submission (user) order, not completion order
            for future in futures:
                p, q = future.result()
                pages.extend(p)
                probabilities.extend(q)

    exposures = sum(len(p.exposures) for p in pages)
    logger.info(
        f"Generated {len(pages)} pages / {exposures} exposures "
        f"(users={spec.num_users}, alpha={spec.alpha}, seed={spec.seed}, workers={workers})"
    )
    return pages, GroundTruth(world=world, probabilities=probabilities)


# ==============================================================================
# DIAGNOSTICS
# ==============================================================================

@dataclass
class LabelCorrelation:
    """Same-page label correlation against a shuffled-label baseline."""

    within_page: float
    shuffled: float
    pairs: int

    @property
    def excess(self) -> float:
        return self.within_page - self.shuffled


def _pair_correlation(sizes: np.ndarray, clicks: np.ndarray) -> float:
    """Correlation of the two labels of a random same-page pair."""
    pairs = float((sizes * (sizes - 1)).sum())
    rate = clicks.sum() / sizes.sum()
    variance = rate * (1.0 - rate)
    if pairs == 0 or variance == 0:
        return 0.0
    both = float((clicks * (clicks - 1)).sum()) / pairs
    return (both - rate * rate) / variance


def same_page_label_correlation(pages: Sequence[ImpressionPage], seed: int = 0) -> LabelCorrelation:
    """Compare same-page label correlation with labels shuffled across pages."""
    sizes = np.array([len(p.exposures) for p in pages], dtype=np.int64)
    labels = np.array([y for p in pages for y in p.labels], dtype=np.int64)
    ends = np.cumsum(sizes)
    starts = ends - sizes

    def clicks_per_page(values: np.ndarray) -> np.ndarray:
        totals = np.concatenate([[0], np.cumsum(values)])
        return totals[ends] - totals[starts]

    shuffled = np.random.default_rng(seed).permutation(labels)
    result = LabelCorrelation(
        within_page=_pair_correlation(sizes, clicks_per_page(labels)),
        shuffled=_pair_correlation(sizes, clicks_per_page(shuffled)),
        pairs=int((sizes * (sizes - 1)).sum() // 2),
    )
    logger.debug(
        f"Same-page label correlation {result.within_page:.4f} vs shuffled {result.shuffled:.4f}"
    )
    return result
