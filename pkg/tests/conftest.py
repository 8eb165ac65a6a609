"""
Shared fixtures: a tiny schema, model settings and a small synthetic world.
"""

import pytest

from src.ccn.config import HyperParams, NetworkConfig, TrainConfig, WorldSpec
from src.ccn.data.dataset_io import split_pages
from src.ccn.data.synth import generate_dataset
from src.ccn.features.embedding import FeatureSchema
from tests.factories import L_LONG, L_SHORT


# ==============================================================================
# Fixtures
# ==============================================================================

@pytest.fixture
def schema():
    return FeatureSchema(
        item_buckets=64,
        category_buckets=5,
        seller_buckets=7,
        user_buckets=16,
        profile_buckets=(4, 3),
        embedding_dim=4,
        l_short=L_SHORT,
        l_long=L_LONG,
    )


@pytest.fixture
def hyper():
    return HyperParams(
        embedding_dim=4,
        heads=2,
        l_short=L_SHORT,
        l_long=L_LONG,
        batch_size=16,
        learning_rate=0.05,
        lam=0.5,
    )


@pytest.fixture
def network():
    return NetworkConfig(prediction_hidden=[6], collaborative_hidden=[3])


@pytest.fixture
def train_config():
    return TrainConfig(epochs=2, seed=3)


@pytest.fixture
def tiny_world():
    return WorldSpec(
        num_users=20,
        num_items=60,
        num_categories=5,
        num_sellers=7,
        pages_per_user=4,
        min_exposures=4,
        max_exposures=6,
        trigger_pool=10,
        warmup_history=4,
        profile_buckets=[4, 3],
        seed=11,
    )


@pytest.fixture
def tiny_pages(tiny_world):
    pages, _ = generate_dataset(tiny_world, l_short=L_SHORT, l_long=L_LONG)
    return pages


@pytest.fixture
def tiny_split(tiny_pages):
    return split_pages(tiny_pages, 0.25)
