"""Finite-difference check of the full training objective on random micro-batches."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from ..autodiff import finite_diff_check
from ..config import GradcheckConfig, HyperParams, NetworkConfig
from ..errors import DatasetError
from ..features.embedding import FeatureSchema, collate_samples
from ..models.records import (
    BehaviorSequence,
    Exposure,
    ImpressionPage,
    ItemFeatures,
    UserProfile,
    expand_pages,
)
from ..models.variant import ModelVariant
from ..network.collaborative import pair_label_prior
from ..network.ctr_model import CCNModel, build_training_graph

logger = logging.getLogger(__name__)

# few categories so category search finds matches in short random sequences
CATEGORIES = 3


@dataclass
class GradcheckReport:
    batches: int
    tolerance: float
    max_rel_error: float = 0.0
    worst_batch: Optional[int] = None
    worst_leaf: Optional[str] = None
    coords_checked: int = 0
    kinks_skipped: int = 0
    non_finite: bool = False

    @property
    def passed(self) -> bool:
        return not self.non_finite and self.max_rel_error < self.tolerance

    def to_text(self) -> str:
        lines = [
            f"batches: {self.batches}",
            f"max_rel_error: {self.max_rel_error:.6e}",
            f"worst_batch: {self.worst_batch if self.worst_batch is not None else '-'}",
            f"worst_leaf: {self.worst_leaf or '-'}",
            f"coords_checked: {self.coords_checked}",
            f"kinks_skipped: {self.kinks_skipped}",
            f"non_finite: {str(self.non_finite).lower()}",
            f"tolerance: {self.tolerance:g}",
            f"passed: {str(self.passed).lower()}",
        ]
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_text(), encoding="utf-8")
        except OSError as e:
            raise DatasetError(f"cannot write gradcheck report {path}: {e}")
        return path


def gradcheck_schema(config: GradcheckConfig) -> FeatureSchema:
    b = config.buckets
    return FeatureSchema(
        item_buckets=b,
        category_buckets=CATEGORIES,
        seller_buckets=b,
        user_buckets=b,
        profile_buckets=(b,),
        embedding_dim=config.embedding_dim,
        l_short=config.l_short,
        l_long=config.l_long,
    )


def _random_item(rng: np.random.Generator, item_id: int, buckets: int) -> ItemFeatures:
    return ItemFeatures(int(item_id), int(rng.integers(CATEGORIES)), int(rng.integers(buckets)))


def _random_sequence(rng: np.random.Generator, cap: int, span: int, buckets: int):
    length = int(rng.integers(0, cap + 1))
    return tuple(_random_item(rng, i, buckets) for i in rng.integers(span, size=length))


def random_pages(config: GradcheckConfig, rng: np.random.Generator) -> List[ImpressionPage]:
    """Small random pages; ids are drawn wider than the buckets to exercise hashing."""
    pages = []
    span = 4 * config.buckets
    for page_id in range(config.pages_per_batch):
        n = int(rng.integers(config.min_exposures, config.max_exposures + 1))
        ids = rng.choice(max(span, n + 1), size=n + 1, replace=False)
        pages.append(ImpressionPage(
            page_id=page_id,
            user=UserProfile(int(rng.integers(span)), (int(rng.integers(span)),)),
            trigger=_random_item(rng, ids[0], config.buckets),
            exposures=tuple(
                Exposure(_random_item(rng, i, config.buckets), int(rng.integers(2))) for i in ids[1:]
            ),
            sequences=BehaviorSequence(
                short=_random_sequence(rng, config.l_short, span, config.buckets),
                long=_random_sequence(rng, config.l_long, span, config.buckets),
            ),
        ))
    return pages


def run_gradcheck(config: GradcheckConfig, variant: ModelVariant = ModelVariant.CCN) -> GradcheckReport:
    """Central differences vs backward_grad over config.batches random micro-batches.

    Each batch gets fresh parameters and pages; the objective includes the
    contrastive terms with lambda = config.lam.
    """
    schema = gradcheck_schema(config)
    hyper = HyperParams(
        embedding_dim=config.embedding_dim,
        heads=config.heads,
        lam=config.lam,
        l_short=config.l_short,
        l_long=config.l_long,
    )
    network = NetworkConfig(
        prediction_hidden=list(config.prediction_hidden),
        collaborative_hidden=list(config.collaborative_hidden),
    )
    rng = np.random.default_rng(config.seed)
    report = GradcheckReport(batches=config.batches, tolerance=config.tolerance)

    for b in range(config.batches):
        pages = random_pages(config, rng)
        model = CCNModel.initialise(schema, hyper, network, variant, seed=config.seed * 100003 + b)
        # wider embeddings than training init so relu inputs sit away from zero
        for name in model.params:
            if name.startswith("emb."):
                model.params[name] = rng.normal(0.0, 0.5, size=model.params[name].shape)
        prior = pair_label_prior(pages)
        batch = collate_samples(expand_pages(pages), schema)
        training = build_training_graph(model, batch, prior, hyper)
        check = finite_diff_check(
            training.graph,
            model.params,
            tolerance=config.tolerance,
            root=training.total,
            max_coords_per_leaf=config.max_coords_per_leaf,
            seed=b,
        )
        for leaf in check.leaves.values():
            report.coords_checked += leaf.coords_checked
            report.kinks_skipped += leaf.kinks_skipped
            report.non_finite = report.non_finite or leaf.non_finite
            if leaf.max_rel_error > report.max_rel_error:
                report.max_rel_error = leaf.max_rel_error
                report.worst_batch, report.worst_leaf = b, leaf.name
        logger.debug(f"gradcheck batch {b}: max relative error {check.max_rel_error:.3e}")

    logger.info(
        f"Gradient check over {report.batches} batches: max relative error "
        f"{report.max_rel_error:.3e} ({report.kinks_skipped} kink steps skipped)"
    )
    return report
