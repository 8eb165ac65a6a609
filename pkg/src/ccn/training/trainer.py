"""
Mini-batch training with AdaGrad and AUC evaluation.

Each page is expanded into one TrainingSample per exposure. The pair-label
prior is computed once from the training pages before the first epoch.
Samples are shuffled per epoch with a seeded generator, and the learning
rate decays by hyper.lr_decay after every epoch.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..autodiff import AdaGradState, adagrad_step, backward_grad, forward_eval
from ..config import HyperParams, TrainConfig
from ..errors import DatasetError, NumericError
from ..features.embedding import collate_samples
from ..models.records import ImpressionPage, TrainingSample, expand_pages
from ..network.collaborative import PairPrior, pair_label_prior
from ..network.ctr_model import (
    CCNModel,
    LossBreakdown,
    build_training_graph,
    collaborative_degrees,
    predict_batch,
    read_losses,
)
from .metrics import compute_auc

logger = logging.getLogger(__name__)

# spawn key of the shuffling stream, distinct from parameter init
SHUFFLE_STREAM = 1


# ==============================================================================
# METRICS RECORDS
# ==============================================================================

@dataclass
class EpochMetrics:
    """Training loss components of one epoch (sample-weighted batch means)."""

    epoch: int
    variant: str
    seed: int
    ce: float
    repulsion: float
    attraction: float
    total: float
    lam: float
    attraction_weight: float
    learning_rate: float
    samples: int
    test_auc: Optional[float] = None
    wall_clock: Optional[float] = None

    def recombined(self) -> float:
        return self.ce + self.lam * (self.repulsion + self.attraction_weight * self.attraction)

    def to_record(self, include_wall_clock: bool = False) -> Dict[str, Any]:
        record = asdict(self)
        if not include_wall_clock:
            record.pop("wall_clock")
        return record


@dataclass
class MetricsReport:
    """Per-epoch metrics of one training run."""

    variant: str
    seed: int
    prior: Optional[Dict[str, Any]] = None
    epochs: List[EpochMetrics] = field(default_factory=list)

    @property
    def final_auc(self) -> Optional[float]:
        for metrics in reversed(self.epochs):
            if metrics.test_auc is not None:
                return metrics.test_auc
        return None

    @property
    def final_loss(self) -> Optional[float]:
        return self.epochs[-1].total if self.epochs else None

    def to_lines(self, include_wall_clock: bool = False) -> List[str]:
        return [
            json.dumps(m.to_record(include_wall_clock), sort_keys=True)
            for m in self.epochs
        ]

    def write(self, path: Union[str, Path], include_wall_clock: bool = False) -> Path:
        """One JSON record per epoch, newline-terminated.

        Raises:
            DatasetError: On I/O failure
        """
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                for line in self.to_lines(include_wall_clock):
                    f.write(line + "\n")
        except OSError as e:
            raise DatasetError(f"cannot write metrics {path}: {e}")
        logger.info(f"Wrote {len(self.epochs)} epoch records to {path}")
        return path


def read_metrics(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Parse a metrics file written by MetricsReport.write."""
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


# ==============================================================================
# TRAINING
# ==============================================================================

@dataclass
class TrainState:
    """Everything that evolves across epochs."""

    model: CCNModel
    optimizer: AdaGradState
    prior: PairPrior
    rng: np.random.Generator
    epoch: int = 0


def shuffle_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SHUFFLE_STREAM,)))


def init_train_state(
    model: CCNModel,
    train_pages: Sequence[ImpressionPage],
    seed: int,
    hyper: Optional[HyperParams] = None,
) -> TrainState:
    """Compute the pair prior and create a fresh optimizer.

    Raises:
        DatasetError: If there are no training pages
        PriorUndefinedError: If the pages admit no same-page pair
    """
    hyper = hyper or model.hyper
    if not train_pages:
        raise DatasetError("training split is empty")
    prior = pair_label_prior(train_pages, clamp=hyper.prior_clamp)
    return TrainState(
        model=model,
        optimizer=AdaGradState(learning_rate=hyper.learning_rate, epsilon=hyper.adagrad_epsilon),
        prior=prior,
        rng=shuffle_stream(seed),
    )


def _accumulate(totals: Dict[str, float], losses: LossBreakdown, weight: int) -> None:
    for key in ("ce", "repulsion", "attraction", "total"):
        totals[key] += weight * getattr(losses, key)


def train_epoch(
    state: TrainState,
    samples: Sequence[TrainingSample],
    hyper: Optional[HyperParams] = None,
) -> EpochMetrics:
    """One pass over the samples: shuffle, then backward + AdaGrad per batch.

    The model parameters and optimizer in state are updated in place.

    Raises:
        DatasetError: If samples is empty
        NumericError: If a batch loss is not finite
    """
    model = state.model
    hyper = hyper or model.hyper
    if not samples:
        raise DatasetError("cannot train on an empty dataset")

    state.epoch += 1
    order = state.rng.permutation(len(samples))
    totals = {"ce": 0.0, "repulsion": 0.0, "attraction": 0.0, "total": 0.0}
    lam, weight = 0.0, 0.0
    learning_rate = state.optimizer.learning_rate

    for start in range(0, len(order), hyper.batch_size):
        chosen = [samples[i] for i in order[start:start + hyper.batch_size]]
        batch = collate_samples(chosen, model.schema)
        training = build_training_graph(model, batch, state.prior, hyper)
        forward_eval(training.graph, model.params, training.total)
        losses = read_losses(training)
        if not np.isfinite(losses.total):
            raise NumericError(
                f"non-finite loss {losses.total} at epoch {state.epoch}, batch {start // hyper.batch_size}"
            )
        grads = backward_grad(training.graph).for_inputs()
        adagrad_step(model.params, grads, state.optimizer)
        _accumulate(totals, losses, len(chosen))
        lam, weight = losses.lam, losses.attraction_weight
        logger.debug(
            f"epoch {state.epoch} batch {start // hyper.batch_size}: "
            f"ce={losses.ce:.5f} total={losses.total:.5f}"
        )

    n = len(samples)
    state.optimizer.learning_rate *= hyper.lr_decay
    return EpochMetrics(
        epoch=state.epoch,
        variant=model.variant.value,
        seed=model.seed,
        ce=totals["ce"] / n,
        repulsion=totals["repulsion"] / n,
        attraction=totals["attraction"] / n,
        total=totals["total"] / n,
        lam=lam,
        attraction_weight=weight,
        learning_rate=learning_rate,
        samples=n,
    )


def evaluate(model: CCNModel, pages: Sequence[ImpressionPage]) -> float:
    """Test AUC over every exposure of pages (context is never read).

    Raises:
        DatasetError: If pages is empty
        SingleClassError: If all exposures share one label
    """
    samples = expand_pages(list(pages))
    if not samples:
        raise DatasetError("cannot evaluate on an empty dataset")
    scores = predict_batch(model, samples)
    return compute_auc(scores, [s.label for s in samples])


def degree_separation(model: CCNModel, pages: Sequence[ImpressionPage]) -> float:
    """AUC of the collaborative degree alone against the click labels."""
    samples = expand_pages(list(pages))
    return compute_auc(collaborative_degrees(model, samples), [s.label for s in samples])


@dataclass
class TrainResult:
    model: CCNModel
    report: MetricsReport


def train_model(
    model: CCNModel,
    train_pages: Sequence[ImpressionPage],
    test_pages: Sequence[ImpressionPage],
    config: TrainConfig,
    hyper: Optional[HyperParams] = None,
) -> TrainResult:
    """Run config.epochs epochs, evaluating every config.eval_every epochs.

    The final epoch is always evaluated when test pages are given.

    Raises:
        DatasetError: Empty training split
        NumericError: Non-finite loss
    """
    hyper = hyper or model.hyper
    state = init_train_state(model, train_pages, config.seed, hyper)
    samples = expand_pages(list(train_pages))
    report = MetricsReport(variant=model.variant.value, seed=config.seed, prior=state.prior.to_dict())
    logger.info(
        f"Training {model.variant.display_name} on {len(train_pages)} pages / {len(samples)} samples "
        f"for {config.epochs} epochs (lambda={hyper.lam}, batch={hyper.batch_size})"
    )

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        metrics = train_epoch(state, samples, hyper)
        due = epoch % config.eval_every == 0 or epoch == config.epochs
        if test_pages and due:
            metrics.test_auc = evaluate(model, test_pages)
        metrics.wall_clock = time.perf_counter() - started
        report.epochs.append(metrics)
        auc = f"{metrics.test_auc:.5f}" if metrics.test_auc is not None else "-"
        logger.info(
            f"epoch {epoch}/{config.epochs} ce={metrics.ce:.5f} rep={metrics.repulsion:.5f} "
            f"att={metrics.attraction:.5f} total={metrics.total:.5f} auc={auc} "
            f"({metrics.wall_clock:.1f}s)"
        )

    model.lineage.update({"trained_epochs": state.epoch, "train_seed": config.seed})
    return TrainResult(model=model, report=report)
