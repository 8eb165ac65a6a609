"""
Ablation grid: variants x lambda x seeds on one fixed dataset.

Every cell trains from scratch on the same train/test pages. A variant's
score is the mean test AUC over seeds, after dropping the best and worst
seed once there are at least five. Cells that raise are marked failed and
the grid continues.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from ..config import HyperParams, NetworkConfig, TrainConfig
from ..errors import CCNError, DatasetError
from ..features.embedding import FeatureSchema
from ..models.records import ImpressionPage
from ..models.variant import ModelVariant
from ..network.ctr_model import CCNModel
from .trainer import train_model

logger = logging.getLogger(__name__)

TRIM_FROM = 5
TABLE_HEADER = ("variant", "lambda", "seeds", "failed", "mean_auc", "delta_vs_tan_pt", "aucs")
MISSING = "-"


@dataclass
class AblationCell:
    variant: ModelVariant
    lam: float
    seed: int
    auc: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.auc is None


@dataclass
class AblationRow:
    """One variant at one lambda, aggregated over seeds."""

    variant: ModelVariant
    lam: Optional[float]
    cells: List[AblationCell] = field(default_factory=list)
    delta_vs_tan_pt: Optional[float] = None

    @property
    def aucs(self) -> List[float]:
        return [c.auc for c in self.cells if c.auc is not None]

    @property
    def failed(self) -> int:
        return sum(1 for c in self.cells if c.failed)

    @property
    def mean_auc(self) -> Optional[float]:
        return trimmed_mean(self.aucs) if self.aucs else None


def trimmed_mean(values: Sequence[float]) -> float:
    """Mean, without the single best and worst value when there are >= 5."""
    ordered = sorted(values)
    if len(ordered) >= TRIM_FROM:
        ordered = ordered[1:-1]
    return math.fsum(ordered) / len(ordered)


def _format(value: Optional[float], digits: int = 6) -> str:
    return MISSING if value is None else f"{value:.{digits}f}"


@dataclass
class AblationTable:
    rows: List[AblationRow] = field(default_factory=list)

    def row(self, variant: ModelVariant, lam: Optional[float] = None) -> AblationRow:
        for row in self.rows:
            if row.variant is variant and (lam is None or row.lam == lam):
                return row
        raise KeyError(f"no row for {variant.value} (lambda={lam})")

    def to_tsv(self) -> str:
        lines = ["\t".join(TABLE_HEADER)]
        for row in self.rows:
            lines.append("\t".join([
                row.variant.value,
                MISSING if row.lam is None else repr(row.lam),
                str(len(row.cells)),
                str(row.failed),
                _format(row.mean_auc),
                _format(row.delta_vs_tan_pt, 3),
                ",".join(_format(c.auc) if not c.failed else "failed" for c in row.cells),
            ]))
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_tsv(), encoding="utf-8")
        except OSError as e:
            raise DatasetError(f"cannot write ablation table {path}: {e}")
        logger.info(f"Wrote ablation table ({len(self.rows)} rows) to {path}")
        return path


def _run_cell(
    cell: AblationCell,
    schema: FeatureSchema,
    hyper: HyperParams,
    network: NetworkConfig,
    train: TrainConfig,
    train_pages: Sequence[ImpressionPage],
    test_pages: Sequence[ImpressionPage],
) -> None:
    cell_hyper = hyper.model_copy(update={"lam": cell.lam})
    cell_train = train.model_copy(update={"seed": cell.seed, "variant": cell.variant})
    model = CCNModel.initialise(schema, cell_hyper, network, cell.variant, cell.seed)
    try:
        result = train_model(model, train_pages, test_pages, cell_train, cell_hyper)
        cell.auc = result.report.final_auc
        if cell.auc is None:
            cell.error = "no test AUC"
    except CCNError as e:
        cell.error = str(e)
    except FloatingPointError as e:
        cell.error = f"floating point error: {e}"
    if cell.failed:
        logger.warning(f"Ablation cell {cell.variant.value} lambda={cell.lam} seed={cell.seed} failed: {cell.error}")
    else:
        logger.info(f"Ablation cell {cell.variant.value} lambda={cell.lam} seed={cell.seed}: AUC {cell.auc:.5f}")


def run_ablation(
    variants: Sequence[ModelVariant],
    seeds: Sequence[int],
    train_pages: Sequence[ImpressionPage],
    test_pages: Sequence[ImpressionPage],
    schema: FeatureSchema,
    hyper: HyperParams,
    network: NetworkConfig,
    train: TrainConfig,
    lambdas: Optional[Sequence[float]] = None,
) -> AblationTable:
    """Train every (variant, lambda, seed) cell and aggregate per row.

    Variants without contrastive losses get a single row regardless of the
    lambda sweep.

    Args:
        variants: Variants to compare
        seeds: Seeds shared by all variants
        train_pages: Training split, identical for every cell
        test_pages: Test split, identical for every cell
        schema: Feature schema
        hyper: Base hyperparameters; lambda is overridden per row
        network: MLP widths
        train: Epochs and evaluation cadence
        lambdas: Lambda sweep for contrastive variants (defaults to hyper.lam)

    Returns:
        AblationTable with one row per (variant, lambda)

    Raises:
        DatasetError: If variants or seeds are empty
    """
    if not variants or not seeds:
        raise DatasetError("ablation needs at least one variant and one seed")
    if len(seeds) < 2:
        logger.warning("Ablation with a single seed reports an unaveraged AUC")
    lambdas = list(lambdas) if lambdas else [hyper.lam]

    table = AblationTable()
    for variant in variants:
        row_lambdas: List[Optional[float]] = list(lambdas) if variant.is_contrastive else [None]
        for lam in row_lambdas:
            row = AblationRow(variant=variant, lam=lam)
            for seed in seeds:
                cell = AblationCell(variant=variant, lam=hyper.lam if lam is None else lam, seed=seed)
                _run_cell(cell, schema, hyper, network, train, train_pages, test_pages)
                row.cells.append(cell)
            table.rows.append(row)

    baseline = next(
        (r for r in table.rows if r.variant is ModelVariant.TAN and r.mean_auc is not None), None
    )
    if baseline is not None:
        for row in table.rows:
            if row.mean_auc is not None:
                row.delta_vs_tan_pt = 100.0 * (row.mean_auc - baseline.mean_auc)
    return table


# ==============================================================================
# DIRECTION CHECK
# ==============================================================================

SINGLE_LOSS_ABLATIONS = (ModelVariant.CCN_NO_ATTRACTION, ModelVariant.CCN_NO_REPULSION)
DIRECTION_MARGIN_PT = 0.5


@dataclass(frozen=True)
class DirectionVerdict:
    """Whether CCN at one lambda beats TAN by the margin and every single-loss ablation."""

    lam: float
    ccn_vs_tan_pt: Optional[float]
    ccn_vs_ablation_pt: Dict[str, Optional[float]]
    margin_pt: float = DIRECTION_MARGIN_PT

    @property
    def passed(self) -> bool:
        if self.ccn_vs_tan_pt is None or self.ccn_vs_tan_pt < self.margin_pt:
            return False
        return all(d is not None and d >= 0.0 for d in self.ccn_vs_ablation_pt.values())


def _gap_pt(ccn: AblationRow, other: Optional[AblationRow]) -> Optional[float]:
    if other is None or ccn.mean_auc is None or other.mean_auc is None:
        return None
    return 100.0 * (ccn.mean_auc - other.mean_auc)


def _find(table: AblationTable, variant: ModelVariant, lam: Optional[float]) -> Optional[AblationRow]:
    try:
        return table.row(variant, lam)
    except KeyError:
        return None


def ablation_direction(table: AblationTable, margin_pt: float = DIRECTION_MARGIN_PT) -> List[DirectionVerdict]:
    """One verdict per CCN row of the table.

    Single-loss ablations are compared at the same lambda; a missing or fully
    failed row fails the verdict.
    """
    tan = _find(table, ModelVariant.TAN, None)
    verdicts = []
    for row in table.rows:
        if row.variant is not ModelVariant.CCN:
            continue
        ablations = {
            variant.value: _gap_pt(row, _find(table, variant, row.lam))
            for variant in SINGLE_LOSS_ABLATIONS
        }
        verdict = DirectionVerdict(row.lam, _gap_pt(row, tan), ablations, margin_pt)
        logger.info(
            f"Direction at lambda={row.lam}: CCN - TAN = {verdict.ccn_vs_tan_pt} pt, "
            f"vs ablations {ablations}, passed={verdict.passed}"
        )
        verdicts.append(verdict)
    return verdicts
