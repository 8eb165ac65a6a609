"""
Tests for the ablation grid and its table.
"""

from pathlib import Path

import pytest

from src.ccn.config import ConfigLoader, TrainConfig
from src.ccn.data.dataset_io import split_pages
from src.ccn.data.synth import generate_dataset
from src.ccn.errors import DatasetError
from src.ccn.features.embedding import FeatureSchema
from src.ccn.models.variant import ModelVariant
from src.ccn.training.ablation import (
    AblationCell,
    AblationRow,
    AblationTable,
    ablation_direction,
    run_ablation,
    trimmed_mean,
)
from tests.factories import make_page

ONE_EPOCH = TrainConfig(epochs=1, seed=0)
CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


@pytest.fixture
def grid(schema, hyper, network, tiny_split):
    train, test = tiny_split

    def run(variants, seeds, lambdas=None, test_pages=None, train_config=ONE_EPOCH):
        return run_ablation(
            variants,
            seeds,
            train,
            test if test_pages is None else test_pages,
            schema,
            hyper,
            network,
            train_config,
            lambdas=lambdas,
        )

    return run


@pytest.mark.parametrize(
    "values, expected",
    [([1, 2, 3, 4, 100], 3.0), ([0.5, 0.7], 0.6), ([2.0], 2.0), ([5, 1, 4, 2, 3, 9], 3.5)],
)
def test_trimmed_mean(values, expected):
    assert trimmed_mean(values) == pytest.approx(expected)


class TestRunAblation:
    """Variant grid over shared data"""

    def test_two_variants_five_seeds(self, grid):
        table = grid([ModelVariant.TAN, ModelVariant.CCN], [1, 2, 3, 4, 5])

        assert [r.variant for r in table.rows] == [ModelVariant.TAN, ModelVariant.CCN]
        for row in table.rows:
            assert len(row.cells) == 5
            assert row.failed == 0
            assert row.mean_auc == pytest.approx(trimmed_mean(row.aucs))
        assert table.row(ModelVariant.TAN).delta_vs_tan_pt == 0.0

    def test_single_cell(self, grid):
        table = grid([ModelVariant.CCN], [7])
        (row,) = table.rows
        assert len(row.aucs) == 1
        assert row.mean_auc == row.aucs[0]
        assert row.delta_vs_tan_pt is None

    def test_lambda_zero_reproduces_cross_entropy_variant(self, grid):
        table = grid([ModelVariant.TAN, ModelVariant.CCN], [2], lambdas=[0.0])
        tan = table.row(ModelVariant.TAN)
        ccn = table.row(ModelVariant.CCN, 0.0)

        assert ccn.aucs == tan.aucs
        assert ccn.delta_vs_tan_pt == 0.0

    def test_lambda_sweep_rows(self, grid):
        table = grid([ModelVariant.TAN, ModelVariant.CCN], [1], lambdas=[0.1, 0.3])

        assert [(r.variant, r.lam) for r in table.rows] == [
            (ModelVariant.TAN, None),
            (ModelVariant.CCN, 0.1),
            (ModelVariant.CCN, 0.3),
        ]
        assert table.row(ModelVariant.CCN, 0.3).cells[0].lam == 0.3
        with pytest.raises(KeyError):
            table.row(ModelVariant.CCN_NO_TSI)

    def test_failed_cells_do_not_stop_the_grid(self, grid):
        unclicked = [make_page(i, [0, 0, 0], user_id=i) for i in range(4)]
        table = grid([ModelVariant.TAN, ModelVariant.CCN], [1, 2], test_pages=unclicked)

        assert len(table.rows) == 2
        for row in table.rows:
            assert row.failed == 2
            assert row.mean_auc is None
            assert "single class" in row.cells[0].error
        assert "failed,failed" in table.to_tsv()

    @pytest.mark.parametrize("variants, seeds", [([], [1]), ([ModelVariant.TAN], [])])
    def test_empty_grid(self, grid, variants, seeds):
        with pytest.raises(DatasetError):
            grid(variants, seeds)


# ==============================================================================
# Table output
# ==============================================================================

def test_table_tsv(grid, tmp_path):
    table = grid([ModelVariant.TAN, ModelVariant.CCN], [1, 2], lambdas=[0.1])
    path = table.write(tmp_path / "ablation.tsv")
    lines = path.read_text().splitlines()

    assert lines[0].split("\t") == [
        "variant", "lambda", "seeds", "failed", "mean_auc", "delta_vs_tan_pt", "aucs"
    ]
    tan, ccn = (line.split("\t") for line in lines[1:])
    assert tan[:4] == ["tan", "-", "2", "0"]
    assert ccn[:4] == ["ccn", "0.1", "2", "0"]
    assert tan[5] == "0.000"
    assert len(ccn[6].split(",")) == 2


def test_empty_table_has_header_only():
    assert AblationTable().to_tsv().count("\n") == 1


# ==============================================================================
# Direction check
# ==============================================================================

def _row(variant, lam, aucs):
    cells = [
        AblationCell(variant, 0.1 if lam is None else lam, seed, auc=auc)
        for seed, auc in enumerate(aucs, start=1)
    ]
    return AblationRow(variant=variant, lam=lam, cells=cells)


def _table(ccn_by_lambda, tan=0.700, no_attraction=0.705, no_repulsion=0.704):
    rows = [_row(ModelVariant.TAN, None, [tan])]
    for lam, ccn in ccn_by_lambda.items():
        rows += [
            _row(ModelVariant.CCN_NO_ATTRACTION, lam, [no_attraction]),
            _row(ModelVariant.CCN_NO_REPULSION, lam, [no_repulsion]),
            _row(ModelVariant.CCN, lam, [ccn]),
        ]
    return AblationTable(rows=rows)


class TestAblationDirection:
    """CCN >= TAN + 0.5 pt and >= every single-loss ablation"""

    def test_passes(self):
        (verdict,) = ablation_direction(_table({0.1: 0.706}))
        assert verdict.passed
        assert verdict.lam == 0.1
        assert verdict.ccn_vs_tan_pt == pytest.approx(0.6)
        assert verdict.ccn_vs_ablation_pt["ccn_no_attraction"] == pytest.approx(0.1)

    def test_margin_over_tan_is_required(self):
        (verdict,) = ablation_direction(_table({0.1: 0.704}, no_attraction=0.7, no_repulsion=0.7))
        assert verdict.ccn_vs_tan_pt == pytest.approx(0.4)
        assert not verdict.passed

    def test_single_loss_ablation_must_not_win(self):
        (verdict,) = ablation_direction(_table({0.1: 0.706}, no_repulsion=0.707))
        assert not verdict.passed

    def test_lambda_sweep_finds_a_passing_setting(self):
        verdicts = ablation_direction(_table({0.1: 0.703, 0.3: 0.709}))
        assert [(v.lam, v.passed) for v in verdicts] == [(0.1, False), (0.3, True)]

    def test_missing_baseline_fails(self):
        table = _table({0.1: 0.706})
        table.rows = table.rows[1:]
        (verdict,) = ablation_direction(table)
        assert verdict.ccn_vs_tan_pt is None
        assert not verdict.passed

    def test_gaps_on_a_trained_grid(self, grid):
        single = [ModelVariant.CCN_NO_ATTRACTION, ModelVariant.CCN_NO_REPULSION]
        table = grid([ModelVariant.TAN, *single, ModelVariant.CCN], [1, 2], lambdas=[0.1])

        (verdict,) = ablation_direction(table)

        ccn = table.row(ModelVariant.CCN, 0.1)
        assert verdict.ccn_vs_tan_pt == pytest.approx(ccn.delta_vs_tan_pt, abs=1e-12)
        for variant in single:
            other = table.row(variant, 0.1)
            gap = 100.0 * (ccn.mean_auc - other.mean_auc)
            assert verdict.ccn_vs_ablation_pt[variant.value] == pytest.approx(gap, abs=1e-12)
        assert verdict.passed == (
            verdict.ccn_vs_tan_pt >= 0.5 and min(verdict.ccn_vs_ablation_pt.values()) >= 0.0
        )


@pytest.mark.slow
def test_direction_holds_at_desk_scale():
    loader = ConfigLoader(CONFIG_DIR)
    config = loader.load_config(overrides=[{"preset": "ablation"}], use_cache=False)
    pages, _ = generate_dataset(
        config.world, l_short=config.hyper.l_short, l_long=config.hyper.l_long
    )
    train, test = split_pages(pages, config.train.test_fraction)
    schema = FeatureSchema.from_config(config.features, config.hyper)

    verdicts = []
    for lam in (0.1, 0.05, 0.3, 1.0):
        table = run_ablation(
            config.ablation.variants,
            config.ablation.seeds,
            train,
            test,
            schema,
            config.hyper,
            config.network,
            config.train,
            lambdas=[lam],
        )
        verdicts += ablation_direction(table)
        if verdicts[-1].passed:
            break

    assert any(v.passed for v in verdicts), verdicts
