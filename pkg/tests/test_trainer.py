"""
Tests for the training loop, evaluation and the metrics report.
"""

import math

import numpy as np
import pytest

from src.ccn.config import NetworkConfig, TrainConfig
from src.ccn.errors import DatasetError, NumericError, VariantError
from src.ccn.models.records import expand_pages
from src.ccn.models.variant import ModelVariant
from src.ccn.network.ctr_model import CCNModel
from src.ccn.training.trainer import (
    MetricsReport,
    degree_separation,
    evaluate,
    init_train_state,
    read_metrics,
    train_epoch,
    train_model,
)
from tests.factories import random_label_pages


def fresh(schema, hyper, network, variant=ModelVariant.CCN, seed=1) -> CCNModel:
    return CCNModel.initialise(schema, hyper, network, variant, seed=seed)


# ==============================================================================
# train_epoch
# ==============================================================================

class TestTrainEpoch:
    """One pass over the samples"""

    def test_metrics_recombine(self, schema, hyper, network, tiny_split):
        train, _ = tiny_split
        model = fresh(schema, hyper, network)
        state = init_train_state(model, train, seed=3)

        metrics = train_epoch(state, expand_pages(train))

        assert metrics.samples == sum(len(p.exposures) for p in train)
        assert metrics.lam == hyper.lam
        assert metrics.attraction_weight == state.prior.attraction_weight
        assert metrics.recombined() == pytest.approx(metrics.total, abs=1e-9)
        assert all(math.isfinite(v) for v in (metrics.ce, metrics.repulsion, metrics.attraction))

    def test_parameters_change(self, schema, hyper, network, tiny_split):
        train, _ = tiny_split
        model = fresh(schema, hyper, network)
        before = model.copy()
        train_epoch(init_train_state(model, train, seed=3), expand_pages(train))
        assert not np.array_equal(model.params["mlp.w0"], before.params["mlp.w0"])

    def test_learning_rate_decays_per_epoch(self, schema, hyper, network, tiny_split):
        train, _ = tiny_split
        state = init_train_state(fresh(schema, hyper, network), train, seed=3)
        samples = expand_pages(train)

        first = train_epoch(state, samples)
        second = train_epoch(state, samples)

        assert first.learning_rate == hyper.learning_rate
        assert second.learning_rate == pytest.approx(hyper.learning_rate * hyper.lr_decay)

    def test_non_finite_loss(self, schema, hyper, network, tiny_split):
        train, _ = tiny_split
        model = fresh(schema, hyper, network)
        model.params[f"mlp.b{model.mlp_layers - 1}"][...] = np.nan
        state = init_train_state(model, train, seed=3)
        with pytest.raises(NumericError, match="non-finite"):
            train_epoch(state, expand_pages(train))

    def test_empty_samples(self, schema, hyper, network, tiny_split):
        train, _ = tiny_split
        state = init_train_state(fresh(schema, hyper, network), train, seed=3)
        with pytest.raises(DatasetError):
            train_epoch(state, [])

    def test_empty_training_split(self, schema, hyper, network):
        with pytest.raises(DatasetError, match="empty"):
            init_train_state(fresh(schema, hyper, network), [], seed=3)


# ==============================================================================
# train_model
# ==============================================================================

class TestTrainModel:
    """Full runs"""

    def test_same_seed_same_result(self, schema, hyper, network, train_config, tiny_split):
        train, test = tiny_split
        first = train_model(fresh(schema, hyper, network), train, test, train_config)
        second = train_model(fresh(schema, hyper, network), train, test, train_config)

        assert first.report.final_loss == second.report.final_loss
        assert first.report.final_auc == second.report.final_auc
        for name, value in first.model.params.items():
            assert np.array_equal(value, second.model.params[name])

    def test_lambda_zero_matches_cross_entropy_variant(
        self, schema, hyper, network, train_config, tiny_split
    ):
        train, test = tiny_split
        no_contrast = hyper.model_copy(update={"lam": 0.0})
        ccn = train_model(
            fresh(schema, no_contrast, network, ModelVariant.CCN), train, test, train_config
        )
        tan = train_model(
            fresh(schema, no_contrast, network, ModelVariant.TAN), train, test, train_config
        )

        assert ccn.report.final_auc == tan.report.final_auc
        assert ccn.report.final_loss == tan.report.final_loss

    def test_eval_every(self, schema, hyper, network, tiny_split):
        train, test = tiny_split
        config = TrainConfig(epochs=3, seed=3, eval_every=2)
        result = train_model(fresh(schema, hyper, network), train, test, config)
        aucs = [m.test_auc for m in result.report.epochs]

        assert aucs[0] is None
        assert aucs[1] is not None and aucs[2] is not None
        assert result.report.final_auc == aucs[2]

    def test_lineage_records_training(self, schema, hyper, network, train_config, tiny_split):
        train, test = tiny_split
        result = train_model(fresh(schema, hyper, network), train, test, train_config)
        assert result.model.lineage["trained_epochs"] == train_config.epochs
        assert result.model.lineage["train_seed"] == train_config.seed
        assert result.report.prior["p_pos"] > 0.0

    @pytest.mark.slow
    def test_memorises_ten_pages(self, schema, hyper, tiny_pages):
        pages = tiny_pages[:10]
        wide = NetworkConfig(prediction_hidden=[16], collaborative_hidden=[3])
        fast = hyper.model_copy(update={"learning_rate": 0.3, "lr_decay": 1.0, "lam": 0.1})
        result = train_model(
            fresh(schema, fast, wide), pages, [], TrainConfig(epochs=200, seed=1), fast
        )
        assert result.report.epochs[-1].ce < 0.1


# ==============================================================================
# Evaluation
# ==============================================================================

def test_untrained_model_ranks_random_labels_at_chance(schema, hyper, network):
    pages = random_label_pages(1250, 8, seed=4)
    auc = evaluate(fresh(schema, hyper, network), pages)
    assert 0.45 <= auc <= 0.55


def test_evaluate_empty(schema, hyper, network):
    with pytest.raises(DatasetError):
        evaluate(fresh(schema, hyper, network), [])


def test_degree_separation(schema, hyper, network, tiny_split):
    _, test = tiny_split
    assert 0.0 <= degree_separation(fresh(schema, hyper, network), test) <= 1.0
    backbone = fresh(schema, hyper, network, ModelVariant.TAN_MINUS)
    with pytest.raises(VariantError):
        degree_separation(backbone, test)


# ==============================================================================
# Metrics report
# ==============================================================================

def test_metrics_file_round_trip(tmp_path, schema, hyper, network, train_config, tiny_split):
    train, test = tiny_split
    report = train_model(fresh(schema, hyper, network), train, test, train_config).report

    path = report.write(tmp_path / "out" / "metrics.ndtxt")
    records = read_metrics(path)

    assert len(records) == train_config.epochs
    assert [r["epoch"] for r in records] == [1, 2]
    assert "wall_clock" not in records[0]
    assert records[-1]["test_auc"] == report.final_auc
    assert path.read_text().endswith("\n")


def test_metrics_with_wall_clock(tmp_path, schema, hyper, network, train_config, tiny_split):
    train, test = tiny_split
    report = train_model(fresh(schema, hyper, network), train, test, train_config).report
    records = read_metrics(report.write(tmp_path / "m.ndtxt", include_wall_clock=True))
    assert records[0]["wall_clock"] >= 0.0


def test_empty_report():
    report = MetricsReport(variant="ccn", seed=1)
    assert report.final_auc is None
    assert report.final_loss is None
