"""Tests for the random micro-batch gradient check."""

import numpy as np
import pytest

from src.ccn.config import GradcheckConfig, NetworkConfig
from src.ccn.models.variant import ModelVariant
from src.ccn.network.ctr_model import parameter_shapes
from src.ccn.training.gradcheck import (
    GradcheckReport,
    gradcheck_schema,
    random_pages,
    run_gradcheck,
)


@pytest.mark.parametrize("variant", [ModelVariant.CCN, ModelVariant.TAN_MINUS])
def test_analytic_gradients_match(variant):
    report = run_gradcheck(GradcheckConfig(batches=3, seed=5), variant)

    assert report.passed
    assert report.max_rel_error < 1e-4
    assert report.coords_checked > 0
    assert not report.non_finite


def test_tiny_tolerance_fails():
    report = run_gradcheck(GradcheckConfig(batches=1, tolerance=1e-30))
    assert not report.passed
    assert report.worst_leaf is not None


def test_random_pages_are_valid():
    config = GradcheckConfig(pages_per_batch=4)
    pages = random_pages(config, np.random.default_rng(0))
    assert len(pages) == 4
    for page in pages:
        assert config.min_exposures <= len(page.exposures) <= config.max_exposures
        assert len(page.sequences.long) <= config.l_long


def test_report_text(tmp_path):
    report = GradcheckReport(batches=2, tolerance=1e-4, max_rel_error=3e-7, worst_leaf="mlp.w0")
    text = report.write(tmp_path / "gradcheck.txt").read_text()

    assert "max_rel_error: 3.000000e-07" in text
    assert "worst_leaf: mlp.w0" in text
    assert text.endswith("passed: true\n")


def test_non_finite_report_fails():
    assert not GradcheckReport(batches=1, tolerance=1e-4, non_finite=True).passed


def test_coordinates_are_capped_per_leaf():
    config = GradcheckConfig(batches=2, max_coords_per_leaf=2)
    network = NetworkConfig(
        prediction_hidden=config.prediction_hidden,
        collaborative_hidden=config.collaborative_hidden,
    )
    shapes = parameter_shapes(gradcheck_schema(config), network, ModelVariant.CCN)
    cap = sum(min(int(np.prod(shape)), 2) for shape in shapes.values())

    report = run_gradcheck(config)

    assert 0 < report.coords_checked <= config.batches * cap
