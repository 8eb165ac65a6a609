"""
Tests for the command-line surface (run_cli with captured streams).
"""

import io

import pytest

from src.ccn.cli import run_cli
from src.ccn.data.dataset_io import format_score_record, parse_dataset, write_dataset
from src.ccn.models.records import ScoringRequest, expand_page
from src.ccn.network.checkpoint import load_checkpoint
from src.ccn.network.ctr_model import predict_batch
from tests.factories import random_label_pages

SMALL = [
    "--set", "hyper.embedding_dim=4",
    "--set", "hyper.heads=2",
    "--set", "hyper.l_short=3",
    "--set", "hyper.l_long=5",
    "--set", "hyper.batch_size=32",
    "--set", "network.prediction_hidden=[6]",
    "--set", "network.collaborative_hidden=[3]",
    "--set", "world.num_categories=5",
    "--set", "world.trigger_pool=8",
    "--set", "world.warmup_history=4",
]
WORLD = [
    "--users", "20", "--items", "40", "--pages-per-user", "4",
    "--min-exposures", "4", "--max-exposures", "6", "--seed", "5",
]


@pytest.fixture
def cli(tmp_path):
    """run_cli against an empty config directory (built-in defaults)."""
    config_dir = tmp_path / "config"
    config_dir.mkdir()

    def run(command, *args, stdin: str = ""):
        out = io.StringIO()
        argv = [command, "--config-dir", str(config_dir), "--log-level", "WARNING", *args]
        code = run_cli(argv, stdin=io.StringIO(stdin), stdout=out)
        return code, out.getvalue()

    return run


@pytest.fixture
def trained(cli, tmp_path):
    run_dir = tmp_path / "run"
    code, _ = cli("synth", "--out-dir", str(run_dir), *WORLD, *SMALL)
    assert code == 0
    code, out = cli("train", "--out-dir", str(run_dir), "--epochs", "1", *SMALL)
    assert code == 0
    return run_dir, out


# ==============================================================================
# synth
# ==============================================================================

def test_synth_is_reproducible(cli, tmp_path):
    for name in ("a", "b"):
        code, out = cli("synth", "--out-dir", str(tmp_path / name), *WORLD, *SMALL)
        assert code == 0
        assert out.strip().endswith("dataset.tsv")

    first = (tmp_path / "a" / "dataset.tsv").read_bytes()
    assert first == (tmp_path / "b" / "dataset.tsv").read_bytes()
    assert len(parse_dataset(tmp_path / "a" / "dataset.tsv")) == 80


# ==============================================================================
# train / eval / score
# ==============================================================================

class TestTrainEvalScore:
    """End-to-end flow on a tiny world"""

    def test_train_writes_checkpoint_and_metrics(self, trained):
        run_dir, out = trained
        assert (run_dir / "model.ckpt").exists()
        assert (run_dir / "metrics.ndtxt").read_text().count("\n") == 1
        label, value = out.strip().split("\t")
        assert label == "auc"
        assert 0.0 <= float(value) <= 1.0

    def test_eval(self, cli, trained):
        run_dir, _ = trained
        code, out = cli(
            "eval", "--out-dir", str(run_dir), "--data", str(run_dir / "dataset.tsv"), *SMALL
        )
        assert code == 0
        assert out.startswith("auc\t")
        assert 0.0 <= float(out.split("\t")[1]) <= 1.0

    def test_score_matches_library_prediction(self, cli, trained):
        run_dir, _ = trained
        page = parse_dataset(run_dir / "dataset.tsv")[0]
        samples = expand_page(page)
        records = [format_score_record(ScoringRequest.from_sample(s), s.context) for s in samples]

        code, out = cli(
            "score", "--out-dir", str(run_dir), *SMALL, stdin="\n".join(records) + "\n"
        )

        expected = predict_batch(load_checkpoint(run_dir / "model.ckpt"), samples)
        assert code == 0
        assert out.splitlines() == [repr(float(p)) for p in expected]

    def test_score_without_input(self, cli, trained):
        run_dir, _ = trained
        code, _ = cli("score", "--out-dir", str(run_dir), *SMALL, stdin="")
        assert code == 1

    def test_untrained_checkpoint_scores_at_chance(self, cli, tmp_path):
        run_dir = tmp_path / "init"
        code, _ = cli("train", "--out-dir", str(run_dir), "--init-only", *SMALL)
        assert code == 0
        data = write_dataset(random_label_pages(1250, 8, seed=9), tmp_path / "random.tsv")

        code, out = cli("eval", "--out-dir", str(run_dir), "--data", str(data), *SMALL)

        assert code == 0
        assert 0.45 <= float(out.split("\t")[1]) <= 0.55

    def test_ablate(self, cli, trained):
        run_dir, _ = trained
        code, out = cli(
            "ablate", "--out-dir", str(run_dir), "--data", str(run_dir / "dataset.tsv"),
            "--variants", "tan,ccn", "--seeds", "1,2", "--epochs", "1", *SMALL,
        )
        assert code == 0
        assert out.splitlines()[0].startswith("variant\tlambda")
        assert len(out.splitlines()) == 3
        assert (run_dir / "ablation.tsv").read_text() == out

    def test_pipeline_is_byte_reproducible(self, cli, tmp_path):
        outputs = []
        for name in ("a", "b"):
            run_dir = tmp_path / name
            assert cli("synth", "--out-dir", str(run_dir), *WORLD, *SMALL)[0] == 0
            code, trained_out = cli("train", "--out-dir", str(run_dir), "--epochs", "2", *SMALL)
            assert code == 0
            code, eval_out = cli(
                "eval", "--out-dir", str(run_dir), "--data", str(run_dir / "dataset.tsv"), *SMALL
            )
            assert code == 0
            outputs.append(((run_dir / "metrics.ndtxt").read_bytes(), trained_out, eval_out))

        first, second = outputs
        assert first[0].count(b"\n") == 2
        assert first == second

    def test_eval_refuses_a_different_schema(self, cli, tmp_path):
        run_dir = tmp_path / "init"
        assert cli("train", "--out-dir", str(run_dir), "--init-only", *SMALL)[0] == 0
        data = write_dataset(random_label_pages(3, 4, seed=1), tmp_path / "d.tsv")

        code, out = cli(
            "eval", "--out-dir", str(run_dir), "--data", str(data),
            *SMALL, "--set", "hyper.embedding_dim=8",
        )

        assert code == 2
        assert out == ""


# ==============================================================================
# gradcheck
# ==============================================================================

def test_gradcheck_passes(cli, tmp_path):
    code, out = cli("gradcheck", "--out-dir", str(tmp_path), "--batches", "2")
    assert code == 0
    assert out.startswith("max_rel_error\t")
    assert "passed: true" in (tmp_path / "gradcheck.txt").read_text()


def test_gradcheck_failure_is_numeric(cli, tmp_path):
    code, _ = cli(
        "gradcheck", "--out-dir", str(tmp_path), "--batches", "1", "--tolerance", "1e-30"
    )
    assert code == 3


# ==============================================================================
# Exit codes
# ==============================================================================

@pytest.mark.parametrize(
    "argv",
    [
        ["bogus"],
        ["train", "--variant", "nope"],
        ["eval"],
        ["ablate", "--seeds", "one,two"],
    ],
)
def test_usage_errors(cli, argv):
    code, _ = cli(*argv)
    assert code == 1


def test_no_subcommand():
    assert run_cli([], stdin=io.StringIO(), stdout=io.StringIO()) == 1


def test_missing_checkpoint(cli, tmp_path):
    data = write_dataset(random_label_pages(3, 4, seed=1), tmp_path / "d.tsv")
    code, _ = cli("eval", "--out-dir", str(tmp_path / "empty"), "--data", str(data))
    assert code == 2


def test_bad_override(cli, tmp_path):
    code, _ = cli("synth", "--out-dir", str(tmp_path), "--set", "hyper.heads=3")
    assert code == 2


def test_unknown_preset(cli, tmp_path):
    code, _ = cli("synth", "--out-dir", str(tmp_path), "--preset", "huge")
    assert code == 2
