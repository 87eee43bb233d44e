"""
End-to-end tests of the lesion-sense command line on temporary directories.
"""
import json
import logging
from pathlib import Path

import pytest

import cli.main as main_module
from annotator.checkpoint import save_checkpoint
from annotator.model import NetworkConfig, zero_parameters
from cli.main import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from mining.ontology import load_ontology
from utils.storage import read_csv

WORKSPACE = Path(__file__).parent.parent
SMOKE = str(WORKSPACE / "configs" / "smoke.cfg")
DEMO_LEXICON = str(WORKSPACE / "data" / "demo_lexicon.tsv")
FIXTURES = Path(__file__).parent / "fixtures"
QUIET = ["--log-level", "ERROR"]


@pytest.fixture(autouse=True)
def restore_logging():
    """The CLI installs its own root handler; put the test runner's back."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    """Smoke-sized synthetic corpus with its patch store."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--config", SMOKE, "--out", str(out), *QUIET]) == EXIT_OK
    root.handlers[:] = handlers
    root.setLevel(level)
    return out


def _error(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.mark.integration
class TestOntologyValidate:
    def test_demo_lexicon(self, capsys):
        """Test the demo lexicon report."""
        assert main(["ontology", "validate", DEMO_LEXICON, *QUIET]) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines == [
            "K=5, 0 errors",
            "body_part: 3",
            "finding_type: 2",
            "attribute: 0",
            "depth: 3",
        ]

    def test_cyclic_lexicon(self, tmp_path, capsys):
        """Test a cycle exits with a data error."""
        path = tmp_path / "cycle.tsv"
        path.write_text("a\tbody_part\t\tb\nb\tbody_part\t\ta\n", encoding="utf-8")
        assert main(["ontology", "validate", str(path), *QUIET]) == EXIT_DATA
        assert _error(capsys)["error"] == "cycle_detected"

    def test_empty_lexicon(self, tmp_path, capsys):
        """Test a lexicon without labels."""
        path = tmp_path / "empty.tsv"
        path.write_text("# name\tcategory\tsynonyms\tparents\n", encoding="utf-8")
        assert main(["ontology", "validate", str(path), *QUIET]) == EXIT_DATA
        assert _error(capsys)["error"] == "empty_lexicon"

    def test_manifest_only_with_out(self, tmp_path):
        """Test --out records a manifest for the validated lexicon."""
        out = tmp_path / "validate"
        assert main(["ontology", "validate", DEMO_LEXICON, "--out", str(out), *QUIET]) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "ontology validate"
        assert "lexicon" in manifest["inputs"]


@pytest.mark.integration
class TestMine:
    def setup_method(self):
        """Setup test fixtures."""
        self.args = [
            "mine",
            "--corpus",
            str(FIXTURES / "golden_sentences.jsonl"),
            "--lexicon",
            str(FIXTURES / "golden_lexicon.tsv"),
            *QUIET,
        ]

    def test_stdout_is_deterministic(self, capsys):
        """Test two runs print identical JSONL."""
        assert main(self.args) == EXIT_OK
        first = capsys.readouterr().out
        assert main(self.args + ["--threads", "4"]) == EXIT_OK
        second = capsys.readouterr().out
        assert first == second
        lines = first.splitlines()
        assert len(lines) == 22
        assert json.loads(lines[0])["label_names"] == ["chest", "lung", "nodule", "lung nodule"]

    def test_out_dir(self, tmp_path):
        """Test --out writes mined.jsonl and a manifest."""
        out = tmp_path / "mined"
        assert main(self.args + ["--out", str(out)]) == EXIT_OK
        assert len((out / "mined.jsonl").read_text(encoding="utf-8").splitlines()) == 22
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["outputs"] == ["mined.jsonl"]
        assert set(manifest["inputs"]) == {"corpus", "lexicon"}

    def test_empty_corpus(self, tmp_path, capsys):
        """Test an empty corpus prints nothing."""
        corpus = tmp_path / "empty.jsonl"
        corpus.write_text("", encoding="utf-8")
        args = ["mine", "--corpus", str(corpus), "--lexicon", DEMO_LEXICON, *QUIET]
        assert main(args) == EXIT_OK
        assert capsys.readouterr().out == ""

    def test_missing_corpus_flag(self, capsys):
        """Test a missing input path is a usage error."""
        assert main(["mine", "--lexicon", DEMO_LEXICON, *QUIET]) == EXIT_USAGE
        assert _error(capsys)["error"] == "missing_path"

    def test_malformed_corpus(self, tmp_path, capsys):
        """Test a broken corpus line is a data error with its line number."""
        corpus = tmp_path / "bad.jsonl"
        corpus.write_text("{broken\n", encoding="utf-8")
        args = ["mine", "--corpus", str(corpus), "--lexicon", DEMO_LEXICON, *QUIET]
        assert main(args) == EXIT_DATA
        payload = _error(capsys)
        assert payload["error"] == "malformed_jsonl"
        assert payload["line"] == 1


@pytest.mark.integration
class TestUsage:
    def test_unknown_command(self):
        """Test argparse errors exit with the usage code."""
        with pytest.raises(SystemExit) as info:
            main(["annotate"])
        assert info.value.code == EXIT_USAGE

    def test_unknown_config_key(self, capsys):
        """Test an unknown --set key."""
        args = ["ontology", "validate", DEMO_LEXICON, "--set", "network.depth=3", *QUIET]
        assert main(args) == EXIT_USAGE
        assert _error(capsys)["error"] == "unknown_key"

    def test_io_error_is_a_data_error(self, monkeypatch, capsys):
        """Test file system failures exit with the data code and an io_error payload."""

        def unwritable(args, cfg):
            raise PermissionError("cannot write runs/mined.jsonl")

        monkeypatch.setattr(main_module, "cmd_mine", unwritable)
        args = ["mine", "--lexicon", DEMO_LEXICON, *QUIET]
        assert main(args) == EXIT_DATA
        assert _error(capsys) == {"error": "io_error", "hint": "cannot write runs/mined.jsonl"}


@pytest.mark.integration
class TestPipelineCommands:
    def test_split_train_eval_predict(self, synth_dir, tmp_path, capsys):
        """Test split, train, eval and predict on the synthetic corpus."""
        lexicon = str(synth_dir / "lexicon.tsv")
        patches = str(synth_dir / "patches")
        split_dir, train_dir, eval_dir = tmp_path / "split", tmp_path / "train", tmp_path / "eval"

        split = ["dataset", "split", "--config", SMOKE, "--corpus", str(synth_dir / "corpus.jsonl")]
        assert main(split + ["--lexicon", lexicon, "--out", str(split_dir), *QUIET]) == EXIT_OK
        assert capsys.readouterr().out.startswith("train=")
        split_ids = json.loads((split_dir / "split.json").read_text(encoding="utf-8"))
        assert split_ids["train"] and split_ids["test"]

        train = [
            "train", "--config", SMOKE,
            "--corpus", str(split_dir / "train.jsonl"),
            "--test-corpus", str(split_dir / "test.jsonl"),
            "--lexicon", lexicon, "--patches", patches, "--out", str(train_dir), *QUIET,
        ]
        assert main(train) == EXIT_OK
        for name in ("model.ckpt", "model.ckpt.json", "model.ckpt.cfg", "loss.csv", "labels.json"):
            assert (train_dir / name).exists()
        assert "lesionsense_training_steps_total" in (train_dir / "metrics.prom").read_text()

        evaluate = [
            "eval", "--config", SMOKE,
            "--checkpoint", str(train_dir / "model.ckpt"),
            "--test-corpus", str(split_dir / "test.jsonl"),
            "--lexicon", lexicon, "--patches", patches, "--out", str(eval_dir), *QUIET,
        ]
        capsys.readouterr()
        assert main(evaluate) == EXIT_OK
        assert capsys.readouterr().out.startswith("overall: mean_auc=")
        summary = read_csv(eval_dir / "summary.csv")
        assert summary[0]["subset"] == "overall"
        assert 0.0 <= float(summary[0]["mean_auc"]) <= 1.0
        assert (eval_dir / "roc.csv").exists()

        lesion = split_ids["test"][0]
        predict = [
            "predict", "--config", SMOKE,
            "--checkpoint", str(train_dir / "model.ckpt"),
            "--corpus", str(split_dir / "test.jsonl"),
            "--lexicon", lexicon, "--patches", patches,
            "--lesion", lesion, "-k", "3", *QUIET,
        ]
        assert main(predict) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith(f"{lesion}: ")
        n_labels = len(json.loads((train_dir / "labels.json").read_text(encoding="utf-8"))["label_ids"])
        assert len(lines) == 1 + min(3, n_labels) + 1
        assert lines[-1].startswith("  FN:")

    def test_zero_checkpoint_scores_half(self, synth_dir, tmp_path):
        """Test an all-zero network evaluates to AUC 0.5 on every label."""
        o = load_ontology(synth_dir / "lexicon.tsv")
        cfg = NetworkConfig(
            n_stages=3, channels=[2, 2, 2], roi_grid=(2, 2), fc_dim=2,
            n_labels=o.size, input_downsample=4,
        )
        checkpoint = tmp_path / "zero.ckpt"
        save_checkpoint(checkpoint, zero_parameters(cfg), list(range(o.size)))
        out = tmp_path / "eval"
        args = [
            "eval", "--config", SMOKE, "--checkpoint", str(checkpoint),
            "--corpus", str(synth_dir / "corpus.jsonl"),
            "--lexicon", str(synth_dir / "lexicon.tsv"),
            "--patches", str(synth_dir / "patches"), "--out", str(out), *QUIET,
        ]
        assert main(args) == EXIT_OK
        for row in read_csv(out / "metrics.csv"):
            assert row["auc"] == "0.500000"
        assert read_csv(out / "summary.csv")[0]["mean_auc"] == "0.500000"

    def test_missing_checkpoint(self, synth_dir, tmp_path, capsys):
        """Test a missing checkpoint is a data error."""
        args = [
            "eval", "--checkpoint", str(tmp_path / "absent.ckpt"),
            "--corpus", str(synth_dir / "corpus.jsonl"),
            "--lexicon", str(synth_dir / "lexicon.tsv"), *QUIET,
        ]
        assert main(args) == EXIT_DATA
        assert _error(capsys)["error"] == "missing_checkpoint"


@pytest.mark.integration
class TestRun:
    def test_smoke_run(self, tmp_path, capsys):
        """Test the synthetic pipeline writes its outputs and prints the summary."""
        out = tmp_path / "run"
        assert main(["run", "--config", SMOKE, "--out", str(out), *QUIET]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert "overall" in summary
        for name in ("mined.jsonl", "split.json", "labels.json", "loss.csv", "epochs.csv",
                     "metrics.csv", "summary.csv", "roc.csv", "metrics.prom", "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["seeds"]["synth"] == 0
        assert "summary.csv" in manifest["outputs"]

    def test_same_seed_same_summary(self, tmp_path):
        """Test two runs with one seed write byte-identical summaries."""
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", SMOKE, "--seed", "3", "--out", str(out), *QUIET]) == EXIT_OK
            outputs.append((out / "summary.csv").read_bytes())
            assert (out / "manifest.json").exists()
        assert outputs[0] == outputs[1]
        first = json.loads((tmp_path / "a" / "manifest.json").read_text(encoding="utf-8"))
        second = json.loads((tmp_path / "b" / "manifest.json").read_text(encoding="utf-8"))
        assert first["seeds"] == second["seeds"] == {"split": 3, "synth": 3, "schedule": 3, "init": 3}

    def test_failed_task_exit_code(self, tmp_path, capsys):
        """Test a task failure reports the task and exits with a data error."""
        args = [
            "run", "--config", SMOKE, "--set", "synth.render_patches=false",
            "--out", str(tmp_path / "run"), *QUIET,
        ]
        assert main(args) == EXIT_DATA
        payload = _error(capsys)
        assert payload["task"] == "train"
