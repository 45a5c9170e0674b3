"""Integration tests for the command-line entry point."""

import json
import sys

import numpy as np
import pytest
import tomli_w

from src.texanom.cli.commands import CALIBRATION_NAME, LOSS_CSV_NAME, MODEL_NAME, REPORT_NAME
from src.texanom.cli.main import main
from src.texanom.core.detector import AnomalyDetector
from src.texanom.core.network import init_model
from src.texanom.models.config import ArchitectureSpec
from src.texanom.models.images import AnomalyMask
from src.texanom.models.results import CalibrationRecord, EvalReport
from src.texanom.utils.config_io import FROZEN_CONFIG_NAME, load_run_config
from src.texanom.utils.image_io import load_image, load_mask, read_anomaly_map, save_mask
from src.texanom.utils.model_io import save_model
from src.texanom.utils.synthetic import CONFIG_NAME, write_synthetic_dataset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _rewrite_config(path, updates):
    """Merge ``updates`` section by section into a TOML config file."""
    with open(path, "rb") as f:
        document = tomllib.load(f)
    for key, value in updates.items():
        if isinstance(value, dict):
            document.setdefault(key, {}).update(value)
        else:
            document[key] = value
    with open(path, "wb") as f:
        tomli_w.dump(document, f)
    return path


@pytest.mark.integration
class TestCli:
    """Test train, score, calibrate, evaluate and reconstruct end to end."""

    @pytest.fixture(scope="class")
    def run(self, tmp_path_factory):
        """Tiny synthetic dataset and a model trained on it through the CLI."""
        root = tmp_path_factory.mktemp("cli") / "data"
        config = write_synthetic_dataset(
            root,
            seed=1,
            image_size=32,
            train_count=2,
            test_good_count=1,
            defect_count=2,
            validation_count=2,
            defect_size=8,
            patch_size=32,
        )
        _rewrite_config(
            config,
            {
                "output_dir": "run",
                "architecture": {"widths": [4, 8]},
                "train": {"loss": "mse", "epochs": 2, "patch_count": 8, "batch_size": 4},
                "inference": {"orientations": 2},
            },
        )
        assert main(["train", "--config", str(config)]) == 0
        return config

    def test_train_outputs(self, run):
        """Test the model, one loss row per epoch and the frozen config."""
        out = run.parent / "run"
        assert (out / MODEL_NAME).is_file()
        rows = (out / LOSS_CSV_NAME).read_text(encoding="utf-8").splitlines()
        assert rows[0] == "epoch,loss,learning_rate"
        assert [row.split(",")[0] for row in rows[1:]] == ["0", "1"]
        assert load_run_config(out / FROZEN_CONFIG_NAME) == load_run_config(run)

    def test_retrain_same_seed_same_csv(self, run, tmp_path):
        """Test a second run with the same seed writes an identical loss CSV."""
        assert main(["train", "--config", str(run), "--out", str(tmp_path)]) == 0
        first = (run.parent / "run" / LOSS_CSV_NAME).read_bytes()
        assert (tmp_path / LOSS_CSV_NAME).read_bytes() == first

    def test_score_writes_map_and_empty_mask(self, run, tmp_path):
        """Test the map file parses back and a huge gamma gives an empty mask."""
        image_path = run.parent / "test" / "flat" / "000.png"
        out = tmp_path / "scores.tam"
        code = main(
            [
                "score",
                "--config",
                str(run),
                "--image",
                str(image_path),
                "--out",
                str(out),
                "--gamma",
                "1e9",
            ]
        )
        assert code == 0
        assert (tmp_path / "scores_preview.png").is_file()
        assert load_mask(tmp_path / "scores_mask.png").positive_count == 0

        cfg = load_run_config(run)
        detector = AnomalyDetector.from_file(cfg.output_dir / MODEL_NAME, cfg.inference)
        expected = detector.score(load_image(image_path)).data.astype(np.float32)
        np.testing.assert_array_equal(read_anomaly_map(out).data, expected)

    def test_calibrate_then_evaluate(self, run, tmp_path):
        """Test evaluation picks up the calibrated gamma and writes a valid report."""
        out = run.parent / "run"
        assert main(["calibrate", "--config", str(run)]) == 0
        record = CalibrationRecord.model_validate_json(
            (out / CALIBRATION_NAME).read_text(encoding="utf-8")
        )
        assert record.achieved_fpr <= record.target_fpr

        maps = tmp_path / "maps"
        assert main(["evaluate", "--config", str(run), "--maps-dir", str(maps)]) == 0
        report = EvalReport.model_validate_json((out / REPORT_NAME).read_text(encoding="utf-8"))
        assert report.gamma == record.gamma
        assert report.image_count == 3
        assert len(report.coverages) == 2
        assert len(list(maps.glob("*.tam"))) == 3

    def test_evaluate_explicit_gamma(self, run, tmp_path):
        """Test --gamma wins over the calibration file."""
        out = tmp_path / "report.json"
        assert main(["evaluate", "--config", str(run), "--gamma", "0", "--out", str(out)]) == 0
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["gamma"] == 0.0
        assert len(report["coverages"]) == 2

    def test_reconstruct(self, run, tmp_path):
        """Test the reconstruction PNG and its lossless copy."""
        out = tmp_path / "recon.png"
        code = main(
            [
                "reconstruct",
                "--config",
                str(run),
                "--image",
                str(run.parent / "train" / "good" / "001.png"),
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert load_image(out).shape == (32, 32)
        lossless = read_anomaly_map(tmp_path / "recon.tam").data
        assert lossless.min() >= 0.0 and lossless.max() <= 1.0

    def test_corrupt_model_exit_code(self, run, tmp_path, capsys):
        """Test an unreadable model file is a usage error."""
        model = tmp_path / "broken.cwae"
        model.write_bytes(b"not a model")
        code = main(
            [
                "score",
                "--config",
                str(run),
                "--model",
                str(model),
                "--image",
                str(run.parent / "train" / "good" / "000.png"),
                "--out",
                str(tmp_path / "x.tam"),
            ]
        )
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_model_exit_code(self, run, tmp_path):
        """Test a missing model file is a usage error."""
        code = main(
            [
                "calibrate",
                "--config",
                str(run),
                "--model",
                str(tmp_path / "absent.cwae"),
            ]
        )
        assert code == 2


@pytest.mark.integration
class TestCliErrors:
    """Test configuration errors and the synth command."""

    def test_missing_dataset_names_field(self, tmp_path, capsys):
        """Test a missing dataset exits 2 and names the field."""
        config = tmp_path / CONFIG_NAME
        config.write_text('[dataset]\nroot = "missing"\n', encoding="utf-8")
        assert main(["train", "--config", str(config)]) == 2
        assert "dataset.root" in capsys.readouterr().err

    def test_unknown_key_exit_code(self, tmp_path, capsys):
        """Test an unknown config key is reported with its path."""
        (tmp_path / "data").mkdir()
        config = tmp_path / CONFIG_NAME
        config.write_text('[dataset]\nroot = "data"\n\n[train]\nepoch = 3\n', encoding="utf-8")
        assert main(["train", "--config", str(config)]) == 2
        assert "train.epoch" in capsys.readouterr().err

    def test_train_requires_config(self):
        """Test train without --config is a usage error."""
        assert main(["train"]) == 2

    def test_calibrate_without_validation(self, tmp_path):
        """Test calibration needs validation pairs."""
        (tmp_path / "data").mkdir()
        config = tmp_path / CONFIG_NAME
        config.write_text('[dataset]\nroot = "data"\n', encoding="utf-8")
        assert main(["calibrate", "--config", str(config), "--model", "x.cwae"]) == 2

    def test_synth(self, tmp_path):
        """Test the synth command writes a dataset whose config loads."""
        out = tmp_path / "synthetic"
        assert main(["synth", "--out", str(out), "--seed", "3"]) == 0
        cfg = load_run_config(out / CONFIG_NAME)
        assert cfg.dataset.root == out.resolve()
        assert len(cfg.dataset.validation) == 4
        assert len(list((out / "train" / "good").glob("*.png"))) == 10


@pytest.mark.integration
class TestCliRuntimeErrors:
    """Test numerical failures exit 3 and dataset errors exit 2."""

    @pytest.fixture
    def config(self, tmp_path):
        """Tiny dataset whose config trains and scores 32x32 patches."""
        config = write_synthetic_dataset(
            tmp_path / "data",
            seed=2,
            image_size=32,
            train_count=2,
            test_good_count=1,
            defect_count=2,
            validation_count=2,
            defect_size=8,
            patch_size=32,
        )
        return _rewrite_config(
            config,
            {
                "output_dir": "run",
                "architecture": {"widths": [4, 8]},
                "train": {"loss": "mse", "epochs": 2, "patch_count": 8, "batch_size": 4},
                "inference": {"orientations": 2},
            },
        )

    @pytest.fixture
    def model_path(self, tmp_path):
        """Untrained model matching the tiny config."""
        model = init_model(ArchitectureSpec.from_widths((4, 8)), seed=0)
        return save_model(model, tmp_path / MODEL_NAME)

    def test_divergent_training_exit_code(self, config, capsys):
        """Test a learning rate that blows up the parameters exits 3."""
        _rewrite_config(config, {"train": {"learning_rate": 1e300}})
        assert main(["train", "--config", str(config)]) == 3
        assert "error:" in capsys.readouterr().err
        assert not (config.parent / "run" / MODEL_NAME).exists()

    def test_calibration_without_normal_pixels(self, config, model_path, capsys):
        """Test all-anomalous validation masks exit 3."""
        for _, mask_path in load_run_config(config).dataset.validation:
            save_mask(AnomalyMask(data=np.ones((32, 32), dtype=bool)), mask_path)
        code = main(["calibrate", "--config", str(config), "--model", str(model_path)])
        assert code == 3
        assert "normal pixels" in capsys.readouterr().err

    def test_missing_ground_truth_exit_code(self, config, model_path, capsys):
        """Test a defect image without its mask exits 2 and names the mask."""
        (config.parent / "ground_truth" / "flat" / "000_mask.png").unlink()
        code = main(["evaluate", "--config", str(config), "--model", str(model_path)])
        assert code == 2
        assert "000_mask.png" in capsys.readouterr().err
