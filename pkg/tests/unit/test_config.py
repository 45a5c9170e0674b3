"""Unit tests for configuration schemas, result models and TOML config files."""

import pytest
from pydantic import ValidationError

from src.texanom.models.config import (
    ArchitectureSpec,
    DecomposerConfig,
    InferenceConfig,
    LayerSpec,
    RunConfig,
    TrainConfig,
)
from src.texanom.models.errors import ConfigurationError
from src.texanom.models.results import CalibrationRecord, EvalReport, TrainingHistory
from src.texanom.utils.config_io import (
    config_hash,
    load_run_config,
    write_run_config,
)


class TestDecomposerConfig:
    """Test DecomposerConfig model."""

    def test_defaults(self):
        """Test six orientations and five scales on 256x256 input."""
        cfg = DecomposerConfig()
        assert (cfg.orientations, cfg.scales, cfg.input_shape) == (6, 5, (256, 256))
        assert cfg.subband_count == 20

    def test_square_shorthand(self):
        """Test input_size and an integer input_shape expand to squares."""
        assert DecomposerConfig(input_size=64).input_shape == (64, 64)
        assert DecomposerConfig(input_shape=32).input_shape == (32, 32)

    def test_invalid_values(self):
        """Test out-of-range values are rejected."""
        with pytest.raises(ValidationError):
            DecomposerConfig(orientations=0)
        with pytest.raises(ValidationError):
            DecomposerConfig(scales=1)
        with pytest.raises(ValidationError):
            DecomposerConfig(first_subband="wavelet")

    def test_frozen(self):
        """Test configs are immutable."""
        with pytest.raises(ValidationError):
            DecomposerConfig().scales = 3


class TestArchitectureSpec:
    """Test ArchitectureSpec model."""

    def test_widths_expand_to_mirror(self):
        """Test the compact widths form builds a mirrored conv/deconv chain."""
        spec = ArchitectureSpec(widths=[4, 8])
        assert [layer.kind for layer in spec.layers] == ["conv", "conv", "deconv", "deconv"]
        assert [layer.out_channels for layer in spec.layers] == [4, 8, 4, 1]
        assert spec.layers[-1].activation == "sigmoid"
        assert spec.layer_names() == ["encoder.0", "encoder.1", "decoder.0", "decoder.1"]

    def test_spatial_trace(self):
        """Test exact sizes through the default network."""
        spec = ArchitectureSpec.default()
        assert spec.spatial_trace(256) == [256, 128, 64, 32, 16, 8, 16, 32, 64, 128, 256]
        assert spec.spatial_trace(100) is None

    def test_broken_channel_chain(self):
        """Test mismatched channel counts are rejected."""
        with pytest.raises(ValidationError):
            ArchitectureSpec(
                layers=[
                    LayerSpec(kind="conv", in_channels=1, out_channels=4),
                    LayerSpec(kind="deconv", in_channels=5, out_channels=1),
                ]
            )

    def test_decoder_before_encoder(self):
        """Test deconv layers may not precede conv layers."""
        with pytest.raises(ValidationError):
            ArchitectureSpec(
                layers=[
                    LayerSpec(kind="deconv", in_channels=1, out_channels=4),
                    LayerSpec(kind="conv", in_channels=4, out_channels=1),
                ]
            )


class TestTrainAndInferenceConfig:
    """Test TrainConfig and InferenceConfig models."""

    def test_train_defaults(self):
        """Test the default training hyperparameters."""
        cfg = TrainConfig()
        assert cfg.loss == "cwssim"
        assert cfg.epochs == 400
        assert cfg.batch_size == 8
        assert cfg.patch_count == 50_000

    def test_patch_decomposer(self):
        """Test the loss decomposer follows the patch size."""
        cfg = TrainConfig(patch_size=64, decomposer=DecomposerConfig(scales=3))
        assert cfg.decomposer_for_patches().input_shape == (64, 64)
        assert cfg.decomposer_for_patches().scales == 3

    def test_unknown_loss(self):
        """Test an unknown loss name fails validation."""
        with pytest.raises(ValidationError):
            TrainConfig(loss="l1")

    def test_inference_defaults(self):
        """Test the default inference settings."""
        cfg = InferenceConfig()
        assert cfg.stride == 16
        assert cfg.fusion_scales == [7, 8, 9]
        assert cfg.target_fpr == 0.05
        assert cfg.erosion_radius == 10

    def test_stride_above_patch(self):
        """Test a stride larger than the patch is rejected."""
        with pytest.raises(ValidationError):
            InferenceConfig(patch_size=16, stride=32)

    def test_fusion_scale_below_two(self):
        """Test fused scale counts below 2 are rejected."""
        with pytest.raises(ValidationError):
            InferenceConfig(fusion_scales=[1, 3])

    def test_extra_fields_forbidden(self):
        """Test unknown keys are reported."""
        with pytest.raises(ValidationError):
            InferenceConfig(strides=8)


class TestRunConfigFiles:
    """Test TOML loading, overrides and frozen copies."""

    @pytest.fixture
    def config_file(self, tmp_path):
        """Minimal run configuration next to an empty dataset directory."""
        (tmp_path / "data").mkdir()
        path = tmp_path / "run.toml"
        path.write_text(
            'seed = 3\noutput_dir = "out"\n\n[dataset]\nroot = "data"\n\n'
            "[train]\nloss = \"mse\"\nepochs = 2\n",
            encoding="utf-8",
        )
        return path

    def test_relative_paths_resolve_against_file(self, config_file):
        """Test relative paths are taken from the config file's directory."""
        cfg = load_run_config(config_file)
        assert cfg.dataset.root == config_file.resolve().parent / "data"
        assert cfg.output_dir == config_file.resolve().parent / "out"

    def test_seed_fills_train_config(self, config_file):
        """Test the top-level seed becomes the training seed."""
        cfg = load_run_config(config_file)
        assert cfg.train_config().seed == 3

    def test_overrides(self, config_file):
        """Test nested overrides replace file values."""
        cfg = load_run_config(config_file, {"train": {"epochs": 5}, "inference": {"threads": 2}})
        assert cfg.train.epochs == 5
        assert cfg.train.loss == "mse"
        assert cfg.inference.threads == 2

    def test_frozen_copy_round_trip(self, config_file, tmp_path):
        """Test a written config loads back to an equal RunConfig."""
        cfg = load_run_config(config_file)
        frozen = write_run_config(cfg, tmp_path / "frozen" / "config.frozen.toml")
        assert load_run_config(frozen) == cfg
        assert config_hash(load_run_config(frozen)) == config_hash(cfg)

    def test_hash_changes_with_values(self, config_file):
        """Test different settings hash differently."""
        a = load_run_config(config_file)
        b = load_run_config(config_file, {"seed": 4})
        assert config_hash(a) != config_hash(b)

    def test_missing_dataset_names_field(self, tmp_path):
        """Test a missing dataset root is reported with its field path."""
        path = tmp_path / "bad.toml"
        path.write_text('[dataset]\nroot = "nowhere"\n', encoding="utf-8")
        with pytest.raises(ValidationError) as exc_info:
            load_run_config(path)
        assert exc_info.value.errors()[0]["loc"] == ("dataset", "root")

    def test_invalid_toml(self, tmp_path):
        """Test malformed TOML is a configuration error."""
        path = tmp_path / "broken.toml"
        path.write_text("seed = = 1\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_run_config(path)

    def test_missing_file(self, tmp_path):
        """Test a missing config file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_run_config(tmp_path / "absent.toml")

    def test_run_config_requires_dataset(self):
        """Test the dataset section is mandatory."""
        with pytest.raises(ValidationError):
            RunConfig()


class TestResultModels:
    """Test run artifact models."""

    def test_history_csv(self):
        """Test one CSV row per epoch with exact values."""
        history = TrainingHistory(
            loss="mse", epoch_losses=[0.5, 0.25], learning_rates=[1e-3, 1e-3]
        )
        assert history.to_csv() == (
            "epoch,loss,learning_rate\n0,0.5,0.001\n1,0.25,0.001\n"
        )
        assert history.epochs == 2

    def test_history_lengths_must_match(self):
        """Test mismatched history columns are rejected."""
        with pytest.raises(ValidationError):
            TrainingHistory(loss="mse", epoch_losses=[0.5], learning_rates=[])

    def test_calibration_record_json(self):
        """Test the record serializes to JSON and back."""
        record = CalibrationRecord(
            gamma=0.42, target_fpr=0.05, achieved_fpr=0.049, normal_pixels=1000
        )
        assert CalibrationRecord.model_validate_json(record.model_dump_json()) == record

    def test_report_rejects_bad_coverage(self):
        """Test coverages outside [0, 1] are rejected."""
        with pytest.raises(ValidationError):
            EvalReport(auc=0.9, normalized_auc_03=0.8, coverages=[1.2])

    def test_report_defaults(self):
        """Test the report carries the coverage definition."""
        report = EvalReport(auc=0.9, normalized_auc_03=0.8)
        assert report.fpr_max == 0.3
        assert "8-connected" in report.coverage_definition
        assert report.median_coverage is None
