"""Unit tests for procedural textures and synthetic datasets."""

import numpy as np
import pytest

from src.texanom.utils.config_io import load_run_config
from src.texanom.utils.data_loader import DataLoader
from src.texanom.utils.synthetic import (
    CONFIG_NAME,
    SyntheticDefectGenerator,
    insert_flat_square,
    insert_rotated_patch,
    noise_texture,
    stripe_texture,
    write_synthetic_dataset,
)


class TestTextures:
    """Test texture generators."""

    def test_stripe_range_and_seed(self):
        """Test stripes lie in [0, 1] and depend only on the generator state."""
        a = stripe_texture((32, 48), np.random.default_rng(0))
        b = stripe_texture((32, 48), np.random.default_rng(0))
        assert a.shape == (32, 48)
        assert a.min() >= 0.0 and a.max() <= 1.0
        np.testing.assert_array_equal(a, b)

    def test_noise_texture_is_scaled(self):
        """Test band-limited noise spans exactly [0, 1]."""
        texture = noise_texture((40, 40), np.random.default_rng(1))
        assert texture.min() == 0.0
        assert texture.max() == 1.0


class TestDefects:
    """Test inserted defects."""

    def test_flat_square(self):
        """Test the square is constant and the mask marks it."""
        image = stripe_texture((64, 64), np.random.default_rng(2))
        out, mask = insert_flat_square(image, np.random.default_rng(3), size=16)
        assert mask.sum() == 256
        assert np.ptp(out[mask]) == 0.0
        np.testing.assert_array_equal(out[~mask], image[~mask])

    def test_rotated_patch(self):
        """Test the rotated patch changes only pixels inside the mask."""
        image = stripe_texture((64, 64), np.random.default_rng(4))
        out, mask = insert_rotated_patch(image, np.random.default_rng(5), size=20)
        assert mask.sum() == 400
        np.testing.assert_array_equal(out[~mask], image[~mask])
        assert not np.allclose(out[mask], image[mask])

    def test_generator_kinds(self):
        """Test unknown defect kinds are rejected."""
        with pytest.raises(ValueError):
            SyntheticDefectGenerator(kinds=("scratch",))


class TestSyntheticDataset:
    """Test the dataset writer."""

    def test_layout_and_config(self, tmp_path):
        """Test the written dataset indexes cleanly with its own config."""
        config_path = write_synthetic_dataset(
            tmp_path,
            image_size=32,
            train_count=2,
            test_good_count=1,
            defect_count=2,
            validation_count=2,
            defect_size=8,
            patch_size=16,
        )
        assert config_path == tmp_path / CONFIG_NAME
        cfg = load_run_config(config_path)
        assert len(cfg.dataset.validation) == 2
        assert cfg.inference.fusion_scales == [3]
        assert cfg.architecture.layers[0].out_channels == 8
        index = DataLoader(cfg.dataset).index
        assert len(index.train_normal) == 2
        assert len(index.test) == 3
        assert len(index.validation_defective) == 2

    def test_same_seed_same_bytes(self, tmp_path):
        """Test one seed always writes the same images."""
        write_synthetic_dataset(tmp_path / "a", seed=4, image_size=32, defect_size=8)
        write_synthetic_dataset(tmp_path / "b", seed=4, image_size=32, defect_size=8)
        for path in sorted((tmp_path / "a").rglob("*.png")):
            twin = tmp_path / "b" / path.relative_to(tmp_path / "a")
            assert path.read_bytes() == twin.read_bytes()
