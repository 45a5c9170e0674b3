"""Unit tests for full-image inference, calibration and post-processing."""

import numpy as np
import pytest
from scipy import ndimage

from src.texanom.core.network import init_model
from src.texanom.core.pyramid import Decomposer
from src.texanom.core.pipeline import (
    anomaly_map,
    binarize_and_erode,
    calibrate_threshold,
    empirical_fpr,
    normal_pixel_scores,
    patch_grid,
    reconstruct_full,
)
from src.texanom.core.similarity import covering_window_mean, cwssim_subband_map
from src.texanom.models.config import ArchitectureSpec, InferenceConfig
from src.texanom.models.errors import (
    CalibrationError,
    ContractViolationError,
    DegenerateInputError,
)
from src.texanom.models.images import AnomalyMap, AnomalyMask, GrayImage
from src.texanom.utils.synthetic import insert_flat_square, noise_texture, stripe_texture


def _identity(batch):
    return batch


def _ramp_reconstructor(batch):
    p = batch.shape[-1]
    ramp = np.add.outer(np.arange(p), np.arange(p)) / (2.0 * p)
    return np.broadcast_to(ramp, batch.shape).copy()


class TestPatchGrid:
    """Test patch placement."""

    def test_small_grid(self):
        """Test a 64x64 image with 32 patches and stride 16 gives nine positions."""
        positions = patch_grid(64, 64, 32, 16)
        assert len(positions) == 9
        assert sorted({t for t, _ in positions}) == [0, 16, 32]

    def test_edge_aligned_start(self):
        """Test a 696x1024 image gets a flush final row start."""
        positions = patch_grid(696, 1024, 256, 16)
        rows = sorted({t for t, _ in positions})
        cols = sorted({c for _, c in positions})
        assert len(rows) == 29
        assert rows[-2:] == [432, 440]
        assert len(cols) == 49
        assert len(positions) == 1421

    def test_single_patch(self):
        """Test an image the size of the patch has one position."""
        assert patch_grid(256, 256, 256, 16) == [(0, 0)]

    def test_covers_every_pixel(self):
        """Test the union of patches is the whole image."""
        covered = np.zeros((50, 70), dtype=bool)
        for t, c in patch_grid(50, 70, 16, 12):
            covered[t : t + 16, c : c + 16] = True
        assert covered.all()

    def test_image_smaller_than_patch(self):
        """Test an undersized image is degenerate."""
        with pytest.raises(DegenerateInputError):
            patch_grid(20, 64, 32, 16)


class TestReconstructFull:
    """Test overlap averaging of patch reconstructions."""

    def test_identity_is_exact(self):
        """Test an identity reconstructor returns the image unchanged."""
        data = np.random.default_rng(0).random((64, 64))
        cfg = InferenceConfig(patch_size=32, stride=16, batch_size=4)
        out = reconstruct_full(GrayImage(data=data), None, cfg, reconstructor=_identity)
        np.testing.assert_array_equal(out.data, data)

    def test_identity_on_uneven_grid(self):
        """Test identity holds to rounding when overlap counts are not powers of two."""
        data = np.random.default_rng(1).random((50, 70))
        cfg = InferenceConfig(patch_size=16, stride=5)
        out = reconstruct_full(GrayImage(data=data), None, cfg, reconstructor=_identity)
        np.testing.assert_allclose(out.data, data, atol=1e-15)

    def test_matches_naive_accumulation(self):
        """Test the weighted average against a straight accumulation loop."""
        h, w, p, s = 64, 64, 32, 16
        cfg = InferenceConfig(patch_size=p, stride=s, batch_size=3)
        image = GrayImage(data=np.zeros((h, w)))
        out = reconstruct_full(image, None, cfg, reconstructor=_ramp_reconstructor)

        ramp = _ramp_reconstructor(np.zeros((1, p, p)))[0]
        total = np.zeros((h, w))
        count = np.zeros((h, w))
        for t in range(0, h - p + 1, s):
            for c in range(0, w - p + 1, s):
                total[t : t + p, c : c + p] += ramp
                count[t : t + p, c : c + p] += 1
        assert set(np.unique(count)) == {1.0, 2.0, 4.0}
        np.testing.assert_allclose(out.data, total / count, atol=1e-12)

    def test_single_patch_is_forward_output(self):
        """Test a one-patch image equals the reconstructor output."""
        cfg = InferenceConfig(patch_size=32, stride=16)
        out = reconstruct_full(
            GrayImage(data=np.zeros((32, 32))), None, cfg, reconstructor=_ramp_reconstructor
        )
        np.testing.assert_array_equal(out.data, _ramp_reconstructor(np.zeros((1, 32, 32)))[0])

    def test_small_image_is_padded(self):
        """Test an image below the patch size is padded and cropped back."""
        data = np.random.default_rng(2).random((20, 24))
        cfg = InferenceConfig(patch_size=32, stride=16)
        out = reconstruct_full(GrayImage(data=data), None, cfg, reconstructor=_identity)
        np.testing.assert_array_equal(out.data, data)

    def test_model_reconstruction(self):
        """Test a real model gives an in-range image independent of threads."""
        m = init_model(ArchitectureSpec.from_widths((2, 3)), seed=0)
        image = GrayImage(data=np.random.default_rng(3).random((24, 20)))
        serial = reconstruct_full(image, m, InferenceConfig(patch_size=8, stride=4))
        threaded = reconstruct_full(
            image, m, InferenceConfig(patch_size=8, stride=4, threads=3, batch_size=2)
        )
        assert serial.shape == (24, 20)
        assert np.all((serial.data >= 0) & (serial.data <= 1))
        np.testing.assert_array_equal(serial.data, threaded.data)

    def test_model_rejects_patch_size(self):
        """Test a patch size the model cannot take is a contract violation."""
        m = init_model(ArchitectureSpec.from_widths((2, 3)), seed=0)
        with pytest.raises(ContractViolationError):
            reconstruct_full(
                GrayImage(data=np.zeros((20, 20))), m, InferenceConfig(patch_size=10, stride=5)
            )


class TestAnomalyMap:
    """Test the multi-scale CW-SSIM anomaly map."""

    @pytest.fixture
    def cfg(self):
        """Small fusion set with four orientations."""
        return InferenceConfig(fusion_scales=[3, 4], orientations=4)

    @pytest.fixture
    def texture(self):
        """64x64 band-limited noise texture."""
        return noise_texture((64, 64), np.random.default_rng(4))

    def test_identical_images_score_zero(self, cfg, texture):
        """Test a perfect reconstruction gives a zero map."""
        image = GrayImage(data=texture)
        scores = anomaly_map(image, image, cfg)
        assert scores.shape == (64, 64)
        assert scores.data.max() < 1e-9

    def test_identical_images_with_padding(self, cfg):
        """Test shapes that need padding also give a zero map."""
        image = GrayImage(data=noise_texture((37, 45), np.random.default_rng(5)))
        scores = anomaly_map(image, image, cfg)
        assert scores.shape == (37, 45)
        assert scores.data.max() < 1e-9

    def test_symmetric(self, cfg, texture):
        """Test swapping image and reconstruction leaves the map unchanged."""
        other = GrayImage(data=ndimage.gaussian_filter(texture, 1.0))
        image = GrayImage(data=texture)
        np.testing.assert_allclose(
            anomaly_map(image, other, cfg).data, anomaly_map(other, image, cfg).data, atol=1e-12
        )

    def test_blur_scores_higher(self, cfg, texture):
        """Test a blurred reconstruction scores above a perfect one."""
        image = GrayImage(data=texture)
        blurred = GrayImage(data=ndimage.gaussian_filter(texture, 2.0))
        blurred_score = anomaly_map(image, blurred, cfg).data.mean()
        assert blurred_score > anomaly_map(image, image, cfg).data.mean()

    def test_threads_do_not_change_result(self, texture):
        """Test per-scale threading gives a bit-identical map."""
        image = GrayImage(data=texture)
        blurred = GrayImage(data=ndimage.gaussian_filter(texture, 1.0))
        serial = anomaly_map(image, blurred, InferenceConfig(fusion_scales=[3, 4], orientations=2))
        threaded = anomaly_map(
            image, blurred, InferenceConfig(fusion_scales=[3, 4], orientations=2, threads=2)
        )
        assert serial.data.tobytes() == threaded.data.tobytes()

    def test_flat_square_stands_out(self):
        """Test a flat square in a stripe texture scores at least twice its surroundings."""
        rng = np.random.default_rng(6)
        clean = stripe_texture((128, 128), rng)
        defective, mask = insert_flat_square(clean, rng, size=64)
        cfg = InferenceConfig(fusion_scales=[3, 4, 5], orientations=4)
        scores = anomaly_map(GrayImage(data=defective), GrayImage(data=clean), cfg).data
        assert scores[mask].mean() >= 2.0 * scores[~mask].mean()

    def test_single_scale_matches_subband_oracle(self, texture):
        """Test one fused scale equals 1 - mean over subbands of covering CW-SSIM."""
        cfg = InferenceConfig(fusion_scales=[3], orientations=4)
        blurred = ndimage.gaussian_filter(texture, 1.5)
        decomposer = Decomposer(cfg.decomposer_config(3, (64, 64)))
        total = np.zeros((64, 64))
        pairs = zip(decomposer.decompose(texture), decomposer.decompose(blurred))
        for m, (xs, ys) in enumerate(pairs):
            sim = cwssim_subband_map(xs, ys, cfg.cwssim_config(), clip_window=True)
            f = decomposer.scale_factor(m)
            total += np.kron(covering_window_mean(sim), np.ones((f, f)))
        expected = np.maximum(1.0 - total / decomposer.subband_count, 0.0)
        scores = anomaly_map(GrayImage(data=texture), GrayImage(data=blurred), cfg)
        np.testing.assert_allclose(scores.data, expected, atol=1e-12)

    def test_shape_mismatch(self, cfg):
        """Test differently shaped images are rejected."""
        with pytest.raises(ContractViolationError):
            anomaly_map(GrayImage(data=np.zeros((16, 16))), GrayImage(data=np.zeros((16, 8))), cfg)


class TestCalibration:
    """Test threshold calibration."""

    def test_uniform_scores(self):
        """Test uniform scores give gamma near 0.95."""
        scores = np.random.default_rng(7).random(100_000)
        assert calibrate_threshold(scores, 0.05) == pytest.approx(0.95, abs=0.01)

    def test_fpr_at_target(self):
        """Test 10,000 distinct scores reach an FPR within 0.005 of the target."""
        scores = np.random.default_rng(8).random(10_000)
        gamma = calibrate_threshold(scores, 0.05)
        fpr = empirical_fpr(scores, gamma)
        assert abs(fpr - 0.05) <= 0.005
        assert fpr <= 0.05

    def test_constant_scores(self):
        """Test tied scores step just above the tie so nothing is flagged."""
        gamma = calibrate_threshold(np.full(100, 0.3), 0.05)
        assert gamma == np.nextafter(0.3, np.inf)
        assert empirical_fpr(np.full(100, 0.3), gamma) == 0.0

    def test_empty_pool(self):
        """Test calibrating with no normal pixels fails."""
        with pytest.raises(CalibrationError):
            calibrate_threshold(np.zeros(0))

    def test_normal_pixel_pooling(self):
        """Test only ground-truth normal pixels are pooled."""
        maps = [
            AnomalyMap(data=np.arange(4.0).reshape(2, 2)),
            AnomalyMap(data=np.full((1, 3), 9.0)),
        ]
        masks = [
            AnomalyMask(data=np.array([[True, False], [False, False]])),
            AnomalyMask(data=np.zeros((1, 3))),
        ]
        pooled = normal_pixel_scores(maps, masks)
        np.testing.assert_array_equal(pooled, [1.0, 2.0, 3.0, 9.0, 9.0, 9.0])

    def test_pooling_shape_mismatch(self):
        """Test a map and mask of different shapes are rejected."""
        with pytest.raises(ContractViolationError):
            normal_pixel_scores(
                [AnomalyMap(data=np.zeros((2, 2)))], [AnomalyMask(data=np.zeros((2, 3)))]
            )


class TestBinarizeAndErode:
    """Test thresholding and morphology."""

    def test_zero_map(self):
        """Test an all-zero map yields an empty mask."""
        mask = binarize_and_erode(AnomalyMap(data=np.zeros((20, 20))), 0.1, radius=3)
        assert mask.positive_count == 0

    def test_full_frame_erosion(self):
        """Test erosion keeps exactly the pixels whose disk fits in the frame."""
        radius = 10
        mask = binarize_and_erode(AnomalyMap(data=np.ones((100, 100))), 0.5, radius=radius)
        offsets = [
            (dy, dx)
            for dy in range(-radius, radius + 1)
            for dx in range(-radius, radius + 1)
            if dy * dy + dx * dx <= radius * radius
        ]
        expected = np.zeros((100, 100), dtype=bool)
        for i in range(100):
            for j in range(100):
                expected[i, j] = all(
                    0 <= i + dy < 100 and 0 <= j + dx < 100 for dy, dx in offsets
                )
        np.testing.assert_array_equal(mask.data, expected)
        assert mask.positive_count == 80 * 80

    def test_isolated_pixel_removed(self):
        """Test erosion removes a lone above-threshold pixel."""
        data = np.zeros((30, 30))
        data[15, 15] = 1.0
        assert binarize_and_erode(AnomalyMap(data=data), 0.5, radius=1).positive_count == 0

    def test_radius_zero_is_threshold_only(self):
        """Test radius 0 applies only the threshold, using score >= gamma."""
        data = np.array([[0.1, 0.5, 0.9]])
        mask = binarize_and_erode(AnomalyMap(data=data), 0.5, radius=0)
        np.testing.assert_array_equal(mask.data, [[False, True, True]])

    def test_monotone_in_gamma_and_erosion(self):
        """Test raising gamma or eroding never grows the mask."""
        data = ndimage.gaussian_filter(np.random.default_rng(9).random((60, 60)), 3.0)
        anomaly = AnomalyMap(data=data)
        previous = None
        for gamma in np.linspace(data.min(), data.max(), 8):
            raw = binarize_and_erode(anomaly, gamma, radius=0).data
            eroded = binarize_and_erode(anomaly, gamma, radius=2).data
            assert not np.any(eroded & ~raw)
            if previous is not None:
                assert not np.any(raw & ~previous)
            previous = raw

    def test_dilation_of_single_pixel(self):
        """Test dilation stamps the disk around a pixel."""
        data = np.zeros((11, 11))
        data[5, 5] = 1.0
        mask = binarize_and_erode(AnomalyMap(data=data), 0.5, radius=2, morphology="dilation")
        assert mask.positive_count == 13

    def test_closing_fills_hole(self):
        """Test closing fills a one-pixel hole and keeps the frame."""
        data = np.ones((20, 20))
        data[10, 10] = 0.0
        mask = binarize_and_erode(AnomalyMap(data=data), 0.5, radius=2, morphology="closing")
        assert mask.data.all()

    def test_opening_removes_speck(self):
        """Test opening removes a small speck but keeps a large block."""
        data = np.zeros((40, 40))
        data[2, 2] = 1.0
        data[15:35, 15:35] = 1.0
        mask = binarize_and_erode(AnomalyMap(data=data), 0.5, radius=2, morphology="opening")
        assert not mask.data[2, 2]
        assert mask.data[17:33, 17:33].all()
        assert not mask.data[:, :14].any()
