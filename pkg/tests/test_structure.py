"""Self-similarity, novelty, boundary picking, and Hu shape signatures."""

import numpy as np
import pytest

from songgraph.conlon import ConlonImage
from songgraph.errors import EmptyImageError
from songgraph.structure import (
    NoveltyCurve,
    checkerboard_kernel,
    compute_ssm,
    default_novelty_threshold,
    detect_boundaries,
    detect_repetitions,
    hu_distance,
    hu_signature,
    novelty,
)

cv2 = pytest.importorskip("cv2")


def brute_force_novelty(ssm: np.ndarray, half_width: int, sigma: float) -> np.ndarray:
    """Direct evaluation of the kernel correlation, used as the oracle.

    Out-of-range indices clamp to the matrix edge, matching the library's
    replication convention.
    """
    n = ssm.shape[0]
    out = np.zeros(n)
    for m in range(n):
        for a in range(-half_width, half_width + 1):
            for b in range(-half_width, half_width + 1):
                i = min(max(m + a, 0), n - 1)
                j = min(max(m + b, 0), n - 1)
                taper = np.exp(-(a * a + b * b) / (2.0 * half_width * sigma * sigma))
                out[m] += np.sign(a) * np.sign(b) * taper * ssm[i, j]
    return out


class TestSsm:
    def test_identical_latents_give_one(self):
        z = np.tile([1.0, 2.0, 3.0], (4, 1))
        assert np.allclose(compute_ssm(z), 1.0, atol=1e-12)

    def test_opposite_latents_give_zero(self):
        z = np.array([[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]])
        assert abs(compute_ssm(z)[0, 1]) < 1e-12

    def test_orthogonal_latents_give_half(self):
        z = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert abs(compute_ssm(z)[0, 1] - 0.5) < 1e-12

    def test_zero_vector_convention(self):
        z = np.array([[0.0, 0.0], [1.0, 1.0]])
        ssm = compute_ssm(z)
        assert ssm[0, 1] == 0.5
        assert ssm[0, 0] == 1.0

    def test_random_invariants(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n = int(rng.integers(1, 64))
            ssm = compute_ssm(rng.normal(size=(n, 8)))
            assert np.array_equal(ssm, ssm.T)
            assert np.allclose(np.diag(ssm), 1.0, atol=1e-9)
            assert ssm.min() >= -1e-9 and ssm.max() <= 1 + 1e-9


class TestKernel:
    def test_zero_row_and_column(self):
        k = checkerboard_kernel(3, 0.7)
        assert not k[3].any() and not k[:, 3].any()

    def test_sum_is_zero(self):
        for half_width, sigma in [(1, 1.0), (4, 0.5), (8, 2.0)]:
            assert abs(checkerboard_kernel(half_width, sigma).sum()) < 1e-12

    def test_known_entry(self):
        k = checkerboard_kernel(2, 1.0)
        assert abs(k[3, 3] - np.exp(-0.5)) < 1e-12

    def test_odd_symmetry(self):
        k = checkerboard_kernel(4, 0.8)
        assert np.allclose(k[::-1, :], -k)
        assert np.allclose(k[:, ::-1], -k)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            checkerboard_kernel(0, 1.0)
        with pytest.raises(ValueError):
            checkerboard_kernel(2, 0.0)


class TestNovelty:
    def test_constant_ssm_is_zero(self):
        curve = novelty(np.full((20, 20), 0.7), 4, 1.0)
        assert np.max(np.abs(curve.values)) < 1e-12

    def test_two_block_boundary(self):
        ssm = np.zeros((16, 16))
        ssm[:8, :8] = 1.0
        ssm[8:, 8:] = 1.0
        curve = novelty(ssm, 4, 1.0)
        assert int(np.argmax(curve.values)) in (7, 8, 9)
        assert np.allclose(curve.values, brute_force_novelty(ssm, 4, 1.0), atol=1e-12)

    def test_single_bar(self):
        curve = novelty(np.ones((1, 1)), 2, 1.0)
        assert curve.values.shape == (1,) and abs(curve.values[0]) < 1e-12

    def test_matches_brute_force_on_random(self):
        rng = np.random.default_rng(4)
        ssm = compute_ssm(rng.normal(size=(12, 6)))
        curve = novelty(ssm, 3, 0.5)
        assert np.allclose(curve.values, brute_force_novelty(ssm, 3, 0.5), atol=1e-12)


class TestBoundaries:
    def test_strictly_increasing_keeps_only_zero(self):
        assert detect_boundaries(np.arange(10.0), threshold=-1) == [0]

    def test_single_peak(self):
        assert detect_boundaries(np.array([0.0, 5.0, 0.0]), 1.0) == [0, 1]

    def test_plateau_keeps_leftmost(self):
        assert detect_boundaries(np.array([0.0, 5.0, 5.0, 0.0]), 1.0) == [0, 1]

    def test_threshold_is_strict(self):
        assert detect_boundaries(np.array([0.0, 5.0, 0.0]), 5.0) == [0]

    def test_output_sorted_and_contains_zero(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            curve = rng.normal(size=30)
            picks = detect_boundaries(curve, 0.0)
            assert picks == sorted(set(picks))
            assert picks[0] == 0

    def test_accepts_novelty_curve(self):
        curve = NoveltyCurve(np.array([0.0, 3.0, 0.0]), 1, 1.0)
        assert detect_boundaries(curve, 1.0) == [0, 1]
        assert default_novelty_threshold(curve) == pytest.approx(1.0 + 0.5 * curve.values.std())


class TestRepetitions:
    def test_thresholding(self):
        ssm = np.eye(3)
        ssm[0, 2] = ssm[2, 0] = 0.9
        assert detect_repetitions(ssm, 0.8) == [(0, 2)]

    def test_strict_inequality(self):
        ssm = np.eye(2)
        ssm[0, 1] = ssm[1, 0] = 0.8
        assert detect_repetitions(ssm, 0.8) == []


def block_image(size: int, value: float = 1.0) -> np.ndarray:
    img = np.zeros((128, 48))
    img[10 : 10 + size, 5 : 5 + min(size, 43)] = value
    return img


def line_image(length: int = 16) -> np.ndarray:
    img = np.zeros((128, 48))
    for k in range(length):
        img[20 + k, 5 + k] = 1.0
    return img


class TestHu:
    def test_matches_opencv_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            img = np.zeros((128, 48))
            for _ in range(25):
                img[rng.integers(0, 128), rng.integers(0, 48)] = rng.integers(1, 128)
            mine = hu_signature(img).moments
            ref = cv2.HuMoments(cv2.moments(img.astype(np.float64))).ravel()
            assert np.allclose(mine, ref, rtol=1e-9, atol=1e-30)

    def test_translation_invariance(self):
        img = ConlonImage.zeros()
        img.velocity[40:48, 10:18] = 90.0
        img.duration[40:48, 10:18] = 1.0
        shifted = ConlonImage.zeros()
        shifted.velocity[43:51, 12:20] = 90.0
        shifted.duration[43:51, 12:20] = 1.0
        a, b = hu_signature(img), hu_signature(shifted)
        assert np.max(np.abs(a.moments - b.moments)) < 1e-9

    def test_scale_normalization_on_doubled_blocks(self):
        # oracle-computed discretization gaps: 16 vs 32 sits within 1e-3,
        # 8 vs 16 differs by ~1.95e-3 (frozen from the moment formulas)
        d_16_32 = np.abs(hu_signature(block_image(16)).moments - hu_signature(block_image(32)).moments)
        assert d_16_32.max() < 1e-3
        d_8_16 = np.abs(hu_signature(block_image(8)).moments - hu_signature(block_image(16)).moments)
        assert d_8_16.max() == pytest.approx(1.953125e-3, rel=1e-6)

    def test_empty_image_rejected(self):
        with pytest.raises(EmptyImageError):
            hu_signature(ConlonImage.zeros())

    def test_single_cell_is_degenerate(self):
        img = np.zeros((128, 48))
        img[60, 10] = 100.0
        sig = hu_signature(img)
        assert sig.degenerate
        assert np.array_equal(sig.moments, np.zeros(7))

    def test_distance_identity_and_symmetry(self):
        a, b = hu_signature(block_image(16)), hu_signature(line_image())
        assert hu_distance(a, a) == 0.0
        assert hu_distance(a, b) == hu_distance(b, a)
        assert hu_distance(a, b) >= 0.0

    def test_different_shapes_exceed_edge_threshold(self):
        a, b = hu_signature(block_image(16)), hu_signature(line_image())
        assert hu_distance(a, b) > 0.1

    def test_zero_terms_skipped(self):
        a = hu_signature(block_image(16))
        degenerate = hu_signature(np.where(block_image(16) > 0, block_image(16), 0))
        # squares are symmetric: several invariants are exactly 0, skipped
        assert np.isfinite(hu_distance(a, degenerate))
