import math

import numpy as np
import pytest

from panosphere.geometry import EulerAngles, Rotation3, rotation_matrix
from panosphere.metrics import (
    load_image,
    poses_from_route,
    psnr,
    read_image_binary,
    rotation_error,
    ssim,
    translation_error,
    write_image_binary,
)
from panosphere.plucker import CameraPose


def pose_seq(*items):
    return [(rotation_matrix(EulerAngles(*e)), np.asarray(t, dtype=float)) for e, t in items]


class TestRotationError:
    def test_identical_sequences(self):
        seq = pose_seq(((0.1, 0.2, 0.3), (0, 0, 0)), ((1.0, 0, 0), (1, 0, 0)))
        assert rotation_error(seq, seq) == 0.0

    def test_quarter_yaw_is_half_pi(self):
        gt = pose_seq(((0, 0, 0), (0, 0, 0)))
        est = pose_seq(((math.pi / 2, 0, 0), (0, 0, 0)))
        assert rotation_error(gt, est) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_mean_over_frames(self):
        gt = pose_seq(((0, 0, 0), (0, 0, 0)), ((0, 0, 0), (0, 0, 0)))
        est = pose_seq(((0, 0, 0), (0, 0, 0)), ((math.pi / 2, 0, 0), (0, 0, 0)))
        assert rotation_error(gt, est) == pytest.approx(math.pi / 4, abs=1e-12)

    def test_invariant_under_shared_rotation(self, rng):
        gt = pose_seq(((0.3, -0.1, 0.2), (0, 0, 0)), ((0.9, 0.4, -0.3), (0, 0, 0)))
        est = pose_seq(((0.1, 0.0, 0.5), (0, 0, 0)), ((0.7, -0.2, 0.1), (0, 0, 0)))
        g = rotation_matrix(EulerAngles(*rng.uniform(-2, 2, size=3)))
        gt_rot = [(Rotation3(g.matrix @ r.matrix), t) for r, t in gt]
        est_rot = [(Rotation3(g.matrix @ r.matrix), t) for r, t in est]
        assert rotation_error(gt_rot, est_rot) == pytest.approx(
            rotation_error(gt, est), abs=1e-9
        )

    def test_length_mismatch(self):
        seq = pose_seq(((0, 0, 0), (0, 0, 0)))
        with pytest.raises(ValueError, match="length"):
            rotation_error(seq, seq * 2)


class TestTranslationError:
    def test_identical(self):
        seq = pose_seq(((0, 0, 0), (1, 2, 3)))
        assert translation_error(seq, seq) == 0.0

    def test_constant_offset(self):
        gt = pose_seq(((0, 0, 0), (0, 0, 0)), ((0, 0, 0), (1, 0, 0)))
        est = pose_seq(((0, 0, 0), (0.1, 0, 0)), ((0, 0, 0), (1.1, 0, 0)))
        assert translation_error(gt, est) == pytest.approx(0.1, abs=1e-12)

    def test_scale_normalization_aligns_similar_paths(self):
        gt = pose_seq(*[((0, 0, 0), (0.5 * i, 0, 0)) for i in range(5)])  # 2 m
        est = pose_seq(*[((0, 0, 0), (0.25 * i, 0, 0)) for i in range(5)])  # 1 m
        assert translation_error(gt, est, normalize=True) == pytest.approx(0.0, abs=1e-12)
        assert translation_error(gt, est, normalize=False) > 0.0

    def test_normalizing_zero_length_fails(self):
        seq = pose_seq(((0, 0, 0), (1, 1, 1)), ((0, 0, 0), (1, 1, 1)))
        with pytest.raises(ValueError, match="zero-length"):
            translation_error(seq, seq, normalize=True)

    def test_invariant_under_shared_translation(self):
        gt = pose_seq(((0, 0, 0), (0, 0, 0)), ((0, 0, 0), (1, 0, 0)))
        est = pose_seq(((0, 0, 0), (0, 0.3, 0)), ((0, 0, 0), (1, 0.3, 0)))
        base = translation_error(gt, est)
        shift = np.array([5.0, -2.0, 1.0])
        gt2 = [(r, t + shift) for r, t in gt]
        est2 = [(r, t + shift) for r, t in est]
        assert translation_error(gt2, est2) == pytest.approx(base, abs=1e-12)

    def test_poses_from_route(self):
        poses = [CameraPose((1, 2, 3), EulerAngles(0.5, 0, 0))]
        seq = poses_from_route(poses)
        assert np.array_equal(seq[0][1], [1, 2, 3])
        assert np.allclose(seq[0][0].matrix, rotation_matrix(EulerAngles(0.5, 0, 0)).matrix)


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        a = rng.uniform(0, 1, size=(16, 16))
        assert psnr(a, a) == math.inf

    def test_constant_difference_closed_form(self):
        a = np.full((32, 32), 100.0)
        b = np.full((32, 32), 110.0)
        assert psnr(a, b, max_value=255.0) == pytest.approx(
            20 * math.log10(255.0 / 10.0), abs=1e-9
        )

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, size=(8, 8, 3))
        b = rng.uniform(0, 1, size=(8, 8, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_decreases_with_noise_amplitude(self, rng):
        base = rng.uniform(0.3, 0.7, size=(32, 32))
        noise = rng.standard_normal(size=(32, 32))
        values = []
        for amp in (0.01, 0.03, 0.09):
            noisy = np.clip(base + amp * noise, 0.0, 1.0)
            values.append(psnr(base, noisy))
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shapes"):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_range_validation(self):
        with pytest.raises(ValueError, match="outside"):
            psnr(np.full((4, 4), 2.0), np.zeros((4, 4)), max_value=1.0)


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        a = rng.uniform(0, 1, size=(24, 24))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_negative_for_inverted_checkerboard(self):
        a = np.indices((24, 24)).sum(axis=0) % 2.0
        assert ssim(a, 1.0 - a) < 0.0

    def test_constant_frames_match_luminance_closed_form(self):
        mu1, mu2 = 0.25, 0.75
        a = np.full((16, 16), mu1)
        b = np.full((16, 16), mu2)
        c1 = 0.01**2
        expected = (2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_multichannel_averages(self, rng):
        a = rng.uniform(0, 1, size=(16, 16, 3))
        b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
        per_channel = [ssim(a[..., c], b[..., c]) for c in range(3)]
        assert ssim(a, b) == pytest.approx(np.mean(per_channel), abs=1e-12)

    def test_smaller_than_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestImageFiles:
    def test_binary_round_trip_byte_identical(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(12, 15, 3))
        p1, p2 = tmp_path / "a.imgf", tmp_path / "b.imgf"
        write_image_binary(img, 1.0, p1)
        arr, max_value = read_image_binary(p1)
        write_image_binary(arr, max_value, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert max_value == 1.0

    def test_grayscale_round_trip_shape(self, tmp_path, rng):
        img = rng.uniform(0, 255, size=(9, 7))
        write_image_binary(img, 255.0, tmp_path / "g.imgf")
        arr, max_value = read_image_binary(tmp_path / "g.imgf")
        assert arr.shape == (9, 7)
        assert max_value == 255.0

    def test_png_load(self, tmp_path, rng):
        from PIL import Image

        raw = rng.integers(0, 256, size=(10, 11, 3), dtype=np.uint8)
        path = tmp_path / "img.png"
        Image.fromarray(raw).save(path)
        arr, max_value = load_image(path)
        assert max_value == 1.0
        assert arr.shape == (10, 11, 3)
        assert np.allclose(arr * 255.0, raw, atol=1e-9)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.imgf"
        p.write_bytes(b"WHAT" + b"\x00" * 24)
        with pytest.raises(ValueError, match="magic"):
            read_image_binary(p)
