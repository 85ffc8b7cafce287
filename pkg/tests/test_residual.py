from __future__ import annotations

import numpy as np
import pytest

from dronewatch.augment import simulate_sequence
from dronewatch.imaging import ImageBuffer, ImagingError, luma, read_image, write_png
from dronewatch.residual import (
    TranslationEstimate,
    estimate_translation,
    numbered_frames,
    residual_frame,
    residual_sequence,
    shift_clamp,
)

from conftest import blocky_sprite, gradient_background


def brute_force_translation(prev: ImageBuffer, cur: ImageBuffer, window: int) -> TranslationEstimate:
    """Per-pixel loop reference over the same search space."""
    lp = luma(prev).astype(int)
    lc = luma(cur).astype(int)
    h, w = lc.shape
    best_key = None
    best = (0, 0)
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            total = 0
            count = 0
            for y in range(max(0, dy), h + min(0, dy)):
                for x in range(max(0, dx), w + min(0, dx)):
                    total += abs(lc[y][x] - lp[y - dy][x - dx])
                    count += 1
            if count == 0:
                continue
            key = (total / count, abs(dx) + abs(dy), dy, dx)
            if best_key is None or key < best_key:
                best_key = key
                best = (dx, dy)
    return TranslationEstimate(best[0], best[1], best_key[0])


def random_image(seed: int, width: int = 32, height: int = 32) -> ImageBuffer:
    rng = np.random.default_rng(seed)
    return ImageBuffer(rng.integers(0, 256, (height, width, 3)).astype(np.uint8))


def pano_crop(pano: np.ndarray, x: int, y: int, width: int, height: int) -> ImageBuffer:
    return ImageBuffer(np.ascontiguousarray(pano[y : y + height, x : x + width]))


@pytest.fixture(scope="module")
def panorama() -> np.ndarray:
    return gradient_background(320, 240, seed=9).pixels


class TestEstimateTranslation:
    def test_identical_frames(self):
        img = random_image(0)
        est = estimate_translation(img, img, 8)
        assert (est.dx, est.dy, est.sad) == (0, 0, 0.0)

    def test_constructed_shift(self):
        prev = gradient_background(64, 48, seed=1)
        cur = ImageBuffer(shift_clamp(prev.pixels, 3, -2))
        est = estimate_translation(prev, cur, 8)
        assert (est.dx, est.dy) == (3, -2)

    def test_zero_window(self):
        a, b = random_image(1), random_image(2)
        est = estimate_translation(a, b, 0)
        assert (est.dx, est.dy) == (0, 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ImagingError):
            estimate_translation(random_image(0), random_image(0, width=16), 2)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(100 + seed)
        prev = random_image(seed)
        dx, dy = int(rng.integers(-3, 4)), int(rng.integers(-3, 4))
        cur_px = shift_clamp(prev.pixels, dx, dy)
        cur_px = cur_px.copy()
        # sprinkle independent noise so ties are nontrivial
        noise_at = rng.integers(0, 32, (5, 2))
        cur_px[noise_at[:, 0], noise_at[:, 1]] = rng.integers(0, 256, (5, 3))
        cur = ImageBuffer(cur_px)
        got = estimate_translation(prev, cur, 4)
        want = brute_force_translation(prev, cur, 4)
        assert (got.dx, got.dy) == (want.dx, want.dy)
        assert got.sad == want.sad  # same integer sums, same division

    def test_matches_brute_force_on_flat_tie(self):
        # flat images tie everywhere; the tie-break must pick (0, 0)
        img = ImageBuffer(np.full((16, 16, 3), 77, np.uint8))
        got = estimate_translation(img, img, 3)
        want = brute_force_translation(img, img, 3)
        assert (got.dx, got.dy) == (want.dx, want.dy) == (0, 0)


class TestResidualFrame:
    def test_identical_frames_zero(self):
        img = random_image(3)
        res = residual_frame(img, img)
        assert not res.pixels.any()

    def test_single_pixel_delta(self):
        prev = random_image(4)
        cur_px = prev.pixels.copy()
        cur_px[10, 12, 0] = min(255, cur_px[10, 12, 0] + 10) if cur_px[10, 12, 0] <= 245 else cur_px[10, 12, 0] - 10
        expected = abs(int(cur_px[10, 12, 0]) - int(prev.pixels[10, 12, 0]))
        res = residual_frame(prev, ImageBuffer(cur_px))
        assert res.pixels[10, 12, 0] == expected == 10
        res.pixels[10, 12, 0] = 0
        assert not res.pixels.any()

    def test_symmetry_without_compensation(self):
        a, b = random_image(5), random_image(6)
        assert np.array_equal(residual_frame(a, b).pixels, residual_frame(b, a).pixels)

    def test_moving_sprite_support(self, tmp_path):
        background = gradient_background(160, 120, seed=2)
        sprite = blocky_sprite(24, seed=4)
        track = simulate_sequence(background, sprite, [(60.0, 60.0), (70.0, 64.0)], tmp_path)
        f1 = read_image(tmp_path / "000001.png")
        f2 = read_image(tmp_path / "000002.png")
        res = residual_frame(f1, f2)
        ys, xs = np.nonzero(res.pixels.any(axis=2))
        a, b = track
        assert xs.min() >= min(a.x, b.x) and xs.max() < max(a.x2, b.x2)
        assert ys.min() >= min(a.y, b.y) and ys.max() < max(a.y2, b.y2)

    def test_pure_pan_overlap_zero_with_compensation(self, panorama):
        prev = pano_crop(panorama, 20, 20, 128, 96)
        cur = pano_crop(panorama, 24, 17, 128, 96)
        est = estimate_translation(prev, cur, 8)
        assert (est.dx, est.dy) == (-4, 3)
        res = residual_frame(prev, cur, compensate=True, window=8)
        # overlap region excludes the clamp-filled strips
        overlap = res.pixels[3:, :124]
        assert not overlap.any()

    def test_values_exact_integers(self):
        prev = random_image(7)
        cur = random_image(8)
        res = residual_frame(prev, cur)
        expected = np.abs(cur.pixels.astype(int) - prev.pixels.astype(int))
        assert np.array_equal(res.pixels, expected)


class TestResidualSequence:
    def test_counts_and_first_frame(self, tmp_path):
        background = gradient_background(120, 90, seed=3)
        sprite = blocky_sprite(20, seed=1)
        simulate_sequence(background, sprite, [(40.0 + 2 * i, 45.0) for i in range(30)], tmp_path / "seq")
        count = residual_sequence(tmp_path / "seq", compensate=False, window=0, out_dir=tmp_path / "res")
        assert count == 30
        first = read_image(tmp_path / "res" / "000001.png")
        assert not first.pixels.any()

    def test_static_sequence_all_zero(self, tmp_path):
        background = gradient_background(100, 80, seed=5)
        sprite = blocky_sprite(16, seed=2)
        simulate_sequence(background, sprite, [(50.0, 40.0)] * 6, tmp_path / "seq")
        residual_sequence(tmp_path / "seq", compensate=False, window=0, out_dir=tmp_path / "res")
        for f in sorted((tmp_path / "res").glob("0*.png")):
            assert not read_image(f).pixels.any()

    def test_pan_energy_drops_with_compensation(self, panorama, tmp_path):
        seq = tmp_path / "seq"
        seq.mkdir()
        for t in range(5):
            write_png(pano_crop(panorama, 10 + 4 * t, 10 + 3 * t, 160, 120), seq / f"{t + 1:06d}.png")
        residual_sequence(seq, compensate=True, window=8, out_dir=tmp_path / "on")
        residual_sequence(seq, compensate=False, window=8, out_dir=tmp_path / "off")
        energy_on = sum(
            read_image(f).pixels.astype(float).mean() for f in sorted((tmp_path / "on").glob("0*.png"))
        )
        energy_off = sum(
            read_image(f).pixels.astype(float).mean() for f in sorted((tmp_path / "off").glob("0*.png"))
        )
        assert energy_off >= 10.0 * energy_on

    def test_inconsistent_dimensions(self, tmp_path):
        seq = tmp_path / "seq"
        seq.mkdir()
        write_png(gradient_background(64, 64), seq / "000001.png")
        write_png(gradient_background(64, 66), seq / "000002.png")
        with pytest.raises(ImagingError):
            residual_sequence(seq, False, 0, tmp_path / "out")

    def test_empty_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            numbered_frames(tmp_path)
