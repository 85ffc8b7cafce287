"""Residual-frame preprocessing: absolute frame differencing with optional
integer-translation global motion compensation (camera panning)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import ImageBuffer, ImagingError, luma, read_image, write_png


@dataclass(frozen=True)
class TranslationEstimate:
    """Integer shift that best aligns the previous frame to the current one."""

    dx: int
    dy: int
    sad: float  # mean absolute luma difference over the overlap at the optimum


def numbered_frames(frames_dir: str | Path) -> list[Path]:
    """Zero-padded numbered PNGs of a sequence directory, in frame order."""
    frames = sorted(Path(frames_dir).glob("[0-9]*.png"))
    if not frames:
        raise FileNotFoundError(f"no numbered frames in {frames_dir}")
    return frames


def shift_clamp(pixels: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift by (dx, dy) with clamp-to-edge fill; dimensions never change."""
    h, w = pixels.shape[:2]
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    return pixels.take(ys, axis=0).take(xs, axis=1)


def estimate_translation(prev: ImageBuffer, cur: ImageBuffer, window: int) -> TranslationEstimate:
    """Exhaustive integer search over [-window, window]^2 minimizing mean SAD.

    SAD is computed on luma over the overlapping region only. Ties break by
    smaller |dx|+|dy|, then smaller dy, then smaller dx, so the result is
    unique and matches a plain loop reference exactly.
    """
    if (prev.width, prev.height) != (cur.width, cur.height):
        raise ImagingError("frames must share dimensions")
    if window < 0:
        raise ValueError("window must be >= 0")
    lp = luma(prev).astype(np.int64)
    lc = luma(cur).astype(np.int64)
    h, w = lc.shape
    best: tuple[float, int, int, int] | None = None
    best_offset = (0, 0)
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            x0, x1 = max(0, dx), w + min(0, dx)
            y0, y1 = max(0, dy), h + min(0, dy)
            if x1 <= x0 or y1 <= y0:
                continue
            sad_sum = int(np.abs(lc[y0:y1, x0:x1] - lp[y0 - dy : y1 - dy, x0 - dx : x1 - dx]).sum())
            mean = sad_sum / ((y1 - y0) * (x1 - x0))
            key = (mean, abs(dx) + abs(dy), dy, dx)
            if best is None or key < best:
                best = key
                best_offset = (dx, dy)
    return TranslationEstimate(dx=best_offset[0], dy=best_offset[1], sad=best[0])


def residual_frame(prev: ImageBuffer, cur: ImageBuffer, compensate: bool = False,
                   window: int = 8) -> ImageBuffer:
    """Per-channel absolute difference |cur - prev|, optionally aligning prev
    by the estimated global translation first."""
    if (prev.width, prev.height) != (cur.width, cur.height):
        raise ImagingError("frames must share dimensions")
    aligned = prev.rgb
    if compensate:
        est = estimate_translation(prev, cur, window)
        if (est.dx, est.dy) != (0, 0):
            aligned = shift_clamp(prev.rgb, est.dx, est.dy)
    diff = np.abs(cur.rgb.astype(np.int16) - aligned.astype(np.int16)).astype(np.uint8)
    return ImageBuffer(diff)


def residual_sequence(frames_dir: str | Path, compensate: bool, window: int,
                      out_dir: str | Path) -> int:
    """Write one residual per input frame under the same numbering.

    The first frame pairs with itself (all-zero residual) so frame indices
    stay aligned with ground truth.
    """
    frames = numbered_frames(frames_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prev: ImageBuffer | None = None
    for frame_path in frames:
        cur = read_image(frame_path)
        if prev is not None and (prev.width, prev.height) != (cur.width, cur.height):
            raise ImagingError(f"inconsistent frame dimensions at {frame_path.name}")
        res = residual_frame(prev if prev is not None else cur, cur, compensate, window)
        write_png(res, out_dir / frame_path.name)
        prev = cur
    return len(frames)
