"""Raster and box geometry primitives shared by the whole pipeline.

Coordinate conventions: boxes are continuous-valued with top-left origin and
y growing downward; integer pixel (i, j) occupies the unit square
[i, i+1) x [j, j+1), so integer-coordinate boxes have exact pixel areas.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImagingError(ValueError):
    """Raised for invalid raster or geometry inputs."""


@dataclass(frozen=True)
class ImageBuffer:
    """Dense 8-bit RGB or RGBA raster, row-major (height, width, channels).

    The optional ``source`` records where the pixels were read from; it is
    metadata only and never participates in equality.
    """

    pixels: np.ndarray
    source: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] not in (3, 4):
            raise ImagingError(f"expected (h, w, 3|4) array, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ImagingError(f"expected uint8 samples, got {px.dtype}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ImagingError("degenerate image: zero width or height")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[:, :, :3]

    @property
    def alpha(self) -> np.ndarray | None:
        return self.pixels[:, :, 3] if self.channels == 4 else None


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box (x, y, w, h) in pixels; may extend outside an image."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ImagingError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def clip_to(self, width: int, height: int) -> "BBox | None":
        """Intersect with the image frame; None if nothing remains."""
        x1, y1 = max(self.x, 0.0), max(self.y, 0.0)
        x2, y2 = min(self.x2, float(width)), min(self.y2, float(height))
        if x2 <= x1 or y2 <= y1:
            return None
        return BBox(x1, y1, x2 - x1, y2 - y1)

    def scaled_about_center(self, factor: float) -> "BBox":
        cx, cy = self.center
        w, h = self.w * factor, self.h * factor
        return BBox(cx - w / 2.0, cy - h / 2.0, w, h)


@dataclass(frozen=True)
class AffineTransform:
    """Rotation (degrees, in (-180, 180]), positive axis scales, translation."""

    rotation: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0

    def __post_init__(self):
        if not (self.scale_x > 0 and self.scale_y > 0):
            raise ImagingError("scale factors must be strictly positive")
        if not (-180.0 < self.rotation <= 180.0):
            raise ImagingError(f"rotation {self.rotation} outside (-180, 180]")

    def matrix(self) -> np.ndarray:
        """2x3 matrix mapping source (x, y, 1) to destination coordinates."""
        theta = np.deg2rad(self.rotation)
        c, s = np.cos(theta), np.sin(theta)
        m = np.array(
            [
                [c * self.scale_x, -s * self.scale_y, self.translate_x],
                [s * self.scale_x, c * self.scale_y, self.translate_y],
            ],
            dtype=np.float64,
        )
        return m


def bbox_intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes; 0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def bbox_union_area(a: BBox, b: BBox) -> float:
    return a.area + b.area - bbox_intersection_area(a, b)


def round_half_away(x) -> np.ndarray:
    """Round to nearest with ties away from zero (numpy rint rounds to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def luma(img: ImageBuffer | np.ndarray) -> np.ndarray:
    """Rec.601 luma as uint8; shared by monochrome, SAD, and NCC paths."""
    rgb = img.rgb if isinstance(img, ImageBuffer) else img[:, :, :3]
    wr, wg, wb = LUMA_WEIGHTS
    y = wr * rgb[:, :, 0].astype(np.float64) + wg * rgb[:, :, 1] + wb * rgb[:, :, 2]
    return round_half_away(y).astype(np.uint8)


def rescale_shorter_side(img: ImageBuffer, target: int) -> ImageBuffer:
    """Bilinear rescale so the shorter side equals ``target`` exactly.

    The longer side is rounded to nearest (ties away from zero). Identity when
    the shorter side already matches, so no resampling occurs.
    """
    if target <= 0:
        raise ImagingError(f"target must be positive, got {target}")
    w, h = img.width, img.height
    short = min(w, h)
    if short == target:
        return img
    scale = target / short
    if w <= h:
        out_w, out_h = target, int(round_half_away(h * scale))
    else:
        out_w, out_h = int(round_half_away(w * scale)), target
    resized = cv2.resize(img.pixels, (out_w, out_h), interpolation=cv2.INTER_LINEAR)
    return ImageBuffer(np.ascontiguousarray(resized), source=img.source)


def read_image(path: str | Path) -> ImageBuffer:
    """Read a PNG or JPEG as RGB, or RGBA when an alpha channel is present."""
    path = Path(path)
    with Image.open(path) as im:
        if im.format not in ("PNG", "JPEG"):
            raise ImagingError(f"{path}: only PNG and JPEG are supported, got {im.format}")
        if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
            converted = im.convert("RGBA")
        else:
            converted = im.convert("RGB")
        arr = np.asarray(converted, dtype=np.uint8)
    return ImageBuffer(arr, source=path)


def write_png(img: ImageBuffer, path: str | Path) -> Path:
    """Write 8-bit RGB/RGBA PNG. Output bytes depend only on the pixels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if img.channels == 4:
        bgr = cv2.cvtColor(img.pixels, cv2.COLOR_RGBA2BGRA)
    else:
        bgr = cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR)
    ok, data = cv2.imencode(".png", bgr, [cv2.IMWRITE_PNG_COMPRESSION, 1])
    if not ok:
        raise ImagingError(f"PNG encoding failed for {path}")
    path.write_bytes(data.tobytes())
    return path


def with_source(img: ImageBuffer, path: Path | None) -> ImageBuffer:
    return replace(img, source=path)
