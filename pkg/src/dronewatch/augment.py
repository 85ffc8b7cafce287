"""Synthetic training data: sprite compositing with automatic tight boxes.

Foreground sprites are geometrically transformed, optionally shadowed,
converted to gray, or blurred, then alpha-pasted onto backgrounds. The
annotation comes for free as the tight box of the pasted opaque pixels.
All randomness is derived from (policy.seed, sample_index) so generation
order and parallelism cannot change outputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.etree import ElementTree as ET

import cv2
import numpy as np

from .imaging import (
    AffineTransform,
    BBox,
    ImageBuffer,
    ImagingError,
    luma,
    read_image,
    round_half_away,
    write_png,
)
from .noise import fractal_noise

OPAQUE = 255
ALPHA_BINARIZE_THRESHOLD = 128


class SampleRejectedError(RuntimeError):
    """Sprite could not be fitted into the background after retries."""


class OutOfFrameError(ValueError):
    """Requested placement would push the sprite outside the frame."""


@dataclass(frozen=True)
class ForegroundAsset:
    """RGBA sprite whose binary alpha marks the drone pixels."""

    sprite: ImageBuffer
    source_id: str = ""

    def __post_init__(self):
        alpha = self.sprite.alpha
        if alpha is None:
            raise ImagingError("foreground asset needs an alpha channel")
        if ((alpha != 0) & (alpha != OPAQUE)).any():
            raise ImagingError("asset alpha must be binary (0 or 255)")
        if not (alpha == OPAQUE).any():
            raise ImagingError("asset has no opaque pixels")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Sampling ranges and probabilities for one augmentation run.

    ``scale_range`` is the target sprite width as a fraction of the
    background width. ``sprites_per_sample`` > 1 places additional
    non-overlapping sprites per image.
    """

    rotation_range: tuple[float, float] = (-30.0, 30.0)
    scale_range: tuple[float, float] = (0.02, 0.20)
    shadow_probability: float = 0.0
    monochrome_probability: float = 0.0
    blur_probability: float = 0.0
    seed: int = 0
    sprites_per_sample: int = 1

    def __post_init__(self):
        if self.rotation_range[0] > self.rotation_range[1]:
            raise ValueError("empty rotation range")
        if not (0 < self.scale_range[0] <= self.scale_range[1]):
            raise ValueError("scale range must be positive and non-empty")
        for p in (self.shadow_probability, self.monochrome_probability, self.blur_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.sprites_per_sample < 1:
            raise ValueError("need at least one sprite per sample")


@dataclass(frozen=True)
class AnnotatedSample:
    image: ImageBuffer
    boxes: list[BBox]
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class MotionBlur:
    length: float
    angle: float = 0.0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("motion length must be >= 1")


def tight_box(alpha: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight (x, y, w, h) around nonzero alpha, or None when fully transparent."""
    ys, xs = np.nonzero(alpha)
    if ys.size == 0:
        return None
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def transform_foreground(asset: ForegroundAsset, t: AffineTransform) -> ForegroundAsset:
    """Warp a sprite, expanding the canvas so rotation never clips it.

    Bilinear resampling; the alpha channel is re-binarized afterwards
    (>= 128 becomes opaque).
    """
    src = asset.sprite
    m = t.matrix()
    corners = np.array(
        [[0, 0], [src.width, 0], [0, src.height], [src.width, src.height]], dtype=np.float64
    )
    mapped = corners @ m[:, :2].T + m[:, 2]
    x0, y0 = np.floor(mapped.min(axis=0))
    x1, y1 = np.ceil(mapped.max(axis=0))
    out_w, out_h = int(x1 - x0), int(y1 - y0)
    if out_w < 1 or out_h < 1:
        raise ImagingError("transform collapses the sprite to zero pixels")

    shifted = m.copy()
    shifted[0, 2] -= x0
    shifted[1, 2] -= y0
    warped = cv2.warpAffine(
        src.pixels,
        shifted,
        (out_w, out_h),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(0, 0, 0, 0),
    )
    alpha = warped[:, :, 3]
    warped[:, :, 3] = np.where(alpha >= ALPHA_BINARIZE_THRESHOLD, OPAQUE, 0)
    if not warped[:, :, 3].any():
        raise ImagingError("transform leaves no opaque pixels")
    return ForegroundAsset(ImageBuffer(warped), source_id=asset.source_id)


def make_shadow_map(width: int, height: int, mode: str, seed: int) -> np.ndarray:
    """Per-pixel attenuation in [0, 1]; 1 means unshadowed.

    ``lines`` draws random straight bands at a single sampled dark level;
    ``perlin`` thresholds smooth gradient noise so that between 20% and 80%
    of pixels are attenuated, with the shadow depth following the noise.
    """
    if width <= 0 or height <= 0:
        raise ImagingError("shadow map needs positive dimensions")
    rng = np.random.default_rng(seed)
    if mode == "lines":
        dark = rng.uniform(0.3, 0.7)
        shadow = np.zeros((height, width), dtype=bool)
        xs, ys = np.meshgrid(np.arange(width, dtype=np.float64) + 0.5,
                             np.arange(height, dtype=np.float64) + 0.5)
        for _ in range(int(rng.integers(1, 4))):
            p0 = rng.uniform((-width, -height), (2 * width, 2 * height))
            p1 = rng.uniform((-width, -height), (2 * width, 2 * height))
            half_width = rng.uniform(min(width, height) / 16 + 1, min(width, height) / 3 + 1)
            shadow |= _segment_distance(xs, ys, p0, p1) <= half_width
        return np.where(shadow, dark, 1.0)
    if mode == "perlin":
        field = fractal_noise(width, height, seed)
        frac = rng.uniform(0.25, 0.75)
        threshold = float(np.quantile(field, frac))
        dark = rng.uniform(0.3, 0.7)
        depth = field / max(threshold, 1e-9)
        return np.where(field >= threshold, 1.0, dark + (1.0 - dark) * depth)
    raise ValueError(f"unknown shadow mode {mode!r}")


def _segment_distance(xs: np.ndarray, ys: np.ndarray, p0, p1) -> np.ndarray:
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    norm2 = dx * dx + dy * dy
    if norm2 < 1e-12:
        return np.hypot(xs - p0[0], ys - p0[1])
    t = np.clip(((xs - p0[0]) * dx + (ys - p0[1]) * dy) / norm2, 0.0, 1.0)
    return np.hypot(xs - (p0[0] + t * dx), ys - (p0[1] + t * dy))


def apply_shadow(asset: ForegroundAsset, shadow_map: np.ndarray) -> ForegroundAsset:
    """Multiply RGB by the attenuation map and round; alpha is untouched."""
    sprite = asset.sprite
    if shadow_map.shape != (sprite.height, sprite.width):
        raise ImagingError(
            f"shadow map {shadow_map.shape} does not match sprite "
            f"{(sprite.height, sprite.width)}"
        )
    out = sprite.pixels.copy()
    shaded = round_half_away(out[:, :, :3].astype(np.float64) * shadow_map[:, :, None])
    out[:, :, :3] = np.clip(shaded, 0, 255).astype(np.uint8)
    return ForegroundAsset(ImageBuffer(out), source_id=asset.source_id)


def to_monochrome(asset: ForegroundAsset) -> ForegroundAsset:
    """Replace RGB by Rec.601 luma replicated across the three channels."""
    out = asset.sprite.pixels.copy()
    out[:, :, :3] = luma(asset.sprite)[:, :, None]
    return ForegroundAsset(ImageBuffer(out), source_id=asset.source_id)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at 3 sigma."""
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """1-pixel-wide line kernel, bilinearly rasterized and normalized."""
    half = (length - 1.0) / 2.0
    size = 2 * int(np.ceil(half)) + 1
    kernel = np.zeros((size, size), dtype=np.float64)
    center = size // 2
    theta = np.deg2rad(angle)
    dx, dy = np.cos(theta), np.sin(theta)
    n_samples = max(1, int(np.ceil(length * 8)))
    for t in np.linspace(-half, half, n_samples):
        x, y = center + t * dx, center + t * dy
        ix, iy = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - ix, y - iy
        for oy, wy in ((0, 1 - fy), (1, fy)):
            for ox, wx in ((0, 1 - fx), (1, fx)):
                w = wx * wy
                if w > 0:
                    kernel[iy + oy, ix + ox] += w
    return kernel / kernel.sum()


def blur(asset: ForegroundAsset, kind: GaussianBlur | MotionBlur) -> ForegroundAsset:
    """Convolve RGB with a normalized kernel; clamp-to-edge borders, alpha kept."""
    rgb = asset.sprite.pixels[:, :, :3].astype(np.float64)
    if isinstance(kind, GaussianBlur):
        k = gaussian_kernel(kind.sigma)
        blurred = cv2.sepFilter2D(rgb, -1, k, k, borderType=cv2.BORDER_REPLICATE)
    elif isinstance(kind, MotionBlur):
        k = motion_kernel(kind.length, kind.angle)
        blurred = cv2.filter2D(rgb, -1, k, borderType=cv2.BORDER_REPLICATE)
    else:
        raise TypeError(f"unsupported blur kind {kind!r}")
    out = asset.sprite.pixels.copy()
    out[:, :, :3] = np.clip(round_half_away(blurred), 0, 255).astype(np.uint8)
    return ForegroundAsset(ImageBuffer(out), source_id=asset.source_id)


def paste_sprite(background: ImageBuffer, asset: ForegroundAsset, x: int, y: int) -> tuple[ImageBuffer, BBox]:
    """Alpha-paste the sprite canvas at origin (x, y) of the background.

    Returns the composited image and the tight box of the pasted opaque
    pixels intersected with the frame.
    """
    sprite = asset.sprite
    out = background.rgb.copy()
    bx0, by0 = max(x, 0), max(y, 0)
    bx1 = min(x + sprite.width, background.width)
    by1 = min(y + sprite.height, background.height)
    if bx1 <= bx0 or by1 <= by0:
        raise ImagingError("sprite lies entirely outside the background")
    crop = sprite.pixels[by0 - y : by1 - y, bx0 - x : bx1 - x]
    mask = crop[:, :, 3] == OPAQUE
    region = out[by0:by1, bx0:bx1]
    region[mask] = crop[:, :, :3][mask]
    tb = tight_box(crop[:, :, 3])
    if tb is None:
        raise ImagingError("no opaque pixels fall inside the frame")
    return ImageBuffer(out), BBox(bx0 + tb[0], by0 + tb[1], tb[2], tb[3])


def composite_sample(
    background: ImageBuffer,
    assets: list[ForegroundAsset],
    policy: AugmentationPolicy,
    sample_index: int,
) -> AnnotatedSample:
    """Place randomly transformed sprites onto one background.

    Per sprite: rotation and width fraction are drawn uniformly from the
    policy ranges, illumination/quality effects fire independently with
    their configured probabilities, and the placement is uniform over all
    positions that keep the tight box fully inside the frame (and clear of
    earlier sprites). Placement/scale is resampled up to 10 times before
    the sample is rejected.
    """
    if background.width < 64 or background.height < 64:
        raise ImagingError("background must be at least 64x64")
    if not assets:
        raise ValueError("need at least one foreground asset")
    rng = np.random.default_rng([policy.seed, sample_index])
    image = background
    boxes: list[BBox] = []
    sprite_records = []
    for _ in range(policy.sprites_per_sample):
        prepared = None
        for _attempt in range(10):
            asset = assets[int(rng.integers(len(assets)))]
            rotation = float(rng.uniform(*policy.rotation_range))
            frac = float(rng.uniform(*policy.scale_range))
            base_tb = tight_box(asset.sprite.alpha)
            scale = frac * background.width / base_tb[2]
            try:
                sprite = transform_foreground(
                    asset, AffineTransform(rotation=rotation, scale_x=scale, scale_y=scale)
                )
            except ImagingError:
                continue
            tb = tight_box(sprite.sprite.alpha)
            if tb[2] <= background.width and tb[3] <= background.height:
                prepared = (asset, rotation, frac, scale, sprite, tb)
                break
        if prepared is None:
            raise SampleRejectedError(
                f"sprite does not fit the {background.width}x{background.height} "
                f"background after 10 attempts (sample {sample_index})"
            )
        asset, rotation, frac, scale, sprite, tb = prepared

        record = {
            "source_id": asset.source_id,
            "rotation": rotation,
            "width_fraction": frac,
            "scale": scale,
            "shadow": None,
            "monochrome": False,
            "blur": None,
        }
        if rng.random() < policy.shadow_probability:
            mode = "lines" if rng.random() < 0.5 else "perlin"
            shadow_seed = int(rng.integers(2**32))
            sprite = apply_shadow(
                sprite, make_shadow_map(sprite.sprite.width, sprite.sprite.height, mode, shadow_seed)
            )
            record["shadow"] = {"mode": mode, "seed": shadow_seed}
        if rng.random() < policy.monochrome_probability:
            sprite = to_monochrome(sprite)
            record["monochrome"] = True
        if rng.random() < policy.blur_probability:
            if rng.random() < 0.5:
                kind = GaussianBlur(sigma=float(rng.uniform(0.5, 2.0)))
                record["blur"] = {"kind": "gaussian", "sigma": kind.sigma}
            else:
                kind = MotionBlur(length=float(rng.uniform(3.0, 9.0)), angle=float(rng.uniform(0.0, 180.0)))
                record["blur"] = {"kind": "motion", "length": kind.length, "angle": kind.angle}
            sprite = blur(sprite, kind)

        placed = None
        for _attempt in range(10):
            bx = int(rng.integers(0, background.width - tb[2] + 1))
            by = int(rng.integers(0, background.height - tb[3] + 1))
            candidate = BBox(bx, by, tb[2], tb[3])
            if all(
                min(candidate.x2, b.x2) <= max(candidate.x, b.x)
                or min(candidate.y2, b.y2) <= max(candidate.y, b.y)
                for b in boxes
            ):
                placed = (bx, by)
                break
        if placed is None:
            raise SampleRejectedError(
                f"could not place sprite clear of earlier ones (sample {sample_index})"
            )
        bx, by = placed
        image, box = paste_sprite(image, sprite, bx - tb[0], by - tb[1])
        record["box"] = [box.x, box.y, box.w, box.h]
        boxes.append(box)
        sprite_records.append(record)

    provenance = {"seed": policy.seed, "sample_index": sample_index, "sprites": sprite_records}
    return AnnotatedSample(image=image, boxes=boxes, provenance=provenance)


def load_manifest(path: str | Path) -> list[Path]:
    """Newline-separated file paths; blank lines ignored, relative to the manifest."""
    path = Path(path)
    base = path.parent
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        p = Path(line)
        entries.append(p if p.is_absolute() else base / p)
    if not entries:
        raise ValueError(f"manifest {path} is empty")
    return entries


def load_foreground_asset(path: str | Path) -> ForegroundAsset:
    """Read an RGBA sprite, binarizing any soft alpha at 128."""
    img = read_image(path)
    if img.channels != 4:
        raise ImagingError(f"asset {path} has no alpha channel")
    px = img.pixels.copy()
    px[:, :, 3] = np.where(px[:, :, 3] >= ALPHA_BINARIZE_THRESHOLD, OPAQUE, 0)
    return ForegroundAsset(ImageBuffer(px, source=Path(path)), source_id=Path(path).stem)


def generate_dataset(
    backgrounds_manifest: str | Path,
    assets_manifest: str | Path,
    policy: AugmentationPolicy,
    n: int,
    out_dir: str | Path,
    voc: bool = False,
) -> list[dict]:
    """Write ``n`` annotated PNGs plus annotation and manifest files.

    Returns the manifest records. Layout under ``out_dir``: ``images/``
    with the PNGs, ``annotations.txt`` with one comma-separated record per
    image, ``manifest.json`` with full provenance, and optionally ``voc/``
    with PASCAL-VOC XML per image.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    out_dir = Path(out_dir)
    background_paths = load_manifest(backgrounds_manifest)
    assets = [load_foreground_asset(p) for p in load_manifest(assets_manifest)]
    background_cache: dict[Path, ImageBuffer] = {}

    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    annotation_lines = []
    for i in range(n):
        pick = np.random.default_rng([policy.seed, i, 1])
        bg_path = background_paths[int(pick.integers(len(background_paths)))]
        if bg_path not in background_cache:
            background_cache[bg_path] = read_image(bg_path)
        sample = composite_sample(background_cache[bg_path], assets, policy, i)
        rel = f"images/img_{i:06d}.png"
        write_png(sample.image, out_dir / rel)
        fields = [rel]
        for b in sample.boxes:
            fields += [f"{b.x:.2f}", f"{b.y:.2f}", f"{b.w:.2f}", f"{b.h:.2f}"]
        annotation_lines.append(",".join(fields))
        record = {
            "image": rel,
            "background": str(bg_path),
            "boxes": [[b.x, b.y, b.w, b.h] for b in sample.boxes],
            "provenance": sample.provenance,
        }
        records.append(record)
        if voc:
            xml_path = out_dir / "voc" / f"img_{i:06d}.xml"
            write_voc_xml(sample, rel, xml_path)

    (out_dir / "annotations.txt").write_text("\n".join(annotation_lines) + "\n", encoding="utf-8")
    (out_dir / "manifest.json").write_text(
        json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return records


def write_voc_xml(sample: AnnotatedSample, image_name: str, out_path: str | Path) -> Path:
    """PASCAL-VOC style annotation for detector toolchains."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = image_name
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(sample.image.width)
    ET.SubElement(size, "height").text = str(sample.image.height)
    ET.SubElement(size, "depth").text = "3"
    for box in sample.boxes:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = "drone"
        ET.SubElement(obj, "difficult").text = "0"
        bnd = ET.SubElement(obj, "bndbox")
        ET.SubElement(bnd, "xmin").text = f"{box.x:.2f}"
        ET.SubElement(bnd, "ymin").text = f"{box.y:.2f}"
        ET.SubElement(bnd, "xmax").text = f"{box.x2:.2f}"
        ET.SubElement(bnd, "ymax").text = f"{box.y2:.2f}"
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ET.indent(tree := ET.ElementTree(root))
    tree.write(out_path, encoding="utf-8")
    return out_path


def simulate_sequence(
    background: ImageBuffer,
    asset: ForegroundAsset,
    path: list[tuple[float, float] | None],
    out_dir: str | Path,
) -> list[BBox | None]:
    """Desk-scale stand-in for a real drone video: one frame per path point.

    Each point is the sprite center; ``None`` entries produce a plain
    background frame (target out of view). Writes zero-padded numbered
    PNGs plus ``groundtruth.csv`` and returns the per-frame boxes.
    """
    if len(path) < 2:
        raise ValueError("path needs at least two points")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tb = tight_box(asset.sprite.alpha)
    track: list[BBox | None] = []
    gt_lines = ["frame,x,y,w,h"]
    for idx, point in enumerate(path, start=1):
        if point is None:
            frame, box = ImageBuffer(background.rgb.copy()), None
        else:
            cx, cy = point
            bx = int(round_half_away(cx - tb[2] / 2.0))
            by = int(round_half_away(cy - tb[3] / 2.0))
            if bx < 0 or by < 0 or bx + tb[2] > background.width or by + tb[3] > background.height:
                raise OutOfFrameError(f"frame {idx}: sprite at ({cx}, {cy}) leaves the frame")
            frame, box = paste_sprite(background, asset, bx - tb[0], by - tb[1])
        write_png(frame, out_dir / f"{idx:06d}.png")
        track.append(box)
        if box is None:
            gt_lines.append(f"{idx},,,,")
        else:
            gt_lines.append(f"{idx},{box.x:.2f},{box.y:.2f},{box.w:.2f},{box.h:.2f}")
    (out_dir / "groundtruth.csv").write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
    return track
