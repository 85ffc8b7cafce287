"""Detector and tracker plugins consumed by the fusion monitor.

Two deterministic non-neural baselines (template NCC detector, residual
blob tracker) make the whole system runnable at desk scale; the external
detector bridges to a real CNN over a newline-delimited child-process
protocol.
"""
from __future__ import annotations

import queue
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import cv2
import numpy as np
from scipy.signal import fftconvolve

from .augment import ForegroundAsset
from .imaging import BBox, ImageBuffer, luma, write_png


class PluginError(RuntimeError):
    """Base for recoverable plugin failures; the monitor degrades on these."""


class TrackerNotInitializedError(PluginError):
    pass


class TemplateTooLargeError(PluginError):
    pass


class ProtocolViolationError(PluginError):
    pass


class DetectorTimeoutError(PluginError):
    pass


class ChildExitError(PluginError):
    pass


class ChildReportedError(PluginError):
    """Child answered with an ERR record (a valid but failing response)."""


@dataclass(frozen=True)
class ScoredBox:
    """Candidate box with a raw confidence on its source's own scale."""

    box: BBox
    score: float
    source: str  # "detector" | "tracker"

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")
        if self.source not in ("detector", "tracker"):
            raise ValueError(f"unknown source {self.source!r}")


class Detector(Protocol):
    def detect(self, image: ImageBuffer, roi: BBox | None = None) -> list[ScoredBox]:
        """Candidates sorted by descending score, clipped to image bounds."""
        ...


class Tracker(Protocol):
    def init(self, image: ImageBuffer, box: BBox) -> ScoredBox: ...

    def update(self, image: ImageBuffer) -> ScoredBox: ...


def ncc_map(image: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation of the template against every window.

    float64 throughout; windows with (numerically) zero variance score 0
    rather than NaN. Output is clipped to [-1, 1].
    """
    ih, iw = image.shape
    th, tw = template.shape
    if th > ih or tw > iw:
        raise TemplateTooLargeError(f"template {tw}x{th} larger than image {iw}x{ih}")
    tz = template - template.mean()
    t_energy = float(np.sum(tz * tz))
    n = th * tw
    if t_energy <= n * 1e-9:
        return np.zeros((ih - th + 1, iw - tw + 1))
    num = fftconvolve(image, tz[::-1, ::-1], mode="valid")
    ones = np.ones((th, tw))
    win_sum = fftconvolve(image, ones, mode="valid")
    win_sq = fftconvolve(image * image, ones, mode="valid")
    win_var = np.maximum(win_sq - win_sum * win_sum / n, 0.0)
    # fft noise floor sits far below one gray level of true variance
    flat = win_var <= n * 255.0**2 * 1e-9
    denom = np.sqrt(win_var * t_energy)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(flat, 0.0, num / np.where(denom > 0, denom, 1.0))
    return np.clip(out, -1.0, 1.0)


def _same_size_iou_suppress(scores: np.ndarray, peak: tuple[int, int], tw: float, th: float,
                            stride: int, iou_thresh: float) -> None:
    """Knock out map positions whose (same-size) box IoU with the peak passes
    the NMS threshold. In-place."""
    pi, pj = peak
    ri = int(np.ceil(th / stride))
    rj = int(np.ceil(tw / stride))
    i0, i1 = max(0, pi - ri), min(scores.shape[0], pi + ri + 1)
    j0, j1 = max(0, pj - rj), min(scores.shape[1], pj + rj + 1)
    di = np.abs(np.arange(i0, i1) - pi)[:, None] * stride
    dj = np.abs(np.arange(j0, j1) - pj)[None, :] * stride
    inter = np.maximum(tw - dj, 0.0) * np.maximum(th - di, 0.0)
    iou = inter / (2.0 * tw * th - inter)
    scores[i0:i1, j0:j1][iou >= iou_thresh] = -np.inf


class TemplateDetector:
    """Sliding-window NCC against sprite templates at configured scales."""

    def __init__(self, templates: list[ForegroundAsset], stride: int = 1,
                 scales: tuple[float, ...] = (1.0,), top_k: int = 5, nms_iou: float = 0.5):
        if not templates:
            raise ValueError("need at least one template")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride
        self.scales = tuple(scales)
        self.top_k = top_k
        self.nms_iou = nms_iou
        self._template_lumas = []
        for t in templates:
            base = luma(t.sprite)
            for s in self.scales:
                tw = max(1, int(round(t.sprite.width * s)))
                th = max(1, int(round(t.sprite.height * s)))
                scaled = cv2.resize(base, (tw, th), interpolation=cv2.INTER_LINEAR)
                self._template_lumas.append(scaled.astype(np.float64))

    def detect(self, image: ImageBuffer, roi: BBox | None = None) -> list[ScoredBox]:
        lum = luma(image).astype(np.float64)
        ox = oy = 0
        if roi is not None:
            clipped = roi.clip_to(image.width, image.height)
            if clipped is None:
                return []
            ox, oy = int(np.floor(clipped.x)), int(np.floor(clipped.y))
            lum = lum[oy : int(np.ceil(clipped.y2)), ox : int(np.ceil(clipped.x2))]
        candidates: list[ScoredBox] = []
        fits_any = False
        for template in self._template_lumas:
            th, tw = template.shape
            if th > lum.shape[0] or tw > lum.shape[1]:
                continue
            fits_any = True
            scores = ncc_map(lum, template)[:: self.stride, :: self.stride].copy()
            for _ in range(self.top_k):
                pi, pj = np.unravel_index(int(np.argmax(scores)), scores.shape)
                value = scores[pi, pj]
                if not np.isfinite(value):
                    break
                box = BBox(ox + pj * self.stride, oy + pi * self.stride, tw, th)
                candidates.append(ScoredBox(box, float(value), "detector"))
                _same_size_iou_suppress(scores, (pi, pj), tw, th, self.stride, self.nms_iou)
        if not fits_any:
            raise TemplateTooLargeError("every template exceeds the image at all scales")
        candidates.sort(key=lambda c: -c.score)
        kept: list[ScoredBox] = []
        for cand in candidates:
            if len(kept) == self.top_k:
                break
            if all(_iou(cand.box, k.box) < self.nms_iou for k in kept):
                kept.append(cand)
        return kept


def _iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


class ResidualBlobTracker:
    """Follows the largest moving blob of the thresholded residual.

    The search region is ``search_factor`` times the current box around its
    center; the new box blends the blob's tight box size 50/50 with the
    previous size. Confidence is the blob's pixel count over the search
    region area, clipped to [0, 1].
    """

    def __init__(self, luma_threshold: int = 20, search_factor: float = 2.0,
                 size_blend: float = 0.5):
        self.luma_threshold = luma_threshold
        self.search_factor = search_factor
        self.size_blend = size_blend
        self._box: BBox | None = None

    def init(self, image: ImageBuffer, box: BBox) -> ScoredBox:
        self._box = box
        return ScoredBox(box, 1.0, "tracker")

    def update(self, residual: ImageBuffer) -> ScoredBox:
        if self._box is None:
            raise TrackerNotInitializedError("update() before init()")
        region = self._box.scaled_about_center(self.search_factor).clip_to(
            residual.width, residual.height
        )
        if region is None:
            return ScoredBox(self._box, 0.0, "tracker")
        x0, y0 = int(np.floor(region.x)), int(np.floor(region.y))
        x1, y1 = int(np.ceil(region.x2)), int(np.ceil(region.y2))
        mask = (luma(residual)[y0:y1, x0:x1] > self.luma_threshold).astype(np.uint8)
        if not mask.any():
            return ScoredBox(self._box, 0.0, "tracker")
        n_labels, _, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)
        largest = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
        cx = x0 + stats[largest, cv2.CC_STAT_LEFT] + stats[largest, cv2.CC_STAT_WIDTH] / 2.0
        cy = y0 + stats[largest, cv2.CC_STAT_TOP] + stats[largest, cv2.CC_STAT_HEIGHT] / 2.0
        w = (1 - self.size_blend) * self._box.w + self.size_blend * stats[largest, cv2.CC_STAT_WIDTH]
        h = (1 - self.size_blend) * self._box.h + self.size_blend * stats[largest, cv2.CC_STAT_HEIGHT]
        box = BBox(cx - w / 2.0, cy - h / 2.0, w, h)
        score = min(1.0, float(stats[largest, cv2.CC_STAT_AREA]) / region.area)
        self._box = box
        return ScoredBox(box, score, "tracker")


class _ChildProcessClient:
    """Line-protocol client for a plugin child over stdin/stdout.

    Frames travel by file path to keep the protocol codec-free; in-memory
    buffers are spilled to a temp directory. A timeout or malformed
    response kills the child so the stream can resync on restart.
    """

    _source = "detector"

    def __init__(self, command: list[str], timeout: float = 10.0):
        if not command:
            raise ValueError("empty plugin command")
        self.command = list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] | None = None
        self._tmpdir: tempfile.TemporaryDirectory | None = None
        self._frame_counter = 0

    def _start(self) -> None:
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines = queue.Queue()

        def pump(stream, sink: queue.Queue):
            for line in stream:
                sink.put(line.rstrip("\n"))
            sink.put(None)

        threading.Thread(target=pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    def _stop(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None
        self._lines = None

    def close(self) -> None:
        self._stop()
        if self._tmpdir is not None:
            self._tmpdir.cleanup()
            self._tmpdir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _frame_path(self, image: ImageBuffer) -> Path:
        if image.source is not None:
            return image.source
        if self._tmpdir is None:
            self._tmpdir = tempfile.TemporaryDirectory(prefix="dronewatch-frames-")
        self._frame_counter += 1
        path = Path(self._tmpdir.name) / f"{self._frame_counter:06d}.png"
        write_png(image, path)
        return path

    def _readline(self, deadline: float) -> str:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise queue.Empty
        line = self._lines.get(timeout=remaining)
        if line is None:
            self._stop()
            raise ChildExitError("plugin child exited")
        return line

    def _request_boxes(self, request: str, image: ImageBuffer) -> list[ScoredBox]:
        """Send one request line and parse an OK/BOX or ERR response."""
        if self._proc is None or self._proc.poll() is not None:
            self._stop()
            self._start()
        try:
            self._proc.stdin.write(request + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as err:
            self._stop()
            raise ChildExitError(f"cannot write to plugin child: {err}") from err

        deadline = time.monotonic() + self.timeout
        try:
            header = self._readline(deadline)
            tokens = header.split()
            if tokens and tokens[0] == "ERR":
                raise ChildReportedError(header[4:] or "unspecified child error")
            if len(tokens) != 2 or tokens[0] != "OK":
                raise ProtocolViolationError(f"bad response header: {header!r}")
            try:
                count = int(tokens[1])
            except ValueError:
                raise ProtocolViolationError(f"bad response count: {header!r}") from None
            if count < 0:
                raise ProtocolViolationError(f"negative box count: {header!r}")
            boxes = []
            for _ in range(count):
                line = self._readline(deadline)
                parts = line.split()
                if len(parts) != 6 or parts[0] != "BOX":
                    raise ProtocolViolationError(f"bad box record: {line!r}")
                try:
                    x, y, w, h, score = (float(v) for v in parts[1:])
                except ValueError:
                    raise ProtocolViolationError(f"non-numeric box record: {line!r}") from None
                if w <= 0 or h <= 0 or not np.isfinite(score):
                    continue
                clipped = BBox(x, y, w, h).clip_to(image.width, image.height)
                if clipped is not None:
                    boxes.append(ScoredBox(clipped, score, self._source))
        except queue.Empty:
            self._stop()
            raise DetectorTimeoutError(
                f"no response within {self.timeout}s; child restarted"
            ) from None
        except ProtocolViolationError:
            # the stream may hold leftover garbage; resync by restarting
            self._stop()
            raise
        boxes.sort(key=lambda b: -b.score)
        return boxes


class ExternalDetector(_ChildProcessClient):
    """Detector bridge. Request: ``DETECT <frame_path> [<x> <y> <w> <h>]``;
    response: ``OK <n>`` then n ``BOX <x> <y> <w> <h> <score>`` lines, or
    ``ERR <message>``."""

    def detect(self, image: ImageBuffer, roi: BBox | None = None) -> list[ScoredBox]:
        request = f"DETECT {self._frame_path(image)}"
        if roi is not None:
            request += f" {roi.x} {roi.y} {roi.w} {roi.h}"
        return self._request_boxes(request, image)


class ExternalTracker(_ChildProcessClient):
    """Tracker bridge using the same line protocol with INIT/TRACK verbs.

    ``INIT <frame_path> <x> <y> <w> <h>`` seeds the child; ``TRACK
    <frame_path>`` asks for exactly one box. Both answer OK/BOX or ERR.
    """

    _source = "tracker"

    def __init__(self, command: list[str], timeout: float = 10.0):
        super().__init__(command, timeout)
        self._initialized = False

    def init(self, image: ImageBuffer, box: BBox) -> ScoredBox:
        request = f"INIT {self._frame_path(image)} {box.x} {box.y} {box.w} {box.h}"
        self._request_boxes(request, image)
        self._initialized = True
        return ScoredBox(box, 1.0, "tracker")

    def update(self, image: ImageBuffer) -> ScoredBox:
        if not self._initialized:
            raise TrackerNotInitializedError("update() before init()")
        boxes = self._request_boxes(f"TRACK {self._frame_path(image)}", image)
        if len(boxes) != 1:
            raise ProtocolViolationError(f"tracker must return exactly one box, got {len(boxes)}")
        return boxes[0]
