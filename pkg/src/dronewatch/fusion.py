"""Confidence calibration, max-fusion, and the SEARCHING/TRACKING monitor.

Raw detector and tracker scores live on their own scales; a sigmoid maps
each into (0, 1) before the per-candidate max. The monitor couples both
plugins over a stream: the detector finds and re-seeds the target, the
tracker follows it between detections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .imaging import BBox, ImageBuffer
from .plugins import Detector, PluginError, ScoredBox, Tracker

SEARCHING = "SEARCHING"
TRACKING = "TRACKING"


@dataclass(frozen=True)
class FusionParams:
    """Sigmoid midpoints/steepness per source, plus the acceptance rule."""

    alpha1: float = 0.5  # detector midpoint
    beta1: float = 10.0
    alpha2: float = 0.5  # tracker midpoint
    beta2: float = 10.0
    accept_floor: float = 0.5
    lost_patience: int = 5
    reseed_from_detector: bool = True

    def __post_init__(self):
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("betas must be strictly positive")
        if not 0.0 <= self.accept_floor <= 1.0:
            raise ValueError("accept_floor must be in [0, 1]")
        if self.lost_patience < 1:
            raise ValueError("lost_patience must be >= 1")


@dataclass(frozen=True)
class MonitorState:
    mode: str = SEARCHING
    last_box: BBox | None = None
    low_streak: int = 0
    frame_index: int = 0

    def __post_init__(self):
        if self.mode not in (SEARCHING, TRACKING):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == TRACKING and self.last_box is None:
            raise ValueError("TRACKING requires a last box")


@dataclass(frozen=True)
class FusionCandidate:
    """Box with whichever raw scores its sources produced."""

    box: BBox
    detector_score: float | None = None
    tracker_score: float | None = None
    source: str | None = None


@dataclass(frozen=True)
class FusionDecision:
    chosen: ScoredBox | None
    rejected: bool

    def __post_init__(self):
        if self.rejected != (self.chosen is None):
            raise ValueError("rejected must mean exactly 'no chosen box'")


def calibrate(score: float, alpha: float, beta: float) -> float:
    """Sigmoid 1 / (1 + e^(-beta (s - alpha))); strictly increasing in s."""
    if beta <= 0:
        raise ValueError("beta must be strictly positive")
    z = beta * (score - alpha)
    # split to avoid overflow for large |z|
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def fuse(sd_cal: float, st_cal: float) -> float:
    """Max-fusion of the two calibrated confidences."""
    return max(sd_cal, st_cal)


def _candidate_source(c: FusionCandidate, sd: float, st: float) -> str:
    if c.source is not None:
        return c.source
    if c.detector_score is not None and c.tracker_score is None:
        return "detector"
    if c.tracker_score is not None and c.detector_score is None:
        return "tracker"
    return "detector" if sd >= st else "tracker"


def select_candidate(candidates: list[FusionCandidate], params: FusionParams) -> FusionDecision:
    """Calibrate, fuse, and argmax; ties break toward the lowest index.

    A missing source contributes 0 to the max, so one absent source never
    blocks fusion. The decision is rejected when there are no candidates
    or the best fused score falls below the acceptance floor.
    """
    best_idx = -1
    best_fused = -1.0
    best_parts = (0.0, 0.0)
    for i, c in enumerate(candidates):
        sd = calibrate(c.detector_score, params.alpha1, params.beta1) if c.detector_score is not None else 0.0
        st = calibrate(c.tracker_score, params.alpha2, params.beta2) if c.tracker_score is not None else 0.0
        fused = fuse(sd, st)
        if fused > best_fused:
            best_idx, best_fused, best_parts = i, fused, (sd, st)
    if best_idx < 0 or best_fused < params.accept_floor:
        return FusionDecision(chosen=None, rejected=True)
    winner = candidates[best_idx]
    source = _candidate_source(winner, *best_parts)
    return FusionDecision(chosen=ScoredBox(winner.box, best_fused, source), rejected=False)


def _box_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def monitor_step(
    state: MonitorState,
    frame: ImageBuffer,
    residual: ImageBuffer,
    detector: Detector | None,
    tracker: Tracker | None,
    params: FusionParams,
) -> tuple[MonitorState, FusionDecision]:
    """Advance the monitor by one frame.

    SEARCHING runs the detector on the full frame and, on acceptance, seeds
    the tracker and switches to TRACKING. TRACKING fuses the tracker's box
    with detections from a region of interest twice the tracked box;
    ``lost_patience`` consecutive rejections drop back to SEARCHING. Plugin
    errors degrade to "that source absent this frame" and never abort.
    """
    next_index = state.frame_index + 1
    if state.mode == SEARCHING:
        detections = _safe_detect(detector, frame, None)
        candidates = [
            FusionCandidate(d.box, detector_score=d.score, source="detector") for d in detections
        ]
        decision = select_candidate(candidates, params)
        if decision.rejected:
            return replace(state, frame_index=next_index), decision
        mode = SEARCHING
        if tracker is not None:
            try:
                tracker.init(residual, decision.chosen.box)
                mode = TRACKING
            except PluginError:
                pass
        return MonitorState(mode, decision.chosen.box, 0, next_index), decision

    tracked: ScoredBox | None = None
    if tracker is not None:
        try:
            tracked = tracker.update(residual)
        except PluginError:
            tracked = None
    roi = (tracked.box if tracked is not None else state.last_box).scaled_about_center(2.0)
    detections = _safe_detect(detector, frame, roi)

    # detector candidates first: on a fused-score tie (a detection co-located
    # with the tracker box lends it the same score) the argmax then prefers
    # the sharper detection, which re-seeds the tracker
    candidates: list[FusionCandidate] = [
        FusionCandidate(d.box, detector_score=d.score, source="detector") for d in detections
    ]
    if tracked is not None:
        co_located = [d.score for d in detections if _box_iou(d.box, tracked.box) >= 0.5]
        candidates.append(
            FusionCandidate(
                tracked.box,
                detector_score=max(co_located) if co_located else None,
                tracker_score=tracked.score,
                source="tracker",
            )
        )
    decision = select_candidate(candidates, params)

    if decision.rejected:
        low = state.low_streak + 1
        if low >= params.lost_patience:
            return MonitorState(SEARCHING, state.last_box, 0, next_index), decision
        return replace(state, low_streak=low, frame_index=next_index), decision

    chosen = decision.chosen
    if chosen.source == "detector" and params.reseed_from_detector and tracker is not None:
        try:
            tracker.init(residual, chosen.box)
        except PluginError:
            pass
    return MonitorState(TRACKING, chosen.box, 0, next_index), decision


def _safe_detect(detector: Detector | None, frame: ImageBuffer, roi: BBox | None) -> list[ScoredBox]:
    if detector is None:
        return []
    try:
        return detector.detect(frame, roi)
    except PluginError:
        return []


@dataclass(frozen=True)
class MonitorRow:
    """One per-frame decision record, as written to the results CSV."""

    frame: int
    mode: str
    box: BBox | None
    score: float | None


def run_monitor(
    frames: list,
    detector: Detector | None,
    tracker: Tracker | None,
    params: FusionParams,
    compensate: bool = False,
    window: int = 8,
    seed_box: BBox | None = None,
) -> list[MonitorRow]:
    """Drive the monitor over a frame sequence, computing residuals on the fly.

    ``frames`` holds paths or ImageBuffers. With ``seed_box`` the tracker is
    initialized on the first frame (that frame reports the seed box), which
    is how a tracker-only run starts without a detector.
    """
    from .imaging import read_image
    from .residual import residual_frame

    state = MonitorState()
    rows: list[MonitorRow] = []
    prev: ImageBuffer | None = None
    for index, frame in enumerate(frames, start=1):
        image = frame if isinstance(frame, ImageBuffer) else read_image(frame)
        residual = residual_frame(prev if prev is not None else image, image, compensate, window)
        if index == 1 and seed_box is not None:
            if tracker is not None:
                try:
                    tracker.init(residual, seed_box)
                    state = MonitorState(TRACKING, seed_box, 0, 1)
                except PluginError:
                    state = replace(state, frame_index=1)
            else:
                state = replace(state, frame_index=1)
            rows.append(MonitorRow(1, state.mode, seed_box, calibrate(1.0, params.alpha2, params.beta2)))
            prev = image
            continue
        state, decision = monitor_step(state, image, residual, detector, tracker, params)
        if decision.rejected:
            rows.append(MonitorRow(index, state.mode, None, None))
        else:
            rows.append(MonitorRow(index, state.mode, decision.chosen.box, decision.chosen.score))
        prev = image
    return rows
