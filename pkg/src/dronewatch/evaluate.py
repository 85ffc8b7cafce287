"""Detection and tracking metrics: IoU, precision-recall with AP, and the
success-rate curve with its AUC, plus the CSV formats the pipeline exchanges.

Results and ground-truth files are CSV with a header line and one row per
frame: frame, [mode,] x, y, w, h, score, with box and score fields left
empty for rejected frames. Columns are resolved by header name.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import MonitorRow
from .imaging import BBox, bbox_intersection_area, bbox_union_area
from .plugins import ScoredBox

SUCCESS_THRESHOLDS = np.arange(101) / 100.0


class EvalInputError(ValueError):
    """Results/ground-truth files failed to parse or align."""


@dataclass(frozen=True)
class Curve:
    """Ordered (x, y) points, all values in [0, 1].

    Precision-recall curves may repeat an x (recall stalls while false
    positives accumulate); the success-curve threshold grid is strictly
    increasing.
    """

    points: tuple[tuple[float, float], ...]
    kind: str  # "precision_recall" | "success_rate"

    def __post_init__(self):
        xs = [p[0] for p in self.points]
        if any(b < a for a, b in zip(xs, xs[1:])):
            raise ValueError("curve x must be non-decreasing")
        if any(not (-1e-9 <= v <= 1 + 1e-9) for p in self.points for v in p):
            raise ValueError("curve values must lie in [0, 1]")


@dataclass(frozen=True)
class MatchResult:
    """TP/FP/FN counts for a detection set at one confidence cutoff."""

    true_positives: int
    false_positives: int
    false_negatives: int


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    inter = bbox_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / bbox_union_area(a, b)


def match_detections(
    detections: list[list[ScoredBox]],
    ground_truth: list[list[BBox]],
    iou_thresh: float,
) -> list[tuple[float, bool]]:
    """Pool detections over images and mark each TP or FP.

    Processing order is descending score with input order breaking ties;
    each detection greedily takes the highest-IoU unmatched ground-truth
    box of its image, a TP only when that IoU reaches the threshold.
    """
    if len(detections) != len(ground_truth):
        raise EvalInputError("detections and ground truth must cover the same images")
    pooled = []
    order = 0
    for img, dets in enumerate(detections):
        for d in dets:
            pooled.append((-d.score, order, img, d))
            order += 1
    pooled.sort(key=lambda t: (t[0], t[1]))
    taken = [set() for _ in ground_truth]
    outcomes = []
    for _, _, img, det in pooled:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(ground_truth[img]):
            if j in taken[img]:
                continue
            v = iou(det.box, gt)
            if v > best_iou:
                best_iou, best_j = v, j
        hit = best_j >= 0 and best_iou >= iou_thresh
        if hit:
            taken[img].add(best_j)
        outcomes.append((det.score, hit))
    return outcomes


def match_counts(
    detections: list[list[ScoredBox]],
    ground_truth: list[list[BBox]],
    iou_thresh: float = 0.5,
    score_floor: float | None = None,
) -> MatchResult:
    """Counts at one confidence cutoff; TP + FN always equals the GT total."""
    total_gt = sum(len(g) for g in ground_truth)
    outcomes = match_detections(detections, ground_truth, iou_thresh)
    kept = [hit for score, hit in outcomes if score_floor is None or score >= score_floor]
    tp = sum(kept)
    return MatchResult(tp, len(kept) - tp, total_gt - tp)


def pr_curve(
    detections: list[list[ScoredBox]],
    ground_truth: list[list[BBox]],
    iou_thresh: float = 0.5,
) -> tuple[Curve, float]:
    """Precision-recall over the confidence sweep and its trapezoidal AUC.

    One point per distinct score; the curve is anchored at recall 0 with
    the first point's precision before integrating. Empty inputs give an
    empty curve and AUC 0.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError("iou_thresh must be in (0, 1]")
    total_gt = sum(len(g) for g in ground_truth)
    outcomes = match_detections(detections, ground_truth, iou_thresh)
    if not outcomes or total_gt == 0:
        return Curve((), "precision_recall"), 0.0
    points = []
    tp = fp = 0
    for i, (score, hit) in enumerate(outcomes):
        tp += int(hit)
        fp += int(not hit)
        last_of_group = i + 1 == len(outcomes) or outcomes[i + 1][0] != score
        if last_of_group:
            points.append((tp / total_gt, tp / (tp + fp)))
    curve = Curve(tuple(points), "precision_recall")
    return curve, pr_auc(points)


def pr_auc(points: list[tuple[float, float]]) -> float:
    """Trapezoid over recall, anchored at (0, first precision)."""
    if not points:
        return 0.0
    area = points[0][0] * points[0][1]
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        area += (r1 - r0) * (p1 + p0) / 2.0
    return area


def success_curve(
    pred: list[BBox | None],
    gt: list[BBox | None],
) -> tuple[Curve, float]:
    """Success rate over the IoU-threshold grid {0.00 .. 1.00} and its AUC.

    A frame succeeds at threshold t when its IoU is strictly greater than
    t; rejected predictions score IoU 0. Frames whose ground truth has no
    box (target out of view) are excluded from the count.
    """
    if len(pred) != len(gt):
        raise EvalInputError(f"length mismatch: {len(pred)} predictions vs {len(gt)} truths")
    ious = []
    for p, g in zip(pred, gt):
        if g is None:
            continue
        ious.append(0.0 if p is None else iou(p, g))
    if not ious:
        return Curve((), "success_rate"), 0.0
    arr = np.asarray(ious)
    rates = [(float(np.count_nonzero(arr > t)) / arr.size) for t in SUCCESS_THRESHOLDS]
    auc = float(np.trapezoid(rates, SUCCESS_THRESHOLDS))
    curve = Curve(tuple(zip((float(t) for t in SUCCESS_THRESHOLDS), rates)), "success_rate")
    return curve, auc


@dataclass(frozen=True)
class CompareReport:
    auc_a: float
    auc_b: float
    difference: float
    curve_a: Curve
    curve_b: Curve


def compare_runs(run_a: str | Path, run_b: str | Path, gt: str | Path) -> CompareReport:
    """Success-curve AUCs of two runs against one ground truth."""
    gt_track = read_track_csv(gt)
    frames = sorted(gt_track)
    track_a = align_track(read_track_csv(run_a), frames, Path(run_a))
    track_b = align_track(read_track_csv(run_b), frames, Path(run_b))
    gt_boxes = [gt_track[f][0] for f in frames]
    curve_a, auc_a = success_curve(track_a, gt_boxes)
    curve_b, auc_b = success_curve(track_b, gt_boxes)
    return CompareReport(auc_a, auc_b, auc_a - auc_b, curve_a, curve_b)


def align_track(track: dict[int, tuple[BBox | None, float | None]], frames: list[int],
                source: Path) -> list[BBox | None]:
    missing = [f for f in frames if f not in track]
    if missing or len(track) != len(frames):
        raise EvalInputError(
            f"{source}: frame set does not match ground truth "
            f"({len(track)} rows vs {len(frames)} frames)"
        )
    return [track[f][0] for f in frames]


# ---------------------------------------------------------------------------
# CSV formats


def write_results_csv(rows: list[MonitorRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["frame,mode,x,y,w,h,score"]
    for r in rows:
        if r.box is None:
            lines.append(f"{r.frame},{r.mode},,,,,")
        else:
            b = r.box
            lines.append(
                f"{r.frame},{r.mode},{b.x:.2f},{b.y:.2f},{b.w:.2f},{b.h:.2f},{r.score:.5f}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _parse_row(header: dict[str, int], row: list[str], path: Path, line_no: int
               ) -> tuple[int, BBox | None, float | None]:
    try:
        frame = int(row[header["frame"]])
        cells = [row[header[k]].strip() if header.get(k) is not None and header[k] < len(row) else ""
                 for k in ("x", "y", "w", "h", "score")]
        if cells[0].upper() == "REJECT" or (not cells[0] and not cells[1]):
            return frame, None, None
        x, y, w, h = (float(c) for c in cells[:4])
        score = float(cells[4]) if cells[4] else None
        return frame, BBox(x, y, w, h), score
    except (KeyError, IndexError, ValueError) as err:
        raise EvalInputError(f"{path}:{line_no}: bad row {row!r} ({err})") from err


def read_boxes_csv(path: str | Path) -> dict[int, list[tuple[BBox | None, float | None]]]:
    """Rows grouped by frame index; a row with empty box fields maps to None."""
    path = Path(path)
    out: dict[int, list[tuple[BBox | None, float | None]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header_row = next(reader)
        except StopIteration:
            raise EvalInputError(f"{path}: empty file") from None
        header = {name.strip().lower(): i for i, name in enumerate(header_row)}
        if "frame" not in header or "x" not in header:
            raise EvalInputError(f"{path}: missing frame/x columns in header {header_row}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            frame, box, score = _parse_row(header, row, path, line_no)
            out.setdefault(frame, []).append((box, score))
    if not out:
        raise EvalInputError(f"{path}: no data rows")
    return out


def read_track_csv(path: str | Path) -> dict[int, tuple[BBox | None, float | None]]:
    """One box (or None) per frame; duplicate frame rows are rejected."""
    grouped = read_boxes_csv(path)
    track = {}
    for frame, entries in grouped.items():
        boxed = [e for e in entries if e[0] is not None]
        if len(boxed) > 1:
            raise EvalInputError(f"{path}: frame {frame} has {len(boxed)} boxes; expected one")
        track[frame] = boxed[0] if boxed else (None, None)
    return track


def write_curve_csv(curve: Curve, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x_name = "recall" if curve.kind == "precision_recall" else "threshold"
    lines = [f"{x_name},value"]
    lines += [f"{x:.5f},{y:.5f}" for x, y in curve.points]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_compare_csv(report: CompareReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["threshold,run_a,run_b"]
    for (t, a), (_, b) in zip(report.curve_a.points, report.curve_b.points):
        lines.append(f"{t:.5f},{a:.5f},{b:.5f}")
    lines.append(f"# auc_a={report.auc_a:.5f} auc_b={report.auc_b:.5f} "
                 f"difference={report.difference:.5f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
