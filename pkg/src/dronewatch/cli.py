"""dronewatch command line: augment, simulate, residual, monitor, eval, compare."""
from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

from . import augment as aug
from . import evaluate as ev
from .config import ConfigError, RunConfig, load_run_config
from .fusion import run_monitor
from .imaging import BBox, read_image
from .plugins import (
    ExternalDetector,
    ExternalTracker,
    PluginError,
    ResidualBlobTracker,
    ScoredBox,
    TemplateDetector,
)
from .report import save_curve_figure
from .residual import numbered_frames, residual_sequence


class CliError(RuntimeError):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, required=True, help="output file or directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress chatter")


def _config(args, **overrides) -> RunConfig:
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_run_config(args.config, overrides)


def _parse_box(text: str) -> BBox:
    try:
        x, y, w, h = (float(v) for v in text.split(","))
        return BBox(x, y, w, h)
    except ValueError as err:
        raise CliError(f"bad box {text!r}; expected x,y,w,h") from err


def _parse_point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
        return (x, y)
    except ValueError as err:
        raise CliError(f"bad point {text!r}; expected x,y") from err


def cmd_augment(args) -> int:
    cfg = _config(args, backgrounds=args.backgrounds, assets=args.assets)
    if not cfg.backgrounds or not cfg.assets:
        raise CliError("augment needs --backgrounds and --assets manifests (or config keys)")
    records = aug.generate_dataset(
        cfg.backgrounds, cfg.assets, cfg.augmentation_policy(), args.count, args.out,
        voc=args.voc,
    )
    if not args.quiet:
        print(f"wrote {len(records)} samples under {args.out}")
    print(f"manifest: {Path(args.out) / 'manifest.json'}")
    print(f"annotations: {Path(args.out) / 'annotations.txt'}")
    return 0


def _simulation_path(args) -> list[tuple[float, float] | None]:
    if args.path_file:
        points: list[tuple[float, float] | None] = []
        for line in Path(args.path_file).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            points.append(_parse_point(line) if line else None)
        return points
    if args.start is None or args.end is None or args.frames_count is None:
        raise CliError("simulate needs --path-file or all of --start/--end/--frames")
    x0, y0 = _parse_point(args.start)
    x1, y1 = _parse_point(args.end)
    n = args.frames_count
    if n < 2:
        raise CliError("--frames must be at least 2")
    points = [
        (x0 + (x1 - x0) * i / (n - 1), y0 + (y1 - y0) * i / (n - 1)) for i in range(n)
    ]
    if args.absent:
        try:
            a, b = (int(v) for v in args.absent.split(":"))
        except ValueError as err:
            raise CliError(f"bad --absent {args.absent!r}; expected first:last") from err
        for i in range(a - 1, b):
            if 0 <= i < n:
                points[i] = None
    return points


def cmd_simulate(args) -> int:
    background = read_image(args.background)
    asset = aug.load_foreground_asset(args.asset)
    track = aug.simulate_sequence(background, asset, _simulation_path(args), args.out)
    if not args.quiet:
        present = sum(1 for b in track if b is not None)
        print(f"wrote {len(track)} frames ({present} with target) under {args.out}")
    print(f"ground truth: {Path(args.out) / 'groundtruth.csv'}")
    return 0


def cmd_residual(args) -> int:
    cfg = _config(args, compensate=args.compensate or None, window=args.window)
    count = residual_sequence(args.frames, cfg.compensate, cfg.window, args.out)
    if not args.quiet:
        print(f"wrote {count} residual frames under {args.out}")
    return 0


def _build_detector(cfg: RunConfig):
    if cfg.detector == "none":
        return None
    if cfg.detector == "template":
        if not cfg.templates:
            raise CliError("template detector needs a --templates manifest")
        assets = [aug.load_foreground_asset(p) for p in aug.load_manifest(cfg.templates)]
        return TemplateDetector(assets, stride=cfg.stride, scales=cfg.scale_list(),
                                top_k=cfg.top_k)
    if cfg.detector == "external":
        if not cfg.detector_cmd:
            raise CliError("external detector needs --detector-cmd")
        return ExternalDetector(shlex.split(cfg.detector_cmd), timeout=cfg.timeout)
    raise CliError(f"unknown detector {cfg.detector!r}")


def _build_tracker(cfg: RunConfig):
    if cfg.tracker == "none":
        return None
    if cfg.tracker == "blob":
        return ResidualBlobTracker()
    if cfg.tracker == "external":
        if not cfg.tracker_cmd:
            raise CliError("external tracker needs --tracker-cmd")
        return ExternalTracker(shlex.split(cfg.tracker_cmd), timeout=cfg.timeout)
    raise CliError(f"unknown tracker {cfg.tracker!r}")


def cmd_monitor(args) -> int:
    cfg = _config(
        args,
        detector=args.detector,
        tracker=args.tracker,
        templates=str(args.templates) if args.templates else None,
        detector_cmd=args.detector_cmd,
        tracker_cmd=args.tracker_cmd,
        compensate=args.compensate or None,
        window=args.window,
        accept_floor=args.accept_floor,
        lost_patience=args.lost_patience,
    )
    frames = numbered_frames(args.frames)
    detector = _build_detector(cfg)
    tracker = _build_tracker(cfg)
    seed_box = _parse_box(args.seed_box) if args.seed_box else None
    try:
        rows = run_monitor(
            frames, detector, tracker, cfg.fusion_params(),
            compensate=cfg.compensate, window=cfg.window, seed_box=seed_box,
        )
    finally:
        for plugin in (detector, tracker):
            if hasattr(plugin, "close"):
                plugin.close()
    ev.write_results_csv(rows, args.out)
    accepted = sum(1 for r in rows if r.box is not None)
    print(f"final mode: {rows[-1].mode}; accepted {accepted} of {len(rows)} frames")
    if not args.quiet:
        print(f"results: {args.out}")
    return 0


def _detection_inputs(results_path: Path, gt_path: Path):
    results = ev.read_boxes_csv(results_path)
    gt = ev.read_boxes_csv(gt_path)
    frames = sorted(gt)
    if sorted(results) != frames:
        raise ev.EvalInputError(
            f"frame sets differ: {results_path} has {len(results)}, {gt_path} has {len(frames)}"
        )
    detections = []
    truths = []
    for f in frames:
        dets = []
        for box, score in results[f]:
            if box is None:
                continue
            if score is None:
                raise ev.EvalInputError(f"{results_path}: frame {f} lacks a confidence score")
            dets.append(ScoredBox(box, score, "detector"))
        detections.append(dets)
        truths.append([box for box, _ in gt[f] if box is not None])
    return detections, truths


def cmd_eval(args) -> int:
    if args.mode == "detection":
        detections, truths = _detection_inputs(args.results, args.gt)
        curve, auc = ev.pr_curve(detections, truths, args.iou_thresh)
        label = "precision-recall"
    else:
        gt_track = ev.read_track_csv(args.gt)
        frames = sorted(gt_track)
        pred = ev.align_track(ev.read_track_csv(args.results), frames, Path(args.results))
        curve, auc = ev.success_curve(pred, [gt_track[f][0] for f in frames])
        label = "success rate"
    ev.write_curve_csv(curve, args.out)
    if not args.no_plot:
        figure = Path(args.out).with_suffix(".png")
        save_curve_figure([(label, curve)], figure, title=f"{label} (AUC {auc:.5f})")
        if not args.quiet:
            print(f"figure: {figure}")
    print(f"AUC {auc:.5f}")
    return 0


def cmd_compare(args) -> int:
    report = ev.compare_runs(args.run_a, args.run_b, args.gt)
    ev.write_compare_csv(report, args.out)
    if not args.no_plot:
        figure = Path(args.out).with_suffix(".png")
        save_curve_figure(
            [(Path(args.run_a).stem, report.curve_a), (Path(args.run_b).stem, report.curve_b)],
            figure,
            title=f"success rate: difference {report.difference:+.5f}",
        )
        if not args.quiet:
            print(f"figure: {figure}")
    print(f"AUC_A {report.auc_a:.5f}")
    print(f"AUC_B {report.auc_b:.5f}")
    print(f"difference {report.difference:+.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dronewatch",
        description="drone monitoring pipeline: augmentation, residuals, fused monitoring, metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="generate an annotated synthetic dataset")
    _add_common(p)
    p.add_argument("--backgrounds", help="manifest of background image paths")
    p.add_argument("--assets", help="manifest of RGBA sprite paths")
    p.add_argument("-n", "--count", type=int, required=True, help="number of samples")
    p.add_argument("--voc", action="store_true", help="also write PASCAL-VOC XML")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("simulate", help="render a moving-target test sequence")
    _add_common(p)
    p.add_argument("--background", type=Path, required=True)
    p.add_argument("--asset", type=Path, required=True)
    p.add_argument("--path-file", type=Path, help="one 'x,y' center per frame; blank = absent")
    p.add_argument("--start", help="first center as x,y")
    p.add_argument("--end", help="last center as x,y")
    p.add_argument("--frames", dest="frames_count", type=int, help="number of frames")
    p.add_argument("--absent", help="1-based inclusive frame range first:last without target")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("residual", help="write residual frames for a sequence")
    _add_common(p)
    p.add_argument("--frames", type=Path, required=True, help="directory of numbered PNGs")
    p.add_argument("--compensate", action="store_true", help="global translation compensation")
    p.add_argument("--window", type=int, help="compensation search window (pixels)")
    p.set_defaults(handler=cmd_residual)

    p = sub.add_parser("monitor", help="run the fused detector/tracker over a sequence")
    _add_common(p)
    p.add_argument("--frames", type=Path, required=True, help="directory of numbered PNGs")
    p.add_argument("--detector", choices=["template", "external", "none"])
    p.add_argument("--tracker", choices=["blob", "external", "none"])
    p.add_argument("--templates", type=Path, help="manifest of template sprites")
    p.add_argument("--detector-cmd", help="external detector command line")
    p.add_argument("--tracker-cmd", help="external tracker command line")
    p.add_argument("--compensate", action="store_true")
    p.add_argument("--window", type=int)
    p.add_argument("--seed-box", help="x,y,w,h start box (tracker-only runs)")
    p.add_argument("--accept-floor", type=float)
    p.add_argument("--lost-patience", type=int)
    p.set_defaults(handler=cmd_monitor)

    p = sub.add_parser("eval", help="score a results file against ground truth")
    _add_common(p)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--mode", choices=["detection", "tracking"], required=True)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("compare", help="compare two runs against one ground truth")
    _add_common(p)
    p.add_argument("--run-a", type=Path, required=True)
    p.add_argument("--run-b", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (CliError, ConfigError, ev.EvalInputError, PluginError, ValueError, OSError) as err:
        print(f"dronewatch {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
