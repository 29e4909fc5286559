"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.
"""

import argparse
import json
import sys
from pathlib import Path

from .backbone import load_backbone
from .errors import DataError, ModelError
from .ingest import load_image, scan_dataset
from .pipeline import DetectorConfig, detect, evaluate, write_json
from .selection import build_dictionary, load_dictionary, save_dictionary
from .synth import generate_corpus

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


def _add_backbone_args(p: argparse.ArgumentParser):
    p.add_argument("--backbone", default=None,
                   help="model file (omit for a stub-kind metadata file)")
    p.add_argument("--meta", required=True, help="backbone metadata JSON")


def _add_detector_args(p: argparse.ArgumentParser):
    p.add_argument("--selector", choices=["cosine", "sift-flann"], default="cosine")
    p.add_argument("--sp", type=float, default=None,
                   help="similarity threshold (default 0.75 cosine / 0.70 sift-flann)")
    p.add_argument("--alpha", type=float, default=0.7, help="ratio-test factor")
    p.add_argument("--model", choices=["mvg", "ocsvm"], default="mvg")
    p.add_argument("--shrinkage", type=float, default=0.01)
    p.add_argument("--nu", type=float, default=0.05)
    p.add_argument("--gamma", default="auto")
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--fallback-k", type=int, default=5)
    p.add_argument("--checks", type=int, default=32,
                   help="approximate-search leaf budget for keypoint matching")
    p.add_argument("--seed", type=int, default=0)


def _detector_config(args) -> DetectorConfig:
    gamma = args.gamma
    if gamma != "auto":
        gamma = float(gamma)
    return DetectorConfig(
        selector=args.selector, sp=args.sp, alpha=args.alpha, model=args.model,
        shrinkage=args.shrinkage, nu=args.nu, gamma=gamma, margin=args.margin,
        fallback_k=args.fallback_k, checks=args.checks, seed=args.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adws",
        description="Online-adaptive anomaly detection over deep feature embeddings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dict", help="extract features from training images")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--layout", choices=["mvtec", "flat"], default="mvtec")
    _add_backbone_args(p)
    p.add_argument("--out", required=True, help="output dictionary file")
    p.add_argument("--no-sift", action="store_true",
                   help="skip keypoint extraction (cosine-only dictionaries)")

    p = sub.add_parser("detect", help="score a single image")
    p.add_argument("--dict", required=True, dest="dict_path")
    _add_backbone_args(p)
    p.add_argument("--image", required=True)
    _add_detector_args(p)
    p.add_argument("--report", default=None, help="write the report JSON here")
    p.add_argument("--heatmap", default=None, help="write a localization PNG here")

    p = sub.add_parser("evaluate", help="score a test set and aggregate metrics")
    p.add_argument("--dict", required=True, dest="dict_path")
    _add_backbone_args(p)
    p.add_argument("--testdir", required=True)
    p.add_argument("--layout", choices=["mvtec", "flat"], default="mvtec")
    _add_detector_args(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--json", default=None, dest="json_path")

    p = sub.add_parser("synth", help="generate a synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--normals", type=int, default=40)
    p.add_argument("--anomalies", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=30)

    return parser


def _cmd_build_dict(args) -> int:
    backbone = load_backbone(args.backbone, args.meta)
    idx = scan_dataset(args.data, layout=args.layout)
    d = build_dictionary(idx, backbone, with_sift=not args.no_sift)
    save_dictionary(d, args.out)
    print(f"wrote {len(d)} entries to {args.out}")
    return EXIT_OK


def _cmd_detect(args) -> int:
    backbone = load_backbone(args.backbone, args.meta)
    d = load_dictionary(args.dict_path, expected_model_id=backbone.model_id)
    cfg = _detector_config(args)
    img = load_image(args.image)
    report = detect(d, img, cfg, backbone, image_id=Path(args.image).stem)
    if args.report:
        write_json(report.to_dict(), args.report)
    if args.heatmap:
        from .heatmap import render_heatmap

        png = render_heatmap(report.score_map, img, report.tau)
        Path(args.heatmap).write_bytes(png)
    print(json.dumps(
        {k: report.to_dict()[k] for k in ("image_id", "image_score", "tau", "verdict")}
    ))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    backbone = load_backbone(args.backbone, args.meta)
    d = load_dictionary(args.dict_path, expected_model_id=backbone.model_id)
    cfg = _detector_config(args)
    idx = scan_dataset(args.testdir, layout=args.layout)
    report = evaluate(d, idx, cfg, backbone,
                      csv_path=args.csv, json_path=args.json_path)
    summary = {
        "dataset": report.dataset, "accuracy": report.accuracy, "f1": report.f1,
        "auroc": report.auroc, "pct_saved_mean": report.pct_saved_mean,
    }
    print(json.dumps(summary))
    return EXIT_OK


def _cmd_synth(args) -> int:
    manifest = generate_corpus(args.out, normals=args.normals,
                               anomalies=args.anomalies, seed=args.seed,
                               train=args.train)
    n_test = len(manifest["test"])
    print(f"wrote {len(manifest['train'])} train and {n_test} test images to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "build-dict": _cmd_build_dict,
    "detect": _cmd_detect,
    "evaluate": _cmd_evaluate,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help; fold into our codes
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
