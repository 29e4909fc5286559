"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 weights unavailable, 3 export
validation failure.
"""

import argparse
import sys

from .errors import ExportValidationFailure, WeightsUnavailable
from .export import export_backbone

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_WEIGHTS = 2
EXIT_VALIDATION = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="b4export",
        description="Serialize a truncated EfficientNet-B4 feature extractor",
    )
    parser.add_argument("--tap", type=int, default=7,
                        help="feature block whose output to export (1-7)")
    parser.add_argument("--out", default="backbone.onnx",
                        help="output model file")
    parser.add_argument("--meta", default="backbone.json",
                        help="output metadata JSON")
    parser.add_argument("--weights", default="imagenet",
                        help='"imagenet", a state-dict path, or "random"')
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed when --weights random")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    weights = None if args.weights == "random" else args.weights
    try:
        manifest = export_backbone(tap=args.tap, out_model=args.out,
                                   out_meta=args.meta, weights=weights,
                                   seed=args.seed)
    except WeightsUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except ExportValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    shape = "x".join(str(d) for d in manifest.output_shape)
    print(f"wrote {manifest.model_id} ({shape}) to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
