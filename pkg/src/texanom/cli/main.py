"""Command-line entry point.

Exit codes: 0 success, 2 usage/configuration/input error, 3 runtime or
numerical failure. Verbosity follows the TEXANOM_LOG environment variable.
"""

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from ..models.errors import TexAnomError
from ..utils.log_config import configure_logging
from . import commands

logger = logging.getLogger(__name__)

USAGE_ERROR = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--threads", type=int, help="Worker threads for batch/patch parallelism")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="Force single-threaded, bit-reproducible execution",
    )
    parser.add_argument("--seed", type=int, help="Override the top-level seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texanom",
        description="Texture anomaly detection with a CW-SSIM trained autoencoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train an autoencoder on normal images")
    _add_common(train)
    train.add_argument("--out", help="Output directory (default: output_dir from config)")
    train.set_defaults(handler=commands.cmd_train)

    score = sub.add_parser("score", help="Write the anomaly map of one image")
    _add_common(score)
    score.add_argument("--model", help="Model file")
    score.add_argument("--image", required=True, help="Image to score")
    score.add_argument("--out", required=True, help="Anomaly map file to write")
    score.add_argument("--gamma", type=float, help="Also write a thresholded mask")
    score.add_argument("--erode-radius", type=int, help="Disk radius for post-processing")
    score.set_defaults(handler=commands.cmd_score)

    calibrate = sub.add_parser("calibrate", help="Calibrate the threshold on validation images")
    _add_common(calibrate)
    calibrate.add_argument("--model", help="Model file")
    calibrate.add_argument("--out", help="Calibration JSON to write")
    calibrate.set_defaults(handler=commands.cmd_calibrate)

    evaluate = sub.add_parser("evaluate", help="Evaluate pixel AUC and defect coverage")
    _add_common(evaluate)
    evaluate.add_argument("--model", help="Model file")
    evaluate.add_argument("--gamma", type=float, help="Threshold for defect coverage")
    evaluate.add_argument("--erode-radius", type=int, help="Disk radius for post-processing")
    evaluate.add_argument("--out", help="Report JSON to write")
    evaluate.add_argument("--maps-dir", help="Also dump every test anomaly map here")
    evaluate.set_defaults(handler=commands.cmd_evaluate)

    reconstruct = sub.add_parser("reconstruct", help="Write the full-image reconstruction")
    _add_common(reconstruct)
    reconstruct.add_argument("--model", help="Model file")
    reconstruct.add_argument("--image", required=True, help="Image to reconstruct")
    reconstruct.add_argument("--out", required=True, help="PNG file to write")
    reconstruct.set_defaults(handler=commands.cmd_reconstruct)

    synth = sub.add_parser("synth", help="Generate a synthetic stripe-texture dataset")
    synth.add_argument("--out", required=True, help="Dataset directory")
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(handler=commands.cmd_synth)
    return parser


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{field}: {item['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()

    try:
        return args.handler(args)
    except ValidationError as e:
        print(_format_validation_error(e), file=sys.stderr)
        return USAGE_ERROR
    except TexAnomError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
