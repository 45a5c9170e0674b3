"""Subcommand handlers: train, score, calibrate, evaluate, reconstruct, synth."""

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from ..core.detector import AnomalyDetector
from ..core.trainer import train
from ..models.config import InferenceConfig, RunConfig
from ..models.errors import ConfigurationError
from ..models.images import AnomalyMap, GrayImage
from ..models.results import CalibrationRecord
from ..utils.config_io import (
    FROZEN_CONFIG_NAME,
    config_hash,
    load_run_config,
    write_run_config,
)
from ..utils.data_loader import DataLoader
from ..utils.image_io import load_image, save_image, save_mask, write_anomaly_map
from ..utils.model_io import save_model
from ..utils.synthetic import write_synthetic_dataset

logger = logging.getLogger(__name__)

MODEL_NAME = "model.cwae"
LOSS_CSV_NAME = "loss.csv"
CALIBRATION_NAME = "calibration.json"
REPORT_NAME = "report.json"


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    seed = getattr(args, "seed", None)
    if seed is not None:
        out["seed"] = seed
        out["train"] = {"seed": seed}
    threads = 1 if getattr(args, "deterministic", False) else getattr(args, "threads", None)
    if threads is not None:
        out.setdefault("train", {})["threads"] = threads
        out["inference"] = {"threads": threads}
    radius = getattr(args, "erode_radius", None)
    if radius is not None:
        out.setdefault("inference", {})["erosion_radius"] = radius
    return out


def _run_config(args: argparse.Namespace) -> Optional[RunConfig]:
    if getattr(args, "config", None) is None:
        return None
    return load_run_config(args.config, _overrides(args))


def _inference_config(args: argparse.Namespace, cfg: Optional[RunConfig]) -> InferenceConfig:
    if cfg is not None:
        return cfg.inference
    overrides = _overrides(args).get("inference", {})
    return InferenceConfig(**overrides)


def _model_path(args: argparse.Namespace, cfg: Optional[RunConfig]) -> Path:
    if getattr(args, "model", None):
        return Path(args.model)
    if cfg is not None:
        return cfg.output_dir / MODEL_NAME
    raise ConfigurationError("--model is required when no --config is given")


def _require_config(args: argparse.Namespace) -> RunConfig:
    cfg = _run_config(args)
    if cfg is None:
        raise ConfigurationError(f"'{args.command}' requires --config")
    return cfg


def _write_json(document: str, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document + "\n", encoding="utf-8")
    return path


def cmd_train(args: argparse.Namespace) -> int:
    """Train a model; write the model file, loss CSV and frozen config."""
    cfg = _require_config(args)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    loader = DataLoader(cfg.dataset)
    params, history = train(
        loader.index, cfg.train_config(), cfg.architecture, cfg.cwssim, loader
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(params, out_dir / MODEL_NAME)
    (out_dir / LOSS_CSV_NAME).write_text(history.to_csv(), encoding="utf-8")
    write_run_config(cfg, out_dir / FROZEN_CONFIG_NAME)
    print(f"Model written to {out_dir / MODEL_NAME}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    """Write the anomaly map (and with --gamma the post-processed mask)."""
    cfg = _run_config(args)
    detector = AnomalyDetector.from_file(_model_path(args, cfg), _inference_config(args, cfg))
    scores = detector.score(load_image(args.image))
    out = Path(args.out)
    map_path, preview = write_anomaly_map(scores, out)
    print(f"Anomaly map written to {map_path} (preview {preview})")
    if args.gamma is not None:
        mask = detector.mask(scores, args.gamma)
        mask_path = save_mask(mask, out.with_name(out.stem + "_mask.png"))
        print(f"Mask written to {mask_path} ({mask.positive_count} anomalous pixels)")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    """Calibrate gamma on the configured validation set."""
    cfg = _require_config(args)
    if not cfg.dataset.validation:
        raise ConfigurationError("dataset.validation lists no (image, mask) pairs")
    detector = AnomalyDetector.from_file(_model_path(args, cfg), cfg.inference)
    record = detector.calibrate(cfg.dataset.validation)
    out = Path(args.out) if args.out else cfg.output_dir / CALIBRATION_NAME
    _write_json(record.model_dump_json(indent=2), out)
    print(f"gamma={record.gamma!r} (FPR {record.achieved_fpr:.4f}) written to {out}")
    return 0


def _gamma(args: argparse.Namespace, cfg: RunConfig) -> Optional[float]:
    if args.gamma is not None:
        return args.gamma
    record_path = cfg.output_dir / CALIBRATION_NAME
    if record_path.is_file():
        record = CalibrationRecord.model_validate_json(record_path.read_text(encoding="utf-8"))
        return record.gamma
    return None


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Score every test image and write the evaluation report."""
    cfg = _require_config(args)
    detector = AnomalyDetector.from_file(_model_path(args, cfg), cfg.inference)
    loader = DataLoader(cfg.dataset)
    report = detector.evaluate(
        loader,
        gamma=_gamma(args, cfg),
        map_dir=args.maps_dir,
        config_hash=config_hash(cfg),
    )
    out = Path(args.out) if args.out else cfg.output_dir / REPORT_NAME
    _write_json(report.model_dump_json(indent=2), out)
    print(json.dumps({"auc": report.auc, "normalized_auc_03": report.normalized_auc_03}))
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    """Write the full-image reconstruction as PNG plus a lossless map-format copy."""
    cfg = _run_config(args)
    detector = AnomalyDetector.from_file(_model_path(args, cfg), _inference_config(args, cfg))
    reconstruction: GrayImage = detector.reconstruct(load_image(args.image))
    out = Path(args.out)
    save_image(reconstruction, out)
    lossless, _ = write_anomaly_map(
        AnomalyMap(data=reconstruction.data), out.with_suffix(".tam")
    )
    print(f"Reconstruction written to {out} and {lossless}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    """Generate a synthetic stripe-texture dataset with a desk-scale config."""
    config_path = write_synthetic_dataset(args.out, seed=args.seed or 0)
    print(f"Synthetic dataset written; config at {config_path}")
    return 0
