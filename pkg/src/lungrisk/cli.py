#!/usr/bin/env python3
"""
Command-line interface for the lungrisk toolkit.

Exit codes: 0 on success, 1 if any case failed, 2 on usage or
configuration errors. Results go to stdout as ``key=value`` lines; logs
go to stderr.
"""
import argparse
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from . import src as _src_bridge  # noqa: F401

import numpy as np
import pandas as pd

from src.analysis.evaluate import (
    EvaluationError,
    ScoredCase,
    accuracy,
    auc_mann_whitney,
    bucket_counts,
    assign_buckets,
    read_scores_csv,
    roc_curve,
    roc_curve_arrays,
    split,
    write_roc_csv,
    write_scores_csv,
)
from src.config.run_config import RunConfig
from src.config.settings import get_settings
from src.imaging.dicom_ingest import EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN
from src.modeling.inflate3d import Kernel2D, inflate_kernel, read_lvw, write_lvw
from src.modeling.objectives import TrainConfig, TrainResult, predict_proba, train_logistic
from src.phantom.generator import (
    DEFAULT_COHORT_DIMS,
    DEFAULT_COHORT_SPACING_MM,
    DEFAULT_NOISE_SIGMA_HU,
    DEFAULT_POSITIVE_FRAC,
    MANIFEST_NAME,
    generate_cohort,
)
from src.processing.batch_runner import preprocess_batch, read_manifest_frame
from src.utils.error_handling import LungRiskError, UsageError, describe_error
from src.utils.json_serializer import dumps, loads
from src.utils.logging import configure_logging, get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

FEATURE_ID_COLUMNS = ("case_id", "label")


def _emit(**values: object) -> None:
    for key, value in values.items():
        print(f"{key}={value}")


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _triple(values: Sequence, name: str) -> tuple:
    if len(values) == 1:
        return tuple(values) * 3
    if len(values) != 3:
        raise UsageError(f"--{name} takes one or three values, got {len(values)}")
    return tuple(values)


def cmd_preprocess(args: argparse.Namespace) -> int:
    config = RunConfig.from_file(args.config) if args.config else RunConfig.create_default()
    threads = args.threads
    if threads is None and not args.config:
        threads = get_settings().DEFAULT_THREADS
    if threads is not None:
        config = RunConfig.from_dict({**config.to_dict(), "threads": threads})

    report = preprocess_batch(args.manifest, args.out, config, report_path=args.report)
    _emit(**report.totals)
    return EXIT_FAILED if report.failed else EXIT_OK


def cmd_phantom(args: argparse.Namespace) -> int:
    cases = generate_cohort(
        args.out,
        n=args.cases,
        positive_frac=args.positive_frac,
        seed=args.seed,
        dims=_triple(args.dims, "dims"),
        spacing_mm=_triple(args.spacing, "spacing"),
        noise_sigma_hu=args.noise_sigma,
        workers=args.workers,
        transfer_syntax=IMPLICIT_VR_LITTLE_ENDIAN if args.implicit_vr else EXPLICIT_VR_LITTLE_ENDIAN,
    )
    _emit(cases=len(cases), positives=sum(c.label for c in cases), manifest=Path(args.out) / MANIFEST_NAME)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cases = read_scores_csv(args.scores)
    roc = roc_curve(cases)
    if args.roc_out:
        write_roc_csv(roc, args.roc_out)
    _emit(
        cases=len(cases),
        auc=roc.auc,
        auc_mann_whitney=auc_mann_whitney(cases),
        accuracy=accuracy(cases, args.threshold),
    )
    if args.buckets:
        counts = bucket_counts([c.score for c in cases], args.buckets)
        _emit(**{f"bucket.{i}": n for i, n in enumerate(counts)})
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    frame = read_manifest_frame(args.manifest)
    train_rows, test_rows = split(list(range(len(frame))), train_frac=args.train_frac, seed=args.seed)
    # rows keep their manifest order inside each part
    frame.iloc[sorted(train_rows)].to_csv(args.out_train, index=False)
    frame.iloc[sorted(test_rows)].to_csv(args.out_test, index=False)
    _emit(train=len(train_rows), test=len(test_rows))
    return EXIT_OK


def cmd_inflate(args: argparse.Namespace) -> int:
    kernel = read_lvw(args.input)
    if not isinstance(kernel, Kernel2D):
        raise UsageError(f"{args.input} holds a 3D kernel; inflate needs a 2D kernel")
    inflated = inflate_kernel(kernel, args.depth)
    write_lvw(inflated, args.out)
    _emit(input_shape="x".join(map(str, kernel.shape)), output_shape="x".join(map(str, inflated.shape)))
    return EXIT_OK


def _read_features(path: str) -> pd.DataFrame:
    if not Path(path).is_file():
        raise UsageError(f"features file not found: {path}")
    frame = pd.read_csv(path, dtype={"case_id": str})
    missing = [c for c in FEATURE_ID_COLUMNS if c not in frame.columns]
    if missing or len(frame.columns) <= len(FEATURE_ID_COLUMNS):
        raise UsageError(f"{path}: needs case_id, label and at least one feature column")
    return frame


def _feature_columns(frame: pd.DataFrame) -> List[str]:
    return [c for c in frame.columns if c not in FEATURE_ID_COLUMNS]


def cmd_train_demo(args: argparse.Namespace) -> int:
    frame = _read_features(args.features)
    columns = _feature_columns(frame)
    train_ids, val_ids = split(list(frame["case_id"]), train_frac=1.0 - args.val_frac, seed=args.seed)
    indexed = frame.set_index("case_id")
    train = indexed.loc[train_ids]
    val = indexed.loc[val_ids]

    cfg = TrainConfig(
        loss=args.loss,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        dropout_rate=args.dropout,
        seed=args.seed,
    )
    result = train_logistic(
        train[columns].to_numpy(dtype=np.float64),
        train["label"].to_numpy(dtype=np.int64),
        cfg,
        validation=(val[columns].to_numpy(dtype=np.float64), val["label"].to_numpy(dtype=np.int64)),
    )

    roc_dir = Path(args.roc_dir) if args.roc_dir else None
    if roc_dir:
        roc_dir.mkdir(parents=True, exist_ok=True)
    for record in result.trace:
        print(
            f"epoch={record.epoch} train_loss={record.train_loss:.6f} train_auc={record.train_auc:.6f} "
            f"train_accuracy={record.train_accuracy:.6f} val_auc={record.val_auc:.6f} "
            f"val_accuracy={record.val_accuracy:.6f}"
        )
        if roc_dir and record.val_roc is not None:
            write_roc_csv(record.val_roc, roc_dir / f"roc_epoch_{record.epoch:03d}.csv")

    if args.weights_out:
        payload = {"feature_columns": columns, "loss": args.loss, **result.to_dict()}
        Path(args.weights_out).write_text(dumps(payload, indent=2), encoding="utf-8")

    heldout = roc_curve_arrays(val["label"].to_numpy(dtype=np.int64),
                               predict_proba(result, val[columns].to_numpy(dtype=np.float64)))
    _emit(train_cases=len(train_ids), val_cases=len(val_ids), heldout_auc=heldout.auc)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    frame = _read_features(args.features)
    try:
        payload = loads(Path(args.weights).read_text(encoding="utf-8"))
        result = TrainResult.from_dict(payload)
        columns = list(payload["feature_columns"])
    except (OSError, ValueError, KeyError) as e:
        raise UsageError(f"cannot load weights from {args.weights}: {e}") from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise UsageError(f"{args.features}: missing feature columns {missing}")

    scores = predict_proba(result, frame[columns].to_numpy(dtype=np.float64))
    cases = [
        ScoredCase(case_id=cid, label=int(label), score=float(score))
        for cid, label, score in zip(frame["case_id"], frame["label"], scores)
    ]
    buckets = assign_buckets(scores, args.buckets).tolist() if args.buckets else None
    write_scores_csv(cases, args.out, buckets=buckets)
    _emit(cases=len(cases), out=args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lungrisk",
        description="lungrisk - deterministic CT preprocessing and evaluation for lung-cancer risk models"
    )
    parser.add_argument(
        "--log-level",
        type=str,
        default=None,
        help="Log level (default: LUNGRISK_LOG_LEVEL or INFO)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="Preprocess every case of a manifest into LVOL files")
    p.add_argument("--manifest", required=True, help="Manifest CSV (case_id,path,label)")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--config", default=None, help="Run configuration file (key = value)")
    p.add_argument("--threads", type=int, default=None, help="Worker count (overrides the config)")
    p.add_argument("--report", default=None, help="Report path (default: <out>/run_report.txt)")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("phantom", help="Generate a synthetic phantom cohort")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--cases", type=int, required=True, help="Number of cases")
    p.add_argument("--positive-frac", type=float, default=DEFAULT_POSITIVE_FRAC,
                   help=f"Fraction of positive cases (default: {DEFAULT_POSITIVE_FRAC})")
    p.add_argument("--seed", type=int, default=0, help="Cohort seed (default: 0)")
    p.add_argument("--dims", type=_ints, default=list(DEFAULT_COHORT_DIMS),
                   help="Grid size slices,rows,cols (default: 96)")
    p.add_argument("--spacing", type=_floats, default=list(DEFAULT_COHORT_SPACING_MM),
                   help="Voxel spacing dz,dy,dx in mm (default: 2.5,2,2)")
    p.add_argument("--noise-sigma", type=float, default=DEFAULT_NOISE_SIGMA_HU,
                   help=f"Noise sigma in HU (default: {DEFAULT_NOISE_SIGMA_HU})")
    p.add_argument("--workers", type=int, default=1, help="Generator processes (default: 1)")
    p.add_argument("--implicit-vr", action="store_true", help="Write Implicit VR Little Endian files")
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser("eval", help="ROC, AUC and accuracy of a scores CSV")
    p.add_argument("--scores", required=True, help="Scores CSV (case_id,label,score)")
    p.add_argument("--roc-out", default=None, help="ROC CSV output (threshold,fpr,tpr)")
    p.add_argument("--threshold", type=float, default=0.5, help="Accuracy threshold (default: 0.5)")
    p.add_argument("--buckets", type=_floats, default=None,
                   help="Ascending risk-bucket thresholds, e.g. 0.02,0.06,0.5 (none built in)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("split", help="Seeded train/test split of a manifest")
    p.add_argument("--manifest", required=True, help="Manifest CSV")
    p.add_argument("--train-frac", type=float, default=0.7, help="Training fraction (default: 0.7)")
    p.add_argument("--seed", type=int, default=0, help="Split seed (default: 0)")
    p.add_argument("--out-train", required=True, help="Training manifest output")
    p.add_argument("--out-test", required=True, help="Test manifest output")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("inflate", help="Inflate a 2D LVW kernel to 3D")
    p.add_argument("--in", dest="input", required=True, help="2D kernel (LVW)")
    p.add_argument("--depth", type=int, required=True, help="Inflation depth N")
    p.add_argument("--out", required=True, help="3D kernel output (LVW)")
    p.set_defaults(handler=cmd_inflate)

    p = sub.add_parser("train-demo", help="Train the logistic demo model on phantom features")
    p.add_argument("--features", required=True, help="Features CSV (case_id,label,<features>)")
    p.add_argument("--epochs", type=int, default=50, help="Epochs (default: 50)")
    p.add_argument("--loss", choices=["ce", "focal"], default="ce", help="Loss (default: ce)")
    p.add_argument("--seed", type=int, default=0, help="Split and shuffle seed (default: 0)")
    p.add_argument("--lr", type=float, default=5e-5, help="Adam learning rate (default: 5e-5)")
    p.add_argument("--batch-size", type=int, default=2, help="Mini-batch size (default: 2)")
    p.add_argument("--dropout", type=float, default=0.0,
                   help="Input dropout rate, the probability of DROPPING a feature (default: 0)")
    p.add_argument("--val-frac", type=float, default=0.3, help="Held-out fraction (default: 0.3)")
    p.add_argument("--roc-dir", default=None, help="Write the validation ROC of every epoch here")
    p.add_argument("--weights-out", default=None, help="Write trained weights as JSON")
    p.set_defaults(handler=cmd_train_demo)

    p = sub.add_parser("score", help="Score a features CSV with trained weights")
    p.add_argument("--features", required=True, help="Features CSV")
    p.add_argument("--weights", required=True, help="Weights JSON from train-demo")
    p.add_argument("--out", required=True, help="Scores CSV output")
    p.add_argument("--buckets", type=_floats, default=None, help="Add a bucket column for these thresholds")
    p.set_defaults(handler=cmd_score)

    return parser


def main(args: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI application.

    Args:
        args: Command line arguments (defaults to sys.argv[1:])

    Returns:
        int: Exit code
    """
    parser = build_parser()
    try:
        parsed_args = parser.parse_args(args)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    configure_logging(parsed_args.log_level)
    handler: Callable[[argparse.Namespace], int] = parsed_args.handler
    try:
        return handler(parsed_args)
    except (UsageError, EvaluationError) as e:
        print(f"Error: {describe_error(e)}", file=sys.stderr)
        return EXIT_USAGE
    except (LungRiskError, ValueError) as e:
        print(f"Error: {describe_error(e)}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e, ValueError) else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
