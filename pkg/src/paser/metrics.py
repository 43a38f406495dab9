"""Evaluation metrics and the per-run report."""

import csv
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from .data.patches import split_patches
from .errors import FormatError, ShapeError

logger = logging.getLogger(__name__)

GIGA = 1e9
EQUIVALENCE_GAP = 0.1


def _check_labels(labels: np.ndarray, num_classes: int, name: str) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"{name} labels must lie in [0, {num_classes})")


def _class_ious(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class IoU along the trailing pixel axis; NaN where a class is in neither map."""
    classes = np.arange(num_classes).reshape(num_classes, *([1] * pred.ndim))
    pred_k = pred[None] == classes
    gt_k = gt[None] == classes
    inter = (pred_k & gt_k).sum(axis=-1)
    union = (pred_k | gt_k).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), np.nan)


def mean_iou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> float:
    """Mean over classes of |pred=k and gt=k| / |pred=k or gt=k|.

    Classes absent from both maps are skipped rather than counted as 1.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"IoU needs equal shapes, got {pred.shape} and {gt.shape}")
    _check_labels(pred, num_classes, "Predicted")
    _check_labels(gt, num_classes, "Ground-truth")
    ious = _class_ious(pred.reshape(-1), gt.reshape(-1), num_classes)
    present = ious[~np.isnan(ious)]
    return float(present.mean()) if present.size else 1.0


def patch_ious(pred: np.ndarray, gt: np.ndarray, num_classes: int, patches: int) -> np.ndarray:
    """``N x P`` mean IoU of each patch of each image in a batch of label maps."""
    if pred.shape != gt.shape or pred.ndim != 3:
        raise ShapeError(f"patch_ious needs two N x H x W maps, got {pred.shape}, {gt.shape}")
    _check_labels(pred, num_classes, "Predicted")
    _check_labels(gt, num_classes, "Ground-truth")
    pred_p = split_patches(pred, patches)
    gt_p = split_patches(gt, patches)
    flat = (*pred_p.shape[:2], -1)
    ious = _class_ious(pred_p.reshape(flat), gt_p.reshape(flat), num_classes)
    return np.nanmean(ious, axis=0)


def iou_per_gigaflop(iou: float, flops: float) -> float:
    if flops <= 0:
        raise ValueError(f"Flops must be positive, got {flops}")
    return iou / (flops / GIGA)


@dataclass(frozen=True)
class AssignmentConfusion:
    """Rows index the reference model, columns the chosen model."""

    matrix: np.ndarray
    accuracy: float


def assignment_confusion(
    actions: Sequence[np.ndarray] | np.ndarray,
    reference: Sequence[np.ndarray] | np.ndarray,
    num_models: int,
) -> AssignmentConfusion:
    chosen = np.concatenate([np.ravel(a) for a in actions]) if len(actions) else np.zeros(0)
    truth = np.concatenate([np.ravel(r) for r in reference]) if len(reference) else np.zeros(0)
    if len(actions) != len(reference) or chosen.shape != truth.shape:
        raise ShapeError(
            f"Action and reference lists differ in length ({len(actions)} vs {len(reference)})"
        )
    for name, values in (("Chosen", chosen), ("Reference", truth)):
        if values.size and (values.min() < 0 or values.max() >= num_models):
            raise ValueError(f"{name} model indices must lie in [0, {num_models})")
    matrix = np.zeros((num_models, num_models), dtype=np.int64)
    np.add.at(matrix, (truth.astype(np.intp), chosen.astype(np.intp)), 1)
    total = int(matrix.sum())
    accuracy = float(np.trace(matrix)) / total if total else 0.0
    return AssignmentConfusion(matrix, accuracy)


def marginal_assignment(actions: Sequence[np.ndarray] | np.ndarray, num_models: int) -> np.ndarray:
    """Share of patches routed to each model."""
    flat = np.concatenate([np.ravel(a) for a in actions]).astype(np.intp)
    if flat.size == 0:
        raise ValueError("Cannot compute a marginal over zero actions")
    return np.bincount(flat, minlength=num_models)[:num_models] / flat.size


def tvd(p: Sequence[float] | np.ndarray, q: Sequence[float] | np.ndarray) -> float:
    """Total variation distance 0.5 * sum |p - q| between two distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"TVD needs two distributions on one support, got {p.shape}, {q.shape}")
    for name, dist in (("p", p), ("q", q)):
        if np.any(dist < -1e-12) or abs(dist.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} is not a normalised distribution (sum={dist.sum()})")
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class EntropyComparison:
    gap: float
    rank_statistic: float
    p_value: float
    equivalent: bool


def entropy_dist_compare(
    samples_a: Sequence[float] | np.ndarray,
    samples_b: Sequence[float] | np.ndarray,
    threshold: float = EQUIVALENCE_GAP,
) -> EntropyComparison:
    """Effect-size comparison of two entropy samples.

    ``gap`` is |mean_a - mean_b| over the pooled standard deviation; the Mann-Whitney U
    statistic and its p-value are reported alongside. Equivalent when ``gap < threshold``.
    """
    a = np.ravel(np.asarray(samples_a, dtype=np.float64))
    b = np.ravel(np.asarray(samples_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("Entropy comparison needs two non-empty samples")
    pooled = np.sqrt((a.var() + b.var()) / 2.0)
    diff = abs(a.mean() - b.mean())
    if pooled > 0:
        gap = float(diff / pooled)
    else:
        gap = 0.0 if diff == 0 else float("inf")
    if np.array_equal(np.sort(a), np.sort(b)):
        statistic, p_value = a.size * b.size / 2.0, 1.0
    else:
        result = stats.mannwhitneyu(a, b, alternative="two-sided")
        statistic, p_value = float(result.statistic), float(result.pvalue)
    return EntropyComparison(gap, statistic, p_value, gap < threshold)


class RunReport(BaseModel):
    """Metrics of one evaluated method over a test split."""

    model_config = ConfigDict(extra="forbid")

    method: str
    num_images: int = Field(ge=0)
    iou: float = Field(ge=0.0, le=1.0)
    flops: int = Field(gt=0)
    iou_per_gigaflop: float
    mean_cost: float = Field(ge=0.0)
    lam: float | None = None
    samples: int | None = None
    assignment_counts: list[int]
    fraction_to_larger: float = Field(ge=0.0, le=1.0)
    confusion: list[list[int]] | None = None
    assignment_accuracy: float | None = None
    tvd: float | None = None


REPORT_CSV_FIELDS = (
    "method",
    "num_images",
    "iou",
    "flops",
    "iou_per_gigaflop",
    "mean_cost",
    "lam",
    "samples",
    "fraction_to_larger",
    "assignment_accuracy",
    "tvd",
    "assignment_counts",
)


def report_row(report: RunReport) -> dict[str, str]:
    data = report.model_dump()
    row = {}
    for name in REPORT_CSV_FIELDS:
        value = data[name]
        if name == "assignment_counts":
            row[name] = " ".join(str(v) for v in value)
        elif value is None:
            row[name] = ""
        else:
            row[name] = repr(value) if isinstance(value, float) else str(value)
    return row


def write_csv(path: Path, rows: list[dict[str, str]], fieldnames: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_report(report: RunReport, out_dir: str | Path) -> Path:
    """Write ``report.json`` and ``report.csv`` into ``out_dir``; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    with open(json_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(report.model_dump_json(indent=2) + "\n")
    write_csv(out_dir / "report.csv", [report_row(report)], REPORT_CSV_FIELDS)
    logger.info(
        f"{report.method}: IoU {report.iou:.4f}, flops {report.flops:.3e}, "
        f"IoU/GFlop {report.iou_per_gigaflop:.4e}"
    )
    return json_path


def read_report(run_dir: str | Path) -> RunReport:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise FormatError(f"Run directory is missing {path}", path=str(path))
    try:
        return RunReport.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except ValueError as e:
        raise FormatError(f"Malformed report {path}: {e}", path=str(path)) from e


def dataset_iou(preds: np.ndarray, gts: np.ndarray, num_classes: int) -> float:
    """Mean over images of the per-image mean IoU."""
    if len(preds) != len(gts) or len(preds) == 0:
        raise ShapeError(
            f"Need equally many non-empty predictions ({len(preds)}) and maps ({len(gts)})"
        )
    return float(np.mean([mean_iou(p, g, num_classes) for p, g in zip(preds, gts, strict=True)]))
