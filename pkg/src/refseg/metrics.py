"""Segmentation metrics: per-sample IoU and corpus-level aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeMismatch

__all__ = [
    "EmptyResultSet",
    "PREC_THRESHOLDS",
    "SampleResult",
    "MetricReport",
    "iou",
    "aggregate",
    "render_report",
]


class EmptyResultSet(ValueError):
    """Aggregation over zero samples."""


PREC_THRESHOLDS = (0.5, 0.7, 0.9)


@dataclass(frozen=True)
class SampleResult:
    sample_id: int
    intersection: int
    union: int
    iou: float


@dataclass(frozen=True)
class MetricReport:
    oiou: float
    miou: float
    prec: dict[float, float]
    n_samples: int

    def to_json(self) -> dict:
        return {
            "oiou": self.oiou,
            "miou": self.miou,
            "prec": {f"{t:g}": self.prec[t] for t in PREC_THRESHOLDS},
            "n": self.n_samples,
        }


def iou(pred: np.ndarray, gt: np.ndarray, sample_id: int = 0) -> SampleResult:
    """Exact pixel counts; an empty-vs-empty pair scores 1.0 by convention
    (and contributes nothing to the overall sums)."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    inter = int((pred & gt).sum())
    union = int((pred | gt).sum())
    return SampleResult(
        sample_id=sample_id,
        intersection=inter,
        union=union,
        iou=1.0 if union == 0 else inter / union,
    )


def aggregate(results: list[SampleResult]) -> MetricReport:
    """oIoU = Σ∩/Σ∪, mIoU = mean per-sample IoU, Prec@t = fraction with IoU > t."""
    if not results:
        raise EmptyResultSet("no samples to aggregate")
    total_i = sum(r.intersection for r in results)
    total_u = sum(r.union for r in results)
    ious = np.array([r.iou for r in results])
    return MetricReport(
        oiou=1.0 if total_u == 0 else total_i / total_u,
        miou=float(ious.mean()),
        prec={t: float((ious > t).mean()) for t in PREC_THRESHOLDS},
        n_samples=len(results),
    )


def render_report(report: MetricReport, title: str = "") -> str:
    head = f"{title}\n" if title else ""
    cols = "  ".join(f"P@{t:g}={report.prec[t]:6.4f}" for t in PREC_THRESHOLDS)
    return (
        f"{head}n={report.n_samples}  oIoU={report.oiou:6.4f}  "
        f"mIoU={report.miou:6.4f}  {cols}"
    )
