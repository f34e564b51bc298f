"""Evaluation metrics and multi-seed aggregation.

Everything is computed from one pass over (true, predicted) 1-based class
index pairs: accuracy, per-class precision/recall/F1 with support, macro F1
(unweighted mean over all 18 classes, zero-support classes included as 0 and
flagged), and support-weighted F1. Seed aggregation reports mean and sample
standard deviation of accuracy across runs of the same variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ReportError, VariantMismatch
from .taxonomy import CLASSES, N_CLASSES, class_index_to_row


@dataclass(frozen=True)
class ClassMetrics:
    class_index: int  # 1-based
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    zero_support: bool


@dataclass(frozen=True)
class MetricsReport:
    variant: str
    seed: int
    n_samples: int
    accuracy: float  # fraction in [0, 1]
    macro_f1: float
    weighted_f1: float
    per_class: tuple[ClassMetrics, ...]
    confusion: np.ndarray = field(repr=False, compare=False, default=None)


def compute_metrics(
    true_classes,
    predicted_classes,
    variant: str = "",
    seed: int = 0,
) -> MetricsReport:
    """Single-run metrics from parallel sequences of 1-based class indices."""
    true_arr = np.asarray(list(true_classes), dtype=np.int64)
    pred_arr = np.asarray(list(predicted_classes), dtype=np.int64)
    if true_arr.shape != pred_arr.shape:
        raise ValueError(
            f"length mismatch: {true_arr.size} true vs {pred_arr.size} predicted"
        )
    if true_arr.size == 0:
        raise ValueError("cannot compute metrics over zero samples")

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(true_arr, pred_arr):
        confusion[class_index_to_row(int(t)), class_index_to_row(int(p))] += 1

    accuracy = float(np.trace(confusion) / confusion.sum())

    per_class = []
    f1s = np.zeros(N_CLASSES)
    supports = np.zeros(N_CLASSES, dtype=np.int64)
    for row, cls in enumerate(CLASSES):
        tp = confusion[row, row]
        fp = confusion[:, row].sum() - tp
        fn = confusion[row, :].sum() - tp
        support = int(confusion[row, :].sum())
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        # F1 defined as 0 when precision + recall is 0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(
            ClassMetrics(
                class_index=cls.index,
                name=cls.canonical_name,
                precision=float(precision),
                recall=float(recall),
                f1=float(f1),
                support=support,
                zero_support=support == 0,
            )
        )
        f1s[row] = f1
        supports[row] = support

    macro_f1 = float(f1s.mean())  # unweighted, all 18 classes
    weighted_f1 = float((f1s * supports).sum() / supports.sum())

    return MetricsReport(
        variant=variant,
        seed=seed,
        n_samples=int(true_arr.size),
        accuracy=accuracy,
        macro_f1=macro_f1,
        weighted_f1=weighted_f1,
        per_class=tuple(per_class),
        confusion=confusion,
    )


@dataclass(frozen=True)
class AggregateReport:
    variant: str
    seeds: tuple[int, ...]
    accuracy_mean_pct: float
    accuracy_std_pct: float
    macro_f1: float  # mean over seeds
    weighted_f1: float
    per_class: tuple[ClassMetrics, ...]  # f1 averaged over seeds


def aggregate_seeds(reports) -> AggregateReport:
    """Mean and sample std (ddof=1; 0.0 for a single run) across seeds of one
    variant. Mixing variants is an error."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    variants = {r.variant for r in reports}
    if len(variants) != 1:
        raise VariantMismatch(f"cannot aggregate across variants {sorted(variants)}")

    acc = np.array([r.accuracy for r in reports]) * 100.0
    std = float(acc.std(ddof=1)) if len(reports) > 1 else 0.0

    per_class = []
    for row in range(N_CLASSES):
        entries = [r.per_class[row] for r in reports]
        # seeds share one test set, so support carries over unchanged
        per_class.append(
            ClassMetrics(
                class_index=entries[0].class_index,
                name=entries[0].name,
                precision=float(np.mean([e.precision for e in entries])),
                recall=float(np.mean([e.recall for e in entries])),
                f1=float(np.mean([e.f1 for e in entries])),
                support=entries[0].support,
                zero_support=entries[0].zero_support,
            )
        )

    return AggregateReport(
        variant=reports[0].variant,
        seeds=tuple(r.seed for r in reports),
        accuracy_mean_pct=float(acc.mean()),
        accuracy_std_pct=std,
        macro_f1=float(np.mean([r.macro_f1 for r in reports])),
        weighted_f1=float(np.mean([r.weighted_f1 for r in reports])),
        per_class=tuple(per_class),
    )


def relative_improvement_pct(accuracy: float, baseline_accuracy: float) -> float:
    """(acc - baseline) / baseline, as a percentage."""
    if baseline_accuracy == 0:
        raise ReportError("baseline accuracy is zero; relative improvement undefined")
    return (accuracy - baseline_accuracy) / baseline_accuracy * 100.0


def aggregate_to_dict(report: AggregateReport) -> dict:
    """JSON-ready form of an aggregate report."""
    return {
        "variant": report.variant,
        "seeds": list(report.seeds),
        "accuracy_mean_pct": report.accuracy_mean_pct,
        "accuracy_std_pct": report.accuracy_std_pct,
        "macro_f1": report.macro_f1,
        "weighted_f1": report.weighted_f1,
        "per_class": {
            str(m.class_index): {"name": m.name, "f1": m.f1, "support": m.support}
            for m in report.per_class
        },
    }


def aggregate_from_dict(obj: dict) -> AggregateReport:
    per_class = []
    for idx in range(1, N_CLASSES + 1):
        entry = obj["per_class"][str(idx)]
        per_class.append(
            ClassMetrics(
                class_index=idx,
                name=entry["name"],
                precision=0.0,
                recall=0.0,
                f1=entry["f1"],
                support=entry["support"],
                zero_support=entry["support"] == 0,
            )
        )
    return AggregateReport(
        variant=obj["variant"],
        seeds=tuple(obj["seeds"]),
        accuracy_mean_pct=obj["accuracy_mean_pct"],
        accuracy_std_pct=obj["accuracy_std_pct"],
        macro_f1=obj["macro_f1"],
        weighted_f1=obj["weighted_f1"],
        per_class=tuple(per_class),
    )
