"""
Per-label ROC/AUC, category-averaged AUC and top-k TP/FP/FN reporting.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from annotator.model import predict_topk
from mining.dataset import LabelSubset
from mining.ontology import Category, Ontology
from utils.errors import DataError
from utils.storage import write_csv

logger = logging.getLogger(__name__)

SUMMARY_SUBSETS = ("overall",) + tuple(c.value for c in Category)


@dataclass(frozen=True)
class LabelAUC:
    label_id: int
    auc: float
    n_pos: int
    n_neg: int
    label_name: str = ""
    category: str = ""


@dataclass(frozen=True)
class SubsetSummary:
    mean_auc: float
    std_auc: float
    n_labels: int


@dataclass
class CategoryReport:
    overall: SubsetSummary
    # absent categories are not listed
    per_category: Dict[str, SubsetSummary]
    per_label: List[LabelAUC]
    skipped: List[int] = field(default_factory=list)

    def rows(self) -> List[Tuple[str, float, float, int]]:
        rows = [("overall", self.overall.mean_auc, self.overall.std_auc, self.overall.n_labels)]
        for name in SUMMARY_SUBSETS[1:]:
            if name in self.per_category:
                s = self.per_category[name]
                rows.append((name, s.mean_auc, s.std_auc, s.n_labels))
        return rows


@dataclass(frozen=True)
class TopKReport:
    ranked: List[int]
    tp: Set[int]
    fp: Set[int]
    fn: Set[int]


def _check_binary(scores, labels) -> Tuple[np.ndarray, np.ndarray, int, int]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise DataError(
            f"{scores.size} scores but {labels.size} labels", code="length_mismatch"
        )
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError(
            f"AUC undefined with {n_pos} positives and {n_neg} negatives",
            code="undefined_auc",
        )
    return scores, labels, n_pos, n_neg


def auc(scores, labels) -> float:
    """Mann-Whitney statistic with midranks: ties count half."""
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels) -> List[Tuple[float, float]]:
    """(fpr, tpr) staircase from (0, 0) to (1, 1), one point per distinct score."""
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    l_sorted = labels[order]
    tp = np.cumsum(l_sorted)
    fp = np.cumsum(~l_sorted)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))
    points = [(0.0, 0.0)]
    points.extend((fp[i] / n_neg, tp[i] / n_pos) for i in ends)
    return [(float(x), float(y)) for x, y in points]


def trapezoid_area(points: Sequence[Tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def _summary(values: Sequence[float]) -> SubsetSummary:
    arr = np.asarray(values, dtype=np.float64)
    return SubsetSummary(mean_auc=float(arr.mean()), std_auc=float(arr.std()), n_labels=len(arr))


def category_report(per_label: Sequence[LabelAUC], o: Ontology) -> CategoryReport:
    """Unweighted mean and population std of AUC, overall and per category."""
    if not per_label:
        raise DataError("No evaluated labels to summarize", code="empty_label_set")
    by_category: Dict[str, List[float]] = {}
    for entry in per_label:
        category = o.labels[entry.label_id].category.value
        by_category.setdefault(category, []).append(entry.auc)
    return CategoryReport(
        overall=_summary([entry.auc for entry in per_label]),
        per_category={name: _summary(v) for name, v in by_category.items()},
        per_label=list(per_label),
    )


def topk_report(scores, true_labels: Iterable[int], k: int = 5) -> TopKReport:
    """TP = topk & truth, FP = topk - truth, FN = truth - topk."""
    ranked = predict_topk(scores, k)
    truth = set(int(i) for i in true_labels)
    top = set(ranked)
    return TopKReport(ranked=ranked, tp=top & truth, fp=top - truth, fn=truth - top)


def evaluate_scores(
    scores: np.ndarray,
    targets: np.ndarray,
    subset: LabelSubset,
    threads: int = 1,
) -> Tuple[List[LabelAUC], List[int]]:
    """
    Per-label AUC over the columns of subset-projected (N, len(subset)) arrays.
    Labels with a single class in targets are skipped and returned separately.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.shape[1] != len(subset):
        raise DataError(
            f"Scores {scores.shape} and targets {targets.shape} must both be "
            f"(N, {len(subset)})",
            code="length_mismatch",
        )

    def one(column: int) -> Optional[LabelAUC]:
        y = targets[:, column]
        n_pos = int(y.astype(bool).sum())
        n_neg = int(len(y) - n_pos)
        if n_pos == 0 or n_neg == 0:
            return None
        return LabelAUC(
            label_id=subset.ids[column],
            auc=auc(scores[:, column], y),
            n_pos=n_pos,
            n_neg=n_neg,
            label_name=subset.names[column],
            category=subset.categories[column].value,
        )

    columns = range(len(subset))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, columns))
    else:
        results = [one(c) for c in columns]

    evaluated = [r for r in results if r is not None]
    skipped = [subset.ids[c] for c, r in zip(columns, results) if r is None]
    if skipped:
        logger.warning(f"AUC undefined for {len(skipped)} single-class labels: {skipped}")
    return evaluated, skipped


def write_metrics_csv(path: Union[str, Path], per_label: Iterable[LabelAUC]) -> None:
    write_csv(
        path,
        ["label_id", "label_name", "category", "n_pos", "n_neg", "auc"],
        (
            (e.label_id, e.label_name, e.category, e.n_pos, e.n_neg, e.auc)
            for e in per_label
        ),
    )


def write_summary_csv(path: Union[str, Path], report: CategoryReport) -> None:
    write_csv(path, ["subset", "mean_auc", "std_auc", "n_labels"], report.rows())


def write_roc_csv(
    path: Union[str, Path],
    scores: np.ndarray,
    targets: np.ndarray,
    subset: LabelSubset,
) -> None:
    """ROC points of every evaluable label: label_id,label_name,fpr,tpr."""
    rows = []
    for column, label_id in enumerate(subset.ids):
        y = targets[:, column]
        if y.all() or not y.any():
            continue
        for fpr, tpr in roc_points(scores[:, column], y):
            rows.append((label_id, subset.names[column], fpr, tpr))
    write_csv(path, ["label_id", "label_name", "fpr", "tpr"], rows)


def format_topk(
    report: TopKReport,
    scores: np.ndarray,
    names: Sequence[str],
) -> List[str]:
    """Lines 'name (0.912) [TP]' for the ranked labels, then an 'FN:' line."""
    lines = []
    for label in report.ranked:
        tag = "TP" if label in report.tp else "FP"
        lines.append(f"{names[label]} ({float(scores[label]):.3f}) [{tag}]")
    missed = ", ".join(names[i] for i in sorted(report.fn))
    lines.append(f"FN: {missed}" if missed else "FN: -")
    return lines
