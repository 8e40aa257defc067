"""Link-prediction evaluation: ranking and threshold metrics plus the data
behind the standard plots (PR and ROC curves, attention heatmaps).

AUC uses the rank (Mann-Whitney) estimator with ties counted 1/2, which is
exactly the probability that a random positive outscores a random negative.
Curves are swept over the distinct observed scores, predicting positive at
`score >= threshold`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EvalError, ExportError, UndefinedMetricError
from .gat import AttentionRecord, GatParams, link_probability, model_forward
from .graph import build_graph, unique_edge_set
from .preprocess import TimeWindow
from .sampling import DEFAULT_RETRY_FACTOR, SamplingStrategy, draw_negatives
from .seeding import derive_rng


@dataclass(frozen=True, slots=True)
class ScoredPair:
    """One scored candidate link with its true label (1=linked)."""

    src: int
    dst: int
    score: float
    label: int


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ScalarMetrics:
    """Threshold metrics; zero-denominator cases yield 0.0 and are flagged."""

    accuracy: float
    precision: float
    recall: float
    f1: float
    flagged: tuple[str, ...] = ()


@dataclass(frozen=True, slots=True)
class PrPoint:
    threshold: float
    precision: float
    recall: float


@dataclass(frozen=True, slots=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float


def _split_scores(pairs: Sequence[ScoredPair]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([p.score for p in pairs], dtype=np.float64)
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return scores, labels


def auc(pairs: Sequence[ScoredPair]) -> float:
    """Rank-based AUC; ties between classes count half a win."""
    scores, labels = _split_scores(pairs)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    # Average (mid) ranks across tie groups, 1-based.
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = (lo + hi + 1) / 2.0
    rank_sum = ranks[labels == 1].sum()
    u_stat = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def confusion(pairs: Sequence[ScoredPair], tau: float = 0.5) -> Confusion:
    """Counts under the strict rule: predicted positive iff score > tau."""
    scores, labels = _split_scores(pairs)
    predicted = scores > tau
    actual = labels == 1
    return Confusion(
        tp=int((predicted & actual).sum()),
        fp=int((predicted & ~actual).sum()),
        fn=int((~predicted & actual).sum()),
        tn=int((~predicted & ~actual).sum()),
    )


def scalar_metrics(conf: Confusion) -> ScalarMetrics:
    if conf.total == 0:
        raise EvalError("metrics are undefined over zero pairs")
    flagged: list[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            flagged.append(name)
            return 0.0
        return num / den

    accuracy = (conf.tp + conf.tn) / conf.total
    precision = ratio(conf.tp, conf.tp + conf.fp, "precision")
    recall = ratio(conf.tp, conf.tp + conf.fn, "recall")
    if precision + recall == 0.0:
        flagged.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return ScalarMetrics(accuracy, precision, recall, f1, tuple(flagged))


def _threshold_sweep(pairs: Sequence[ScoredPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Cumulative tp/fp at each distinct score threshold, descending.

    Predictions are inclusive (score >= threshold).
    """
    if len(pairs) == 0:
        raise UndefinedMetricError("cannot sweep thresholds over zero pairs")
    scores, labels = _split_scores(pairs)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.int64)
    cum_tp = np.cumsum(sorted_pos)
    cum_fp = np.cumsum(1 - sorted_pos)
    # Last index of each tie group = counts with every pair >= that score.
    distinct_last = np.flatnonzero(np.diff(sorted_scores)) if len(scores) else np.empty(0, np.intp)
    last_idx = np.concatenate([distinct_last, [len(scores) - 1]]).astype(np.intp)
    thresholds = sorted_scores[last_idx]
    return thresholds, cum_tp[last_idx], cum_fp[last_idx], int(sorted_pos.sum()), int(len(scores) - sorted_pos.sum())


def pr_points(pairs: Sequence[ScoredPair]) -> list[PrPoint]:
    """Precision/recall at each distinct score threshold, highest first,
    truncated at (and including) the first point reaching full recall."""
    thresholds, tp, fp, n_pos, _ = _threshold_sweep(pairs)
    if n_pos == 0:
        raise UndefinedMetricError("PR curve needs at least one positive pair")
    points: list[PrPoint] = []
    for t, tp_i, fp_i in zip(thresholds, tp, fp):
        points.append(PrPoint(float(t), tp_i / (tp_i + fp_i), tp_i / n_pos))
        if tp_i == n_pos:
            break
    return points


def roc_points(pairs: Sequence[ScoredPair]) -> list[RocPoint]:
    """ROC curve over the same sweep, anchored at (0,0); the lowest threshold
    predicts everything positive so the series ends at (1,1)."""
    thresholds, tp, fp, n_pos, n_neg = _threshold_sweep(pairs)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"ROC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )
    points = [RocPoint(math.inf, 0.0, 0.0)]
    for t, tp_i, fp_i in zip(thresholds, tp, fp):
        points.append(RocPoint(float(t), fp_i / n_neg, tp_i / n_pos))
    return points


def roc_area(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under the ROC series (equals `auc` analytically)."""
    area = 0.0
    for a, b in zip(points[:-1], points[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return area


# ---------------------------------------------------------------------------
# windowed evaluation

@dataclass
class WindowReport:
    window_index: int
    auc: float
    confusion: Confusion
    metrics: ScalarMetrics
    pr: list[PrPoint]
    roc: list[RocPoint]
    pairs: list[ScoredPair]


@dataclass
class EvalReport:
    """Per-window results plus pooled (all scored pairs together) and
    macro-averaged (mean of per-window values) aggregates."""

    windows: list[WindowReport]
    pooled_auc: float
    pooled_confusion: Confusion
    pooled_metrics: ScalarMetrics
    pooled_pr: list[PrPoint]
    pooled_roc: list[RocPoint]
    macro: dict[str, float]
    tau: float
    last_attention: AttentionRecord | None = None


def evaluate_windows(
    params: GatParams,
    test_windows: Sequence[TimeWindow],
    sampling: SamplingStrategy,
    tau: float = 0.5,
    seed: int = 0,
    retry_factor: int = DEFAULT_RETRY_FACTOR,
) -> EvalReport:
    """Score every non-empty test window.

    Per window: run the model on that window's own graph, score its edge
    instances as positives and an equal number of sampled non-edges as
    negatives, then compute ranking and threshold metrics.  Window scores are
    pooled for the aggregate numbers and also averaged per window (macro).
    """
    reports: list[WindowReport] = []
    pooled: list[ScoredPair] = []
    last_attention: AttentionRecord | None = None
    for window in test_windows:
        if not window.events:
            continue
        g = build_graph(window, params.dims.n_nodes)
        emb, attention = model_forward(params, g)
        last_attention = attention
        rng = derive_rng(seed, "eval-sampling", window.index)
        neg = draw_negatives(sampling, g, unique_edge_set(g), rng, retry_factor)
        scored = [
            ScoredPair(int(s), int(d), float(p), 1)
            for s, d, p in zip(g.edge_src, g.edge_dst, _probs(emb, g.edge_src, g.edge_dst))
        ]
        if len(neg):
            scored += [
                ScoredPair(int(s), int(d), float(p), 0)
                for (s, d), p in zip(neg, _probs(emb, neg[:, 0], neg[:, 1]))
            ]
        conf = confusion(scored, tau)
        reports.append(
            WindowReport(
                window.index,
                auc(scored),
                conf,
                scalar_metrics(conf),
                pr_points(scored),
                roc_points(scored),
                scored,
            )
        )
        pooled.extend(scored)
    if not reports:
        raise EvalError("every test window is empty; nothing to evaluate")
    pooled_conf = confusion(pooled, tau)
    macro_keys = ("auc", "accuracy", "precision", "recall", "f1")
    macro = {
        key: float(
            np.mean(
                [
                    r.auc if key == "auc" else getattr(r.metrics, key)
                    for r in reports
                ]
            )
        )
        for key in macro_keys
    }
    return EvalReport(
        windows=reports,
        pooled_auc=auc(pooled),
        pooled_confusion=pooled_conf,
        pooled_metrics=scalar_metrics(pooled_conf),
        pooled_pr=pr_points(pooled),
        pooled_roc=roc_points(pooled),
        macro=macro,
        tau=tau,
        last_attention=last_attention,
    )


def _probs(emb: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    if len(src) == 0:
        return np.empty(0, dtype=np.float64)
    return np.atleast_1d(link_probability(emb, np.asarray(src), np.asarray(dst)))


# ---------------------------------------------------------------------------
# attention export

def export_attention(record: AttentionRecord, node_range: tuple[int, int] = (0, 100)) -> np.ndarray:
    """Dense mean-over-heads attention for node ids in [lo, hi).

    Entry [i, j] is the coefficient with which destination lo+i attends to
    source lo+j (self-loops included, parallel edges summed); pairs with no
    edge stay 0.  A destination whose whole in-neighborhood lies inside the
    range therefore has a row summing to 1.
    """
    lo, hi = node_range
    if not (0 <= lo < hi <= record.n_nodes):
        raise ExportError(
            f"node range [{lo}, {hi}) is empty or outside [0, {record.n_nodes})"
        )
    size = hi - lo
    mean_coeffs = record.coeffs.mean(axis=1)
    mask = (record.edge_src >= lo) & (record.edge_src < hi) & (record.edge_dst >= lo) & (record.edge_dst < hi)
    matrix = np.zeros((size, size), dtype=np.float64)
    np.add.at(matrix, (record.edge_dst[mask] - lo, record.edge_src[mask] - lo), mean_coeffs[mask])
    return matrix
