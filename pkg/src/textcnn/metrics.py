"""Accuracy, confusion matrix, ROC curve, and AUC.

Tied scores are grouped so that every equal score flips at one threshold;
that convention makes the trapezoidal AUC agree exactly with the
Mann-Whitney ranking statistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if preds.shape != labels.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {labels.shape}")
    return float((preds == labels).mean())


def confusion(preds, labels) -> np.ndarray:
    """2x2 counts [[TN, FP], [FN, TP]]."""
    preds = np.asarray(preds).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    out = np.zeros((2, 2), dtype=np.int64)
    for p, y in ((0, 0), (0, 1), (1, 0), (1, 1)):
        out[y, p] = int(((preds == p) & (labels == y)).sum())
    return out


def _check_two_classes(labels):
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    return labels, n_pos, n_neg


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(FPR, TPR) points, one per distinct score threshold in descending
    order, prefixed with (0, 0)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels, n_pos, n_neg = _check_two_classes(labels)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y == 0)
    # keep only the last index of each tied-score run
    last = np.flatnonzero(np.diff(s) != 0)
    idx = np.concatenate([last, [len(s) - 1]])
    points = [(0.0, 0.0)]
    points.extend(
        (float(fp[i]) / n_neg, float(tp[i]) / n_pos) for i in idx
    )
    return points


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; equals the Mann-Whitney
    statistic P(s_pos > s_neg) + 0.5 P(tie)."""
    pts = roc_curve(scores, labels)
    area = 0.0
    for (f0, t0), (f1, t1) in zip(pts, pts[1:]):
        area += (f1 - f0) * (t0 + t1) / 2.0
    return area


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # [[TN, FP], [FN, TP]]
    roc: list[tuple[float, float]]
    auc: float


def evaluate_binary(probs, labels) -> EvalReport:
    """Full report from predicted probabilities; decision threshold 0.5."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    preds = (probs >= 0.5).astype(np.int64)
    return EvalReport(
        accuracy=accuracy(preds, labels),
        confusion=confusion(preds, labels),
        roc=roc_curve(probs, labels),
        auc=auc(probs, labels),
    )


def write_roc_csv(points, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr\n")
        for f, t in points:
            fh.write(f"{f:.6f},{t:.6f}\n")


def render_roc_svg(points, path, size: int = 360, margin: int = 30):
    """Self-contained SVG of the curve with a unit diagonal reference."""
    span = size - 2 * margin

    def sx(v):
        return margin + v * span

    def sy(v):
        return size - margin - v * span

    poly = " ".join(f"{sx(f):.2f},{sy(t):.2f}" for f, t in points)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        'fill="white" stroke="#888"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(1):.2f}" y2="{sy(1):.2f}" '
        'stroke="#aaa" stroke-dasharray="4 3"/>',
        f'<polyline points="{poly}" fill="none" stroke="#1f6feb" stroke-width="1.5"/>',
        f'<text x="{size / 2:.0f}" y="{size - 8}" font-size="11" '
        'text-anchor="middle">false positive rate</text>',
        f'<text x="12" y="{size / 2:.0f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 12 {size / 2:.0f})">true positive rate</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
