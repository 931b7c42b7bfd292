"""
Linear SVM and evaluation metrics
"""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import click
import numpy as np

from .errors import ArgumentError


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    C: float = 1.0
    objective: float = float("nan")
    objective_trace: List[float] = field(default_factory=list, repr=False)


@dataclass
class EvalReport:
    accuracy: float
    average_precision: float
    tp: int
    fp: int
    tn: int
    fn: int
    decisions: List[float]
    labels: List[int]
    ids: List[str] = field(default_factory=list)
    tuned_threshold: Optional[float] = None
    tuned_accuracy: Optional[float] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def summary(self, title: str = "evaluation") -> str:
        lines = [
            f"{title}",
            f"  samples            {self.total}",
            f"  accuracy           {self.accuracy:.4f}",
            f"  average precision  {self.average_precision:.4f}",
            f"  TP {self.tp}  FP {self.fp}  TN {self.tn}  FN {self.fn}",
        ]
        if self.tuned_threshold is not None:
            lines.append(f"  accuracy at validation-tuned threshold {self.tuned_threshold:.6g}: "
                         f"{self.tuned_accuracy:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path: Union[str, Path]):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "value"])
            writer.writerow(["accuracy", repr(self.accuracy)])
            writer.writerow(["average_precision", repr(self.average_precision)])
            for name in ("tp", "fp", "tn", "fn"):
                writer.writerow([name, getattr(self, name)])
            if self.tuned_threshold is not None:
                writer.writerow(["tuned_threshold", repr(self.tuned_threshold)])
                writer.writerow(["tuned_accuracy", repr(self.tuned_accuracy)])
            writer.writerow([])
            writer.writerow(["id", "label", "decision", "predicted"])
            ids = self.ids or [str(i) for i in range(len(self.labels))]
            for image_id, label, decision in zip(ids, self.labels, self.decisions):
                writer.writerow([image_id, label, repr(decision), 1 if decision >= 0 else -1])


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ArgumentError("labels must be -1 or +1")
    return y.astype(np.float64)


def svm_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, C: float) -> float:
    """(1/2)||w||^2 + C * sum of hinge losses"""
    hinge = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return float(0.5 * w @ w + C * hinge.sum())


def optimal_bias(scores: np.ndarray, y: np.ndarray) -> float:
    """
    Exact minimizer over b of sum(max(0, 1 - y * (scores + b)))

    The sum is convex and piecewise linear in b with a kink at y_i - s_i
    for every sample, so the smallest kink where the right slope turns
    non-negative is optimal.
    """
    pos = np.sort(1.0 - scores[y > 0])
    neg = np.sort(-1.0 - scores[y < 0])
    candidates = np.concatenate([pos, neg])
    candidates.sort(kind="stable")
    above = len(pos) - np.searchsorted(pos, candidates, side="right")
    below = np.searchsorted(neg, candidates, side="right")
    return float(candidates[np.argmax(below - above >= 0)])


def svm_train(X: np.ndarray, y: np.ndarray, C: float = 1.0, epochs: int = 200, seed: int = 0,
              verbose: bool = False) -> SvmModel:
    """
    Primal linear SVM by seeded stochastic subgradient descent

    Rows are centered first. The weights take steps of rate 1/(λt) with
    λ = 1/(nC). The unregularized bias is held fixed inside an epoch and
    refit exactly for the current weights after it. The objective of the
    current and the running-average iterate is evaluated after each epoch
    and the best point seen is returned.

    Args:
        X: Features, shape (n, m)
        y: Labels in {-1, +1}
        C: Hinge penalty
        epochs: Passes over the data
        seed: Shuffling seed

    Returns:
        SvmModel at the best objective seen
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    n, m = X.shape
    if n < 2 or len(np.unique(y)) < 2:
        raise ArgumentError("SVM training needs at least two samples from both classes")
    if C <= 0:
        raise ArgumentError(f"C must be positive, got {C}")

    # centered rows; b is mapped back on return
    mu = X.mean(axis=0)
    X = X - mu
    lam = 1.0 / (n * C)
    rng = np.random.default_rng(seed)
    w, b = np.zeros(m), 0.0
    w_avg = np.zeros(m)
    best = (svm_objective(w, b, X, y, C), w.copy(), b)
    trace = [best[0]]
    t = 0
    for epoch in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            violated = y[i] * (X[i] @ w + b) < 1.0
            w *= 1.0 - eta * lam
            if violated:
                w += eta * y[i] * X[i]
            w_avg += (w - w_avg) / t
        for cand_w in (w, w_avg):
            cand_b = optimal_bias(X @ cand_w, y)
            value = svm_objective(cand_w, cand_b, X, y, C)
            if value < best[0]:
                best = (value, cand_w.copy(), cand_b)
        b = optimal_bias(X @ w, y)
        trace.append(best[0])
        if verbose and (epoch + 1) % 50 == 0:
            click.echo(f"  svm epoch {epoch + 1}/{epochs}  objective {best[0]:.6f}")
    w, b = best[1], best[2] - float(best[1] @ mu)
    return SvmModel(w=w, b=b, C=C, objective=best[0], objective_trace=trace)


def decision_value(model: SvmModel, x: np.ndarray) -> Union[float, np.ndarray]:
    """w·x + b for a vector or each row of a matrix"""
    if np.shape(x)[-1] != len(model.w):
        raise ArgumentError(f"expected {len(model.w)} features, got {np.shape(x)[-1]}")
    value = np.asarray(x, dtype=np.float64) @ model.w + model.b
    return float(value) if np.ndim(value) == 0 else value


def predict(model: SvmModel, x: np.ndarray) -> Union[int, np.ndarray]:
    """Sign of the decision value; ties go to +1"""
    value = decision_value(model, x)
    labels = np.where(np.asarray(value) >= 0, 1, -1)
    return int(labels) if np.ndim(labels) == 0 else labels


def average_precision(decisions: np.ndarray, labels: np.ndarray) -> float:
    """Mean precision at the rank of every positive, ranking by decision descending (stable)"""
    order = np.argsort(-np.asarray(decisions, dtype=np.float64), kind="stable")
    hits = np.asarray(labels)[order] > 0
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    return float(precision.mean())


def report_from_decisions(decisions: np.ndarray, labels: np.ndarray,
                          ids: Optional[List[str]] = None) -> EvalReport:
    decisions = np.asarray(decisions, dtype=np.float64)
    labels = np.asarray(labels)
    if len(decisions) == 0:
        raise ArgumentError("cannot evaluate an empty set")
    predicted = np.where(decisions >= 0, 1, -1)
    tp = int(np.sum((predicted == 1) & (labels == 1)))
    fp = int(np.sum((predicted == 1) & (labels == -1)))
    tn = int(np.sum((predicted == -1) & (labels == -1)))
    fn = int(np.sum((predicted == -1) & (labels == 1)))
    return EvalReport(
        accuracy=(tp + tn) / len(labels),
        average_precision=average_precision(decisions, labels),
        tp=tp, fp=fp, tn=tn, fn=fn,
        decisions=decisions.tolist(),
        labels=[int(v) for v in labels],
        ids=list(ids or []),
    )


def evaluate(model: SvmModel, X: np.ndarray, y: np.ndarray, ids: Optional[List[str]] = None) -> EvalReport:
    """Accuracy at threshold 0, average precision and confusion counts"""
    return report_from_decisions(decision_value(model, np.atleast_2d(X)), _check_labels(y), ids)


def tune_threshold(decisions: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """
    Threshold maximizing accuracy of ``decision >= threshold``

    Candidates are the observed decision values plus +inf; ties go to the
    smallest threshold.

    Returns:
        Tuple of (threshold, accuracy at that threshold)
    """
    decisions = np.asarray(decisions, dtype=np.float64)
    labels = np.asarray(labels)
    best_t, best_acc = np.inf, float(np.mean(labels == -1))
    for t in np.unique(decisions)[::-1]:
        acc = float(np.mean(np.where(decisions >= t, 1, -1) == labels))
        if acc >= best_acc:
            best_t, best_acc = float(t), acc
    return best_t, best_acc


def accuracy_at(decisions: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    return float(np.mean(np.where(np.asarray(decisions) >= threshold, 1, -1) == np.asarray(labels)))
