"""ROC/AUC computation and experiment reports.

AUC follows the Mann-Whitney convention: the probability that a random
positive outscores a random negative, with ties counted half. Computed
from average ranks in O(n log n); tests cross-check against the O(n^2)
pairwise count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import tensor as tt
from .datasynth import NoduleDataset
from .model import ModelConfig, ModelParams, forward_logits


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be 1-d and the same length")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def check_both_classes(self):
        if self.labels.min() == self.labels.max():
            raise ValueError("AUC undefined: need both classes present")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(s: ScoredSet) -> float:
    """(concordant + 0.5 * tied) / (n_pos * n_neg), via rank sums."""
    s.check_both_classes()
    n_pos = int(s.labels.sum())
    n_neg = len(s.labels) - n_pos
    ranks = _average_ranks(s.scores)
    rank_sum = ranks[s.labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _roc_table(s: ScoredSet) -> List[Tuple[float, float, float]]:
    """(threshold, fpr, tpr) rows; threshold inf yields the (0, 0) corner."""
    s.check_both_classes()
    n_pos = int(s.labels.sum())
    n_neg = len(s.labels) - n_pos
    order = np.argsort(-s.scores, kind="mergesort")
    scores = s.scores[order]
    labels = s.labels[order]
    rows = [(float("inf"), 0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[j + 1] == scores[i]:
            j += 1
        tp += int(labels[i:j + 1].sum())
        fp += (j - i + 1) - int(labels[i:j + 1].sum())
        rows.append((float(scores[i]), fp / n_neg, tp / n_pos))
        i = j + 1
    return rows


def roc_curve(s: ScoredSet) -> List[Tuple[float, float]]:
    """(fpr, tpr) points from (0,0) to (1,1), one per distinct score."""
    return [(fpr, tpr) for _, fpr, tpr in _roc_table(s)]


def trapezoid_area(points: List[Tuple[float, float]]) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def score_dataset(
    params: ModelParams,
    config: ModelConfig,
    dataset: NoduleDataset,
    batch_size: int = 64,
) -> np.ndarray:
    """Classifier probabilities for every sample, inference mode (no augmentation)."""
    scores = np.empty(len(dataset), dtype=np.float64)
    with tt.no_grad():
        for start in range(0, len(dataset), batch_size):
            sel = slice(start, start + batch_size)
            logits = forward_logits(
                params, config,
                dataset.frames[sel].astype(config.np_dtype),
                dataset.times[sel].astype(np.float64),
            )
            scores[sel] = tt.sigmoid(logits).data.astype(np.float64)
    return scores


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    dataset: NoduleDataset,
    scores_path: Optional[str] = None,
    roc_path: Optional[str] = None,
) -> dict:
    """Score a labeled dataset; emit AUC, accuracy at 0.5, and optional CSVs."""
    scores = score_dataset(params, config, dataset)
    labels = dataset.labels.astype(int)
    scored = ScoredSet(scores, labels)
    auc = roc_auc(scored)
    accuracy = float(np.mean((scores >= 0.5).astype(int) == labels))
    if scores_path is not None:
        write_scores_csv(scores_path, scores, labels)
    if roc_path is not None:
        write_roc_csv(roc_path, scored)
    return {
        "n": len(dataset),
        "auc": auc,
        "accuracy": accuracy,
        "scores": scores,
    }


def write_scores_csv(path: str, scores: np.ndarray, labels: np.ndarray) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sample_id,label,score\n")
            for i, (label, score) in enumerate(zip(labels, scores)):
                fh.write(f"{i},{int(label)},{score:.10g}\n")
    except OSError as e:
        raise OSError(f"cannot write scores to '{path}': {e}") from e


def read_scores_csv(path: str) -> ScoredSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "sample_id,label,score":
                raise ValueError(f"'{path}': unexpected scores header '{header}'")
            labels, scores = [], []
            for line in fh:
                if not line.strip():
                    continue
                _, label, score = line.strip().split(",")
                labels.append(int(label))
                scores.append(float(score))
    except OSError as e:
        raise OSError(f"cannot read scores from '{path}': {e}") from e
    return ScoredSet(np.array(scores), np.array(labels))


def write_roc_csv(path: str, s: ScoredSet) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("threshold,fpr,tpr\n")
            for thr, fpr, tpr in _roc_table(s):
                fh.write(f"{thr:.10g},{fpr:.10g},{tpr:.10g}\n")
    except OSError as e:
        raise OSError(f"cannot write ROC points to '{path}': {e}") from e
