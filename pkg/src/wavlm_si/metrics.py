"""ROC and TPR-at-fixed-FPR for one class against the rest."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import CLASS_NAMES
from .errors import InputError, MetricUndefinedError

SCORE_HEADER = ("clip_id", "true_label", "s_backchannel", "s_failed", "s_interruption", "s_laughter")


@dataclass(frozen=True)
class ScoredClip:
    clip_id: str
    true_label: str
    scores: tuple[float, float, float, float]

    def __post_init__(self):
        if self.true_label not in CLASS_NAMES:
            raise InputError(f"{self.clip_id}: unknown label {self.true_label!r}")
        scores = tuple(float(s) for s in self.scores)
        if len(scores) != len(CLASS_NAMES) or not all(np.isfinite(scores)):
            raise InputError(f"{self.clip_id}: need {len(CLASS_NAMES)} finite scores, got {self.scores}")
        object.__setattr__(self, "scores", scores)

    def score(self, label: str) -> float:
        return self.scores[CLASS_NAMES.index(label)]


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


def _split(clips: Sequence[ScoredClip], positive_class: str) -> tuple[np.ndarray, np.ndarray]:
    if positive_class not in CLASS_NAMES:
        raise InputError(f"unknown class {positive_class!r}")
    scores = np.array([c.score(positive_class) for c in clips], dtype=np.float64)
    is_pos = np.array([c.true_label == positive_class for c in clips])
    if not is_pos.any() or is_pos.all():
        raise MetricUndefinedError(f"need at least one {positive_class} clip and one other clip")
    return scores, is_pos


def roc_curve(clips: Sequence[ScoredClip], positive_class: str = "failed_interruption") -> list[RocPoint]:
    """One point per distinct score (predict positive when score >= threshold),
    preceded by the reject-everything point at threshold +inf."""
    scores, is_pos = _split(clips, positive_class)
    order = np.argsort(-scores, kind="stable")
    scores, is_pos = scores[order], is_pos[order]
    tp = np.cumsum(is_pos)
    fp = np.cumsum(~is_pos)
    # last index of each run of tied scores
    ends = np.flatnonzero(np.r_[scores[1:] != scores[:-1], True])
    n_pos, n_neg = tp[-1], fp[-1]
    points = [RocPoint(0.0, 0.0, float("inf"))]
    points += [RocPoint(fp[i] / n_neg, tp[i] / n_pos, float(scores[i])) for i in ends]
    return points


def tpr_at_fpr(clips: Sequence[ScoredClip], positive_class: str = "failed_interruption", fpr_budget: float = 0.01) -> float:
    """Largest TPR among thresholds whose FPR does not exceed the budget."""
    return max(p.tpr for p in roc_curve(clips, positive_class) if p.fpr <= fpr_budget)


def roc_auc(points: Sequence[RocPoint]) -> float:
    fpr = np.array([p.fpr for p in points])
    tpr = np.array([p.tpr for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def read_scores(path: str | Path) -> list[ScoredClip]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty score file")
    clips = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(SCORE_HEADER):
            raise InputError(f"{path}:{lineno}: expected {len(SCORE_HEADER)} fields, got {len(row)}")
        try:
            scores = tuple(float(x) for x in row[2:])
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric score") from None
        clips.append(ScoredClip(row[0], row[1], scores))
    return clips


def write_scores(clips: Iterable[ScoredClip], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_HEADER)
        for c in clips:
            writer.writerow([c.clip_id, c.true_label, *(repr(s) for s in c.scores)])
