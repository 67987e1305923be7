"""Fixed-rule and single-voter fusion baselines.

Four reference fusers: the single voter with the best training AP, the
per-example highest-|score| voter, the unweighted sum, and the AP-weighted
sum.  All ties resolve to the lowest voter index so results are
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeights, DimensionError
from .metrics import average_precision
from .voters import LabeledSample, _freeze

KIND_H_BEST = "hbest"
KIND_HIGHEST_MARGIN = "margin"
KIND_SUM = "sum"
KIND_MAP_WEIGHTED = "mapw"

_FITTED_KINDS = (KIND_H_BEST, KIND_MAP_WEIGHTED)
ALL_KINDS = (KIND_H_BEST, KIND_HIGHEST_MARGIN, KIND_SUM, KIND_MAP_WEIGHTED)


@dataclass(frozen=True)
class BaselineVote:
    kind: str
    index: int | None = None          # selected voter, hbest only
    weights: np.ndarray | None = None  # normalized AP weights, mapw only

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.kind == KIND_H_BEST and self.index is None:
            raise ValueError("hbest baseline needs a selected index")
        if self.kind == KIND_MAP_WEIGHTED:
            if self.weights is None:
                raise ValueError("mapw baseline needs weights")
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mapw weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", _freeze(w))


def fit_h_best(sample: LabeledSample) -> BaselineVote:
    """Pick the voter whose own scores have the highest AP on the sample."""
    aps = [average_precision(sample.scores.values[:, i], sample.labels)
           for i in range(sample.n)]
    return BaselineVote(kind=KIND_H_BEST, index=int(np.argmax(aps)))


def fit_map_weighted(sample: LabeledSample) -> BaselineVote:
    """Weight each voter by its AP share on the sample."""
    aps = np.asarray([average_precision(sample.scores.values[:, i], sample.labels)
                      for i in range(sample.n)])
    total = aps.sum()
    if total <= 0.0:
        raise DegenerateWeights("all per-voter average precisions are zero")
    return BaselineVote(kind=KIND_MAP_WEIGHTED, weights=aps / total)


def baseline_scores(vote: BaselineVote, values: np.ndarray) -> np.ndarray:
    """Fused score per row of an m x n score matrix."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"score matrix must be 2-D, got {values.shape}")
    if vote.kind == KIND_H_BEST:
        if vote.index >= values.shape[1]:
            raise DimensionError(
                f"voter {vote.index} selected but only {values.shape[1]} columns")
        return values[:, vote.index].copy()
    if vote.kind == KIND_HIGHEST_MARGIN:
        # np.argmax returns the first maximum: lowest index wins ties.
        picks = np.argmax(np.abs(values), axis=1)
        return values[np.arange(values.shape[0]), picks]
    if vote.kind == KIND_SUM:
        return values.sum(axis=1)
    if vote.weights.shape[0] != values.shape[1]:
        raise DimensionError(
            f"{vote.weights.shape[0]} weights for {values.shape[1]} columns")
    return values @ vote.weights


def baseline_predict(vote: BaselineVote, values: np.ndarray) -> np.ndarray:
    return np.where(baseline_scores(vote, values) >= 0.0, 1.0, -1.0)


def predict_highest_margin(scores_row: np.ndarray) -> int:
    """Sign of the entry with the largest magnitude (sign[0] = +1)."""
    row = np.asarray(scores_row, dtype=np.float64).ravel()
    if row.size == 0:
        raise DimensionError("empty score row")
    return 1 if row[int(np.argmax(np.abs(row)))] >= 0.0 else -1


def predict_sum(scores_row: np.ndarray) -> tuple[float, int]:
    """Unweighted-vote score and its sign."""
    row = np.asarray(scores_row, dtype=np.float64).ravel()
    if row.size == 0:
        raise DimensionError("empty score row")
    total = float(row.sum())
    return total, (1 if total >= 0.0 else -1)
