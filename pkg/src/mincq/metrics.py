"""Risk, margin moments, the C-bound, and ranking metrics.

The C-bound upper-bounds the majority-vote risk through the first two
moments of the margin y * score(x): whenever the mean margin is positive,

    risk <= 1 - first_moment^2 / second_moment.

Average precision follows the plain (non-interpolated) definition: rank by
descending score, then average Prec@j over the ranks j held by positives.
Ties are broken by original index, ascending, so rankings are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyInput, NoPositives, RankOutOfRange
from .mincq import MajorityVote, decision_scores
from .voters import LabeledSample


@dataclass(frozen=True)
class CBoundReport:
    first_moment: float
    second_moment: float
    c_bound: float | None    # None when the first moment is not positive
    empirical_risk: float

    @property
    def applicable(self) -> bool:
        return self.c_bound is not None


def q_margin_moments(vote: MajorityVote, sample: LabeledSample) -> tuple[float, float]:
    """Sample mean of the margin y*H(x) and of its square."""
    scores = decision_scores(vote, sample.scores.values)
    margins = sample.labels * scores
    return float(margins.mean()), float(np.mean(scores ** 2))


def zero_one_risk(vote: MajorityVote, sample: LabeledSample) -> float:
    """Fraction misclassified under the sign[0] = +1 convention."""
    scores = decision_scores(vote, sample.scores.values)
    predicted = np.where(scores >= 0.0, 1.0, -1.0)
    return float(np.mean(predicted != sample.labels))


def c_bound(vote: MajorityVote, sample: LabeledSample) -> CBoundReport:
    first, second = q_margin_moments(vote, sample)
    risk = zero_one_risk(vote, sample)
    if first <= 0.0:
        return CBoundReport(first_moment=first, second_moment=second,
                            c_bound=None, empirical_risk=risk)
    return CBoundReport(first_moment=first, second_moment=second,
                        c_bound=1.0 - first * first / second,
                        empirical_risk=risk)


def _ranking(scores: np.ndarray, labels: np.ndarray):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    # Stable sort on -scores keeps original order among equal scores.
    order = np.argsort(-scores, kind="stable")
    return labels[order] > 0


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean of Prec@j over the ranks j occupied by positive examples."""
    is_pos = _ranking(scores, labels)
    n_pos = int(is_pos.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    ranks = np.arange(1, is_pos.shape[0] + 1)
    prec = np.cumsum(is_pos) / ranks
    return float(prec[is_pos].mean())


def prec_at(scores: np.ndarray, labels: np.ndarray, j: int) -> float:
    """Fraction of positives among the top-j ranked examples."""
    is_pos = _ranking(scores, labels)
    if not 1 <= j <= is_pos.shape[0]:
        raise RankOutOfRange(f"rank {j} outside 1..{is_pos.shape[0]}")
    return float(is_pos[:j].sum() / j)


def mean_average_precision(per_concept_aps) -> float:
    aps = np.asarray(list(per_concept_aps), dtype=np.float64)
    if aps.size == 0:
        raise EmptyInput("mean over an empty list of average precisions")
    return float(aps.mean())
