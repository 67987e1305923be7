"""Voter families over precomputed classifier scores.

A voter is any real-valued scorer of an example.  Here voters come in two
flavors: the raw columns of a score matrix (one column per base classifier),
and RBF-kernel similarities to a fixed support set of score vectors, which
turn every support example into a voter of its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScoreMatrix:
    """m x n matrix of voter outputs; entry (j, i) is voter i on example j."""

    values: np.ndarray
    voter_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionError(f"scores must be 2-D, got shape {values.shape}")
        m, n = values.shape
        if m < 1 or n < 1:
            raise DimensionError("score matrix needs at least one row and column")
        if not np.all(np.isfinite(values)):
            raise ValueError("score entries must be finite")
        names = tuple(str(s) for s in self.voter_names)
        if len(names) != n:
            raise DimensionError(f"{len(names)} voter names for {n} columns")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "voter_names", names)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


def default_names(n: int, prefix: str = "h") -> tuple[str, ...]:
    return tuple(f"{prefix}{i + 1}" for i in range(n))


@dataclass(frozen=True)
class LabeledSample:
    """Scores plus labels in {-1, +1}."""

    scores: ScoreMatrix
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if labels.shape[0] != self.scores.m:
            raise DimensionError(
                f"{labels.shape[0]} labels for {self.scores.m} score rows")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be exactly -1 or +1")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def m(self) -> int:
        return self.scores.m

    @property
    def n(self) -> int:
        return self.scores.n

    @property
    def m_plus(self) -> int:
        return int(np.sum(self.labels > 0))

    @property
    def m_minus(self) -> int:
        return int(np.sum(self.labels < 0))


def auto_complement(scores: ScoreMatrix) -> ScoreMatrix:
    """Append the negation of every voter: column n+i is -column i."""
    values = np.hstack([scores.values, -scores.values])
    names = scores.voter_names + tuple(f"{s}_neg" for s in scores.voter_names)
    return ScoreMatrix(values=values, voter_names=names)


@dataclass(frozen=True)
class RbfKernelLayer:
    """Gaussian similarities to a support set of score vectors.

    Each support row becomes a voter: k(x, x_t) = exp(-gamma |x - x_t|^2),
    evaluated on score vectors rather than raw features.
    """

    gamma: float
    support: np.ndarray
    support_names: tuple[str, ...]

    def __post_init__(self):
        if not (self.gamma > 0.0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        support = np.asarray(self.support, dtype=np.float64)
        if support.ndim != 2:
            raise DimensionError("support must be a 2-D matrix of score vectors")
        if not np.all(np.isfinite(support)):
            raise ValueError("support entries must be finite")
        names = tuple(str(s) for s in self.support_names)
        if len(names) != support.shape[0]:
            raise DimensionError(
                f"{len(names)} support names for {support.shape[0]} rows")
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "support", _freeze(support))
        object.__setattr__(self, "support_names", names)

    @classmethod
    def from_sample(cls, scores: ScoreMatrix, gamma: float) -> "RbfKernelLayer":
        names = tuple(f"k{i + 1}" for i in range(scores.m))
        return cls(gamma=gamma, support=scores.values, support_names=names)


def rbf_expand(layer: RbfKernelLayer, scores: ScoreMatrix) -> ScoreMatrix:
    """Evaluate every kernel voter on every score row: m x s matrix with
    entry (j, t) = exp(-gamma |scores_j - support_t|^2)."""
    if scores.n != layer.support.shape[1]:
        raise DimensionError(
            f"score rows have {scores.n} entries, support rows have "
            f"{layer.support.shape[1]}")
    x = scores.values
    s = layer.support
    sq = (np.sum(x * x, axis=1)[:, None] + np.sum(s * s, axis=1)[None, :]
          - 2.0 * (x @ s.T))
    np.clip(sq, 0.0, None, out=sq)  # guard FP negatives at zero distance
    return ScoreMatrix(values=np.exp(-layer.gamma * sq),
                       voter_names=layer.support_names)


def median_sq_dist(values: np.ndarray) -> float:
    """Median pairwise squared distance between rows; the usual bandwidth
    heuristic.  Falls back to 1.0 when all rows coincide."""
    x = np.asarray(values, dtype=np.float64)
    sq = (np.sum(x * x, axis=1)[:, None] + np.sum(x * x, axis=1)[None, :]
          - 2.0 * (x @ x.T))
    iu = np.triu_indices(x.shape[0], k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(np.maximum(sq[iu], 0.0)))
    return med if med > 0.0 else 1.0


@dataclass(frozen=True)
class Standardizer:
    """Opt-in per-column affine map to zero mean / unit variance, fitted on
    one sample and applied to any other.  Constant columns are left at mean
    removal only.  The default pipeline does not standardize."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, scores: ScoreMatrix) -> "Standardizer":
        mean = scores.values.mean(axis=0)
        std = scores.values.std(axis=0)
        scale = np.where(std > 0.0, std, 1.0)
        return cls(mean=_freeze(mean), scale=_freeze(scale))

    def apply(self, scores: ScoreMatrix) -> ScoreMatrix:
        if scores.n != self.mean.shape[0]:
            raise DimensionError(
                f"standardizer fitted on {self.mean.shape[0]} columns, "
                f"got {scores.n}")
        return ScoreMatrix(values=(scores.values - self.mean) / self.scale,
                           voter_names=scores.voter_names)
