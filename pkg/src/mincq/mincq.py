"""The MinCq weighted-majority-vote learner.

Over an auto-complemented voter family with quasi-uniform weights (voter i
and its negation share mass 1/n), minimizing the second margin moment with
the first moment pinned at mu reduces to a QP in the first n weights only:

    minimize    q' M q - A' q
    subject to  m' q = mu/2 + (1/(2n)) sum_i m_i
                0 <= q_i <= 1/n

where M is the voter Gram matrix scaled by 1/m, m_i the voter-label
correlations, and A the row means of M.  The deployed vote scores with
weights w_i = 2 q_i - 1/n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    InvalidMargin,
    MarginInfeasible,
    SolverFailure,
)
from .qp import DEFAULT_MAX_ITER, DEFAULT_TOL, QpProblem, QpStatus, solve_qp
from .voters import LabeledSample, _freeze

_BOX_TOL = 1e-9


@dataclass(frozen=True)
class MincqMatrices:
    """Data blocks of the fusion QP for one labeled sample and margin."""

    m_mat: np.ndarray   # n x n voter Gram matrix / m
    m_vec: np.ndarray   # per-voter label correlation
    a_vec: np.ndarray   # row means of m_mat
    eq_rhs: float

    def __post_init__(self):
        object.__setattr__(self, "m_mat", _freeze(np.asarray(self.m_mat)))
        object.__setattr__(self, "m_vec", _freeze(np.asarray(self.m_vec)))
        object.__setattr__(self, "a_vec", _freeze(np.asarray(self.a_vec)))
        object.__setattr__(self, "eq_rhs", float(self.eq_rhs))

    @property
    def n(self) -> int:
        return self.m_vec.shape[0]


@dataclass(frozen=True)
class QuasiUniformWeights:
    """Learned weights q with 0 <= q_i <= 1/n; voter i's negation implicitly
    carries 1/n - q_i."""

    q: np.ndarray
    n: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).ravel()
        if q.shape[0] != self.n:
            raise DimensionError(f"{q.shape[0]} weights for n={self.n}")
        if np.any(q < -_BOX_TOL) or np.any(q > 1.0 / self.n + _BOX_TOL):
            raise ValueError("weights leave the [0, 1/n] box")
        object.__setattr__(self, "q", _freeze(q))


@dataclass(frozen=True)
class MajorityVote:
    """Deployable vote: score(x) = sum_i w_i h_i(x), w_i = 2 q_i - 1/n."""

    vote_weights: np.ndarray
    voter_names: tuple[str, ...]
    margin_mu: float

    def __post_init__(self):
        w = np.asarray(self.vote_weights, dtype=np.float64).ravel()
        n = w.shape[0]
        names = tuple(str(s) for s in self.voter_names)
        if len(names) != n:
            raise DimensionError(f"{len(names)} names for {n} weights")
        if np.any(np.abs(w) > 1.0 / n + 2.0 * _BOX_TOL):
            raise ValueError("vote weights leave the [-1/n, 1/n] box")
        object.__setattr__(self, "vote_weights", _freeze(w))
        object.__setattr__(self, "voter_names", names)

    @property
    def n(self) -> int:
        return self.vote_weights.shape[0]

    def to_quasi_uniform(self) -> QuasiUniformWeights:
        n = self.n
        q = np.clip((self.vote_weights + 1.0 / n) / 2.0, 0.0, 1.0 / n)
        return QuasiUniformWeights(q=q, n=n)


def assemble(sample: LabeledSample, mu: float) -> MincqMatrices:
    """Build the Gram matrix, label correlations, row means and the
    equality right-hand side for the given margin."""
    if not (mu > 0.0):
        raise InvalidMargin(f"margin must be positive, got {mu}")
    h = sample.scores.values
    m = sample.m
    m_mat = (h.T @ h) / m
    m_mat = 0.5 * (m_mat + m_mat.T)
    m_vec = (h.T @ sample.labels) / m
    a_vec = m_mat.mean(axis=1)
    eq_rhs = mu / 2.0 + m_vec.sum() / (2.0 * sample.n)
    return MincqMatrices(m_mat=m_mat, m_vec=m_vec, a_vec=a_vec, eq_rhs=eq_rhs)


def build_mincq_qp(mats: MincqMatrices, n: int) -> QpProblem:
    if n != mats.n:
        raise DimensionError(f"matrices built for n={mats.n}, got n={n}")
    return QpProblem(
        quad=mats.m_mat,
        lin=-mats.a_vec,
        lower=np.zeros(n),
        upper=np.full(n, 1.0 / n),
        eq_row=mats.m_vec,
        eq_rhs=mats.eq_rhs,
    )


def max_achievable_margin(mats: MincqMatrices) -> float:
    """Largest first moment any box-feasible weighting can produce."""
    return float(np.abs(mats.m_vec).sum() / mats.n)


def _check_feasible(mats: MincqMatrices, mu: float):
    max_mu = max_achievable_margin(mats)
    if mu > max_mu + 1e-12 * max(1.0, max_mu):
        raise MarginInfeasible(mu, max_mu)


def _canonicalize_duplicates(q: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Average weights across bit-identical voter columns so duplicated
    voters report one deterministic weight instead of a solver-chosen tie."""
    _, inverse = np.unique(scores.T, axis=0, return_inverse=True)
    out = q.copy()
    for g in np.unique(inverse):
        idx = np.flatnonzero(inverse == g)
        if idx.size > 1:
            out[idx] = q[idx].mean()
    return out


def solve_mincq(sample: LabeledSample, mu: float, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> QuasiUniformWeights:
    """Fit the quasi-uniform weights minimizing the second margin moment at
    first moment mu.  Raises MarginInfeasible (with the largest reachable
    margin) when mu cannot be met."""
    mats = assemble(sample, mu)
    _check_feasible(mats, mu)
    problem = build_mincq_qp(mats, sample.n)
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    if sol.status is QpStatus.INFEASIBLE:
        raise MarginInfeasible(mu, max_achievable_margin(mats))
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(
            f"QP ended with status {sol.status.value}, "
            f"KKT residual {sol.kkt_residual:.3e}")
    n = sample.n
    q = _canonicalize_duplicates(sol.x, sample.scores.values)
    return QuasiUniformWeights(q=np.clip(q, 0.0, 1.0 / n), n=n)


def to_majority_vote(weights: QuasiUniformWeights, names, mu: float) -> MajorityVote:
    n = weights.n
    return MajorityVote(vote_weights=2.0 * weights.q - 1.0 / n,
                        voter_names=tuple(names), margin_mu=float(mu))


def fit_vote(sample: LabeledSample, mu: float, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER) -> MajorityVote:
    """solve_mincq followed by weight extraction."""
    weights = solve_mincq(sample, mu, tol=tol, max_iter=max_iter)
    return to_majority_vote(weights, sample.scores.voter_names, mu)


def vote_score(vote: MajorityVote, scores_row: np.ndarray) -> float:
    row = np.asarray(scores_row, dtype=np.float64).ravel()
    if row.shape[0] != vote.n:
        raise DimensionError(f"row of length {row.shape[0]} for {vote.n} voters")
    return float(vote.vote_weights @ row)


def predict(vote: MajorityVote, scores_row: np.ndarray) -> int:
    """sign[score] with the sign[0] = +1 convention."""
    return 1 if vote_score(vote, scores_row) >= 0.0 else -1


def decision_scores(vote: MajorityVote, values: np.ndarray) -> np.ndarray:
    """Vectorized vote_score over the rows of an m x n score matrix."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != vote.n:
        raise DimensionError(
            f"score matrix of shape {values.shape} for {vote.n} voters")
    return values @ vote.vote_weights


def predict_all(vote: MajorityVote, values: np.ndarray) -> np.ndarray:
    return np.where(decision_scores(vote, values) >= 0.0, 1.0, -1.0)
