"""Order-preserving extensions of the fusion QP.

To push positives above negatives in the fused ranking, a hinge penalty on
score differences is added through slack variables that enter the objective
linearly with weight beta:

  * full pairwise: one slack per (positive, negative) pair, bounded below by
    the pair's normalized score difference under the vote;
  * averaged: one slack per positive, bounded below by its average
    difference against all negatives.

Both keep the quadratic block, margin equality and weight box of the plain
program; the slack block of the quadratic term is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ClassMissing, InvalidMargin, MarginInfeasible, PairwiseTooLarge, SolverFailure
from .mincq import (
    MincqMatrices,
    QuasiUniformWeights,
    _canonicalize_duplicates,
    _check_feasible,
    assemble,
    max_achievable_margin,
)
from .qp import DEFAULT_MAX_ITER, DEFAULT_TOL, QpProblem, QpStatus, solve_qp
from .voters import LabeledSample

DEFAULT_MAX_PAIRWISE = 50_000

VARIANT_PW = "pw"
VARIANT_PWAV = "pwav"


@dataclass(frozen=True)
class PairwiseProblem:
    """Difference blocks of the ranking programs.

    diff_full has one row per (positive, negative) pair, in positive-major
    order; row (j+, j-) holds (h_i(x_j-) - h_i(x_j+)) / (m+ m-) per voter.
    diff_avg sums those rows per positive.  diff_full is only materialized
    when the full pairwise program is requested.
    """

    base: MincqMatrices
    beta: float
    diff_avg: np.ndarray
    diff_full: np.ndarray | None = None


def _split(sample: LabeledSample):
    pos = np.flatnonzero(sample.labels > 0)
    neg = np.flatnonzero(sample.labels < 0)
    if pos.size == 0 or neg.size == 0:
        raise ClassMissing(
            f"ranking needs both classes, got {pos.size} positive and "
            f"{neg.size} negative examples")
    return pos, neg


def _validate(mu: float, beta: float):
    if not (mu > 0.0):
        raise InvalidMargin(f"margin must be positive, got {mu}")
    if not (beta > 0.0):
        raise ValueError(f"beta must be positive, got {beta}")


def assemble_pairwise(sample: LabeledSample, mu: float, beta: float,
                      with_full: bool = True) -> PairwiseProblem:
    _validate(mu, beta)
    pos, neg = _split(sample)
    h = sample.scores.values
    scale = 1.0 / (pos.size * neg.size)
    # Average difference per positive: (sum of negatives - m- * positive).
    neg_sum = h[neg].sum(axis=0)
    diff_avg = scale * (neg_sum[None, :] - neg.size * h[pos])
    diff_full = None
    if with_full:
        diff_full = scale * (h[neg][None, :, :] - h[pos][:, None, :])
        diff_full = diff_full.reshape(pos.size * neg.size, sample.n)
    return PairwiseProblem(base=assemble(sample, mu), beta=float(beta),
                           diff_avg=diff_avg, diff_full=diff_full)


def hinge_arguments(diff: np.ndarray, q: np.ndarray, n: int) -> np.ndarray:
    """Lower bounds the slacks must dominate, as a function of q:
    sum_i (2 q_i - 1/n) diff[r, i]."""
    return 2.0 * (diff @ q) - diff.sum(axis=1) / n


def _slack_qp(mats: MincqMatrices, diff: np.ndarray, beta: float) -> QpProblem:
    n = mats.n
    p = diff.shape[0]
    quad = sp.block_diag(
        (sp.csr_matrix(mats.m_mat), sp.csr_matrix((p, p))), format="csr")
    lin = np.concatenate([-mats.a_vec, np.full(p, beta)])
    eq_row = np.concatenate([mats.m_vec, np.zeros(p)])
    # xi_r >= 2 diff_r' q - (1/n) sum_i diff_ri, written as a <= row.
    ineq = sp.hstack(
        [sp.csr_matrix(2.0 * diff), -sp.identity(p, format="csr")],
        format="csr")
    ineq_rhs = diff.sum(axis=1) / n
    lower = np.concatenate([np.zeros(n), np.zeros(p)])
    upper = np.concatenate([np.full(n, 1.0 / n), np.full(p, np.inf)])
    return QpProblem(quad=quad, lin=lin, lower=lower, upper=upper,
                     eq_row=eq_row, eq_rhs=mats.eq_rhs,
                     ineq_rows=ineq, ineq_rhs=ineq_rhs)


def build_pw_qp(sample: LabeledSample, mu: float, beta: float) -> QpProblem:
    """Full pairwise program: n + m+*m- variables."""
    pairwise = assemble_pairwise(sample, mu, beta, with_full=True)
    return _slack_qp(pairwise.base, pairwise.diff_full, beta)


def build_pwav_qp(sample: LabeledSample, mu: float, beta: float) -> QpProblem:
    """Averaged-negative program: n + m+ variables."""
    pairwise = assemble_pairwise(sample, mu, beta, with_full=False)
    return _slack_qp(pairwise.base, pairwise.diff_avg, beta)


def solve_ranking(sample: LabeledSample, mu: float, beta: float, variant: str,
                  tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                  max_pairwise: int = DEFAULT_MAX_PAIRWISE,
                  ) -> tuple[QuasiUniformWeights, np.ndarray]:
    """Fit a ranking variant; returns the weights and the optimizer's slacks."""
    _validate(mu, beta)
    pos, neg = _split(sample)
    if variant == VARIANT_PW:
        n_pairs = pos.size * neg.size
        if n_pairs > max_pairwise:
            raise PairwiseTooLarge(
                f"{n_pairs} positive-negative pairs exceed the guard of "
                f"{max_pairwise}; use the averaged variant or raise the limit")
        problem = build_pw_qp(sample, mu, beta)
    elif variant == VARIANT_PWAV:
        problem = build_pwav_qp(sample, mu, beta)
    else:
        raise ValueError(f"unknown ranking variant {variant!r}")

    mats = assemble(sample, mu)
    _check_feasible(mats, mu)
    sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    if sol.status is QpStatus.INFEASIBLE:
        raise MarginInfeasible(mu, max_achievable_margin(mats))
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(
            f"QP ended with status {sol.status.value}, "
            f"KKT residual {sol.kkt_residual:.3e}")

    n = sample.n
    q = _canonicalize_duplicates(sol.x[:n], sample.scores.values)
    weights = QuasiUniformWeights(q=np.clip(q, 0.0, 1.0 / n), n=n)
    slacks = np.maximum(sol.x[n:], 0.0)
    return weights, slacks
