"""Convex quadratic programs over a box, one equality, and inequality rows.

The problem shape is

    minimize    x' quad x + lin' x          (no 1/2 factor on the quadratic)
    subject to  eq_row' x == eq_rhs         (optional, single row)
                ineq_rows x <= ineq_rhs     (optional)
                lower <= x <= upper         (entries may be +-inf)

``solve_qp`` runs an interior-point backend and certifies the result with an
independently computed KKT residual, sharpened by an active-set polish step.
``brute_force_qp`` is a grid-enumeration oracle for problems with at most
three variables, used to cross-check the solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
from cvxopt import matrix as _cvx_dense
from cvxopt import solvers as _cvx_solvers
from cvxopt import spmatrix as _cvx_sparse
from scipy.optimize import linprog

from .errors import InvalidProblem, OracleTooLarge

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000

# Relative floor on the smallest eigenvalue of the quadratic term.
PSD_RTOL = 1e-9

# Largest dense block we will eigen-check / polish.  The zero rows of a
# quadratic term do not affect its spectrum, so block-sparse problems
# (e.g. slack-padded ranking programs) stay cheap regardless of size.
_DENSE_GUARD = 4000

_MAX_GRID_POINTS = 50_000_000


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


def _as_vector(x, name: str, size: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidProblem(f"{name} must be a vector, got shape {v.shape}")
    if size is not None and v.shape[0] != size:
        raise InvalidProblem(f"{name} has length {v.shape[0]}, expected {size}")
    return v


@dataclass(frozen=True)
class QpProblem:
    """Immutable QP instance; validates shape and positive semidefiniteness."""

    quad: np.ndarray | sp.spmatrix
    lin: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    eq_row: np.ndarray | None = None
    eq_rhs: float | None = None
    ineq_rows: np.ndarray | sp.spmatrix | None = None
    ineq_rhs: np.ndarray | None = None

    def __post_init__(self):
        quad = self.quad
        if not sp.issparse(quad):
            quad = np.asarray(quad, dtype=np.float64)
            if quad.ndim != 2 or quad.shape[0] != quad.shape[1]:
                raise InvalidProblem(f"quad must be square, got shape {quad.shape}")
        else:
            quad = quad.tocsr().astype(np.float64)
            if quad.shape[0] != quad.shape[1]:
                raise InvalidProblem(f"quad must be square, got shape {quad.shape}")
        object.__setattr__(self, "quad", quad)
        v = quad.shape[0]

        object.__setattr__(self, "lin", _as_vector(self.lin, "lin", v))
        object.__setattr__(self, "lower", _as_vector(self.lower, "lower", v))
        object.__setattr__(self, "upper", _as_vector(self.upper, "upper", v))
        if not np.all(np.isfinite(self.lin)):
            raise InvalidProblem("lin must be finite")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise InvalidProblem("box bounds must not be NaN")
        if np.any(self.lower > self.upper):
            raise InvalidProblem("lower > upper for some variable")

        if (self.eq_row is None) != (self.eq_rhs is None):
            raise InvalidProblem("eq_row and eq_rhs must be given together")
        if self.eq_row is not None:
            row = _as_vector(self.eq_row, "eq_row", v)
            if not np.all(np.isfinite(row)) or not np.isfinite(self.eq_rhs):
                raise InvalidProblem("equality data must be finite")
            object.__setattr__(self, "eq_row", row)
            object.__setattr__(self, "eq_rhs", float(self.eq_rhs))

        if (self.ineq_rows is None) != (self.ineq_rhs is None):
            raise InvalidProblem("ineq_rows and ineq_rhs must be given together")
        if self.ineq_rows is not None:
            rows = self.ineq_rows
            if not sp.issparse(rows):
                rows = np.asarray(rows, dtype=np.float64)
                if rows.ndim != 2:
                    raise InvalidProblem("ineq_rows must be a matrix")
                if not np.all(np.isfinite(rows)):
                    raise InvalidProblem("ineq_rows must be finite")
            else:
                rows = rows.tocsr().astype(np.float64)
            if rows.shape[1] != v:
                raise InvalidProblem(
                    f"ineq_rows has {rows.shape[1]} columns, expected {v}"
                )
            rhs = _as_vector(self.ineq_rhs, "ineq_rhs", rows.shape[0])
            if not np.all(np.isfinite(rhs)):
                raise InvalidProblem("ineq_rhs must be finite")
            object.__setattr__(self, "ineq_rows", rows)
            object.__setattr__(self, "ineq_rhs", rhs)

        self._check_psd()

    @property
    def n_vars(self) -> int:
        return self.quad.shape[0]

    @property
    def n_ineq(self) -> int:
        return 0 if self.ineq_rows is None else self.ineq_rows.shape[0]

    def _check_psd(self):
        quad = self.quad
        if sp.issparse(quad):
            asym = abs(quad - quad.T)
            scale = abs(quad).max() if quad.nnz else 0.0
            if asym.nnz and asym.max() > 1e-8 * max(scale, 1.0):
                raise InvalidProblem("quad is not symmetric")
            support = np.flatnonzero(quad.getnnz(axis=1))
            sub = quad[np.ix_(support, support)].toarray() if support.size else None
        else:
            scale = np.abs(quad).max() if quad.size else 0.0
            if np.abs(quad - quad.T).max(initial=0.0) > 1e-8 * max(scale, 1.0):
                raise InvalidProblem("quad is not symmetric")
            support = np.flatnonzero(np.any(quad != 0.0, axis=1))
            sub = quad[np.ix_(support, support)] if support.size else None
        if sub is None:
            return
        if sub.shape[0] > _DENSE_GUARD:
            raise InvalidProblem(
                f"quad has a dense block of size {sub.shape[0]}; "
                f"PSD validation supports at most {_DENSE_GUARD}"
            )
        eigs = np.linalg.eigvalsh(0.5 * (sub + sub.T))
        norm = max(abs(eigs[0]), abs(eigs[-1]))
        if eigs[0] < -PSD_RTOL * norm:
            raise InvalidProblem(
                f"quad is not PSD: lambda_min = {eigs[0]:.3e}, norm = {norm:.3e}"
            )

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x @ (self.quad @ x) + self.lin @ x)


@dataclass(frozen=True)
class QpSolution:
    """Solver output.  ``kkt_residual`` is the max of the stationarity,
    primal-feasibility, complementarity and dual-sign residuals; the
    enumeration oracle reports NaN there (no dual certificate)."""

    x: np.ndarray
    objective: float
    status: QpStatus
    kkt_residual: float


def _equality_range(eq_row: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Exact min/max of eq_row' x over the box."""
    lo = 0.0
    hi = 0.0
    for e, l, u in zip(eq_row, lower, upper):
        if e == 0.0:
            continue
        a, b = e * l, e * u
        lo += min(a, b)
        hi += max(a, b)
    return lo, hi


def _infeasible(p: QpProblem) -> QpSolution:
    x = np.clip(np.zeros(p.n_vars), p.lower, p.upper)
    return QpSolution(x=x, objective=np.nan, status=QpStatus.INFEASIBLE,
                      kkt_residual=np.inf)


def _kkt_residual(p: QpProblem, x, y, z_ineq, z_lb, z_ub) -> float:
    """Max KKT residual for primal x and duals (y, z_*); duals may be zero
    vectors when the corresponding constraints are absent."""
    grad = 2.0 * (p.quad @ x) + p.lin
    r_dual_sign = 0.0
    if p.eq_row is not None:
        grad = grad + y * p.eq_row
    if p.ineq_rows is not None:
        grad = grad + p.ineq_rows.T @ z_ineq
        r_dual_sign = max(r_dual_sign, float(np.max(-z_ineq, initial=0.0)))
    grad = grad + z_ub - z_lb
    r_dual_sign = max(r_dual_sign, float(np.max(-z_lb, initial=0.0)),
                      float(np.max(-z_ub, initial=0.0)))
    r_stat = float(np.max(np.abs(grad)))

    r_prim = 0.0
    r_comp = 0.0
    if p.eq_row is not None:
        r_prim = abs(float(p.eq_row @ x) - p.eq_rhs)
    if p.ineq_rows is not None:
        slack = p.ineq_rhs - p.ineq_rows @ x
        r_prim = max(r_prim, float(np.max(-slack, initial=0.0)))
        r_comp = max(r_comp, float(np.max(np.abs(z_ineq * slack), initial=0.0)))
    finite_lb = np.isfinite(p.lower)
    finite_ub = np.isfinite(p.upper)
    if np.any(finite_lb):
        s = (x - p.lower)[finite_lb]
        r_prim = max(r_prim, float(np.max(-s, initial=0.0)))
        r_comp = max(r_comp, float(np.max(np.abs(z_lb[finite_lb] * s), initial=0.0)))
    if np.any(finite_ub):
        s = (p.upper - x)[finite_ub]
        r_prim = max(r_prim, float(np.max(-s, initial=0.0)))
        r_comp = max(r_comp, float(np.max(np.abs(z_ub[finite_ub] * s), initial=0.0)))
    return max(r_stat, r_prim, r_comp, r_dual_sign)


def _to_cvx(a) -> "_cvx_dense | _cvx_sparse":
    if sp.issparse(a):
        coo = a.tocoo()
        return _cvx_sparse(coo.data.tolist(), coo.row.tolist(), coo.col.tolist(),
                           size=coo.shape)
    return _cvx_dense(np.asarray(a, dtype=np.float64))


def _feasibility_lp(p: QpProblem) -> bool:
    """Phase-1 feasibility via HiGHS; True means a feasible point exists."""
    bounds = [(l if np.isfinite(l) else None, u if np.isfinite(u) else None)
              for l, u in zip(p.lower, p.upper)]
    a_eq = b_eq = a_ub = b_ub = None
    if p.eq_row is not None:
        a_eq, b_eq = p.eq_row.reshape(1, -1), [p.eq_rhs]
    if p.ineq_rows is not None:
        a_ub = p.ineq_rows if not sp.issparse(p.ineq_rows) else p.ineq_rows.toarray()
        b_ub = p.ineq_rhs
    res = linprog(c=np.zeros(p.n_vars), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq,
                  b_eq=b_eq, bounds=bounds, method="highs")
    return res.status == 0


def _polish(p: QpProblem, x, z_ineq, z_lb, z_ub):
    """Active-set refinement: fix the constraints the interior-point solution
    pins, solve the reduced KKT system, and recover exact duals.  Returns
    (x, y, z_ineq, z_lb, z_ub) or None when the system is too large."""
    v = p.n_vars
    rows = []
    rhs = []
    kinds = []  # (kind, index) matching rows

    if p.eq_row is not None:
        rows.append(p.eq_row)
        rhs.append(p.eq_rhs)
        kinds.append(("eq", 0))
    if p.ineq_rows is not None:
        slack = p.ineq_rhs - p.ineq_rows @ x
        for j in np.flatnonzero(z_ineq >= np.maximum(slack, 0.0)):
            row = p.ineq_rows[j]
            rows.append(row.toarray().ravel() if sp.issparse(row) else np.asarray(row).ravel())
            rhs.append(p.ineq_rhs[j])
            kinds.append(("ineq", j))
    for i in range(v):
        if np.isfinite(p.lower[i]) and z_lb[i] >= max(x[i] - p.lower[i], 0.0):
            e = np.zeros(v)
            e[i] = 1.0
            rows.append(e)
            rhs.append(p.lower[i])
            kinds.append(("lb", i))
        elif np.isfinite(p.upper[i]) and z_ub[i] >= max(p.upper[i] - x[i], 0.0):
            e = np.zeros(v)
            e[i] = 1.0
            rows.append(e)
            rhs.append(p.upper[i])
            kinds.append(("ub", i))

    a = len(rows)
    if v + a > _DENSE_GUARD:
        return None
    quad = p.quad.toarray() if sp.issparse(p.quad) else p.quad
    kkt = np.zeros((v + a, v + a))
    kkt[:v, :v] = 2.0 * quad
    target = np.concatenate([-p.lin, np.asarray(rhs, dtype=np.float64)])
    if a:
        c_mat = np.vstack(rows)
        kkt[:v, v:] = c_mat.T
        kkt[v:, :v] = c_mat
    sol, *_ = np.linalg.lstsq(kkt, target, rcond=None)
    if not np.all(np.isfinite(sol)):
        return None

    x_new = sol[:v]
    lam = sol[v:]
    y_new = 0.0
    z_ineq_new = np.zeros(p.n_ineq)
    z_lb_new = np.zeros(v)
    z_ub_new = np.zeros(v)
    for (kind, idx), mult in zip(kinds, lam):
        if kind == "eq":
            y_new = mult
        elif kind == "ineq":
            z_ineq_new[idx] = mult
        elif kind == "ub":
            z_ub_new[idx] = mult
        else:  # lb active: row was +e_i, inequality form is -x_i <= -l_i
            z_lb_new[idx] = -mult
    return x_new, y_new, z_ineq_new, z_lb_new, z_ub_new


def solve_qp(p: QpProblem, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER) -> QpSolution:
    """Solve the QP to KKT residual <= tol, or report why not.

    Infeasibility of the equality against the box is certified in closed
    form before any iteration.  OPTIMAL is only reported when the returned
    point's independically recomputed KKT residual is within ``tol``.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    v = p.n_vars

    eq_row, eq_rhs = p.eq_row, p.eq_rhs
    if eq_row is not None and not np.any(eq_row):
        # Degenerate 0' x = rhs equality: drop it or certify infeasibility.
        if abs(eq_rhs) > 1e-12:
            return _infeasible(p)
        eq_row, eq_rhs = None, None
    if eq_row is not None:
        lo, hi = _equality_range(eq_row, p.lower, p.upper)
        ftol = 1e-9 * max(1.0, abs(eq_rhs))
        if eq_rhs < lo - ftol or eq_rhs > hi + ftol:
            return _infeasible(p)

    finite_lb = np.isfinite(p.lower)
    finite_ub = np.isfinite(p.upper)
    n_box = int(finite_lb.sum() + finite_ub.sum())
    if p.ineq_rows is None and n_box == 0 and eq_row is None:
        # Unconstrained: stationary point of a convex quadratic.
        quad = p.quad.toarray() if sp.issparse(p.quad) else p.quad
        x, *_ = np.linalg.lstsq(2.0 * quad, -p.lin, rcond=None)
        res = _kkt_residual(p, x, 0.0, np.zeros(0), np.zeros(v), np.zeros(v))
        if res > tol:
            raise InvalidProblem("objective is unbounded below")
        return QpSolution(x=x, objective=p.objective(x),
                          status=QpStatus.OPTIMAL, kkt_residual=res)

    # Stack [ineq; x <= ub; -x <= -lb] as the cone constraint G x <= h.
    g_blocks = []
    h_blocks = []
    if p.ineq_rows is not None:
        g_blocks.append(sp.csr_matrix(p.ineq_rows))
        h_blocks.append(p.ineq_rhs)
    ub_idx = np.flatnonzero(finite_ub)
    lb_idx = np.flatnonzero(finite_lb)
    if ub_idx.size:
        g_blocks.append(sp.csr_matrix(
            (np.ones(ub_idx.size), (np.arange(ub_idx.size), ub_idx)),
            shape=(ub_idx.size, v)))
        h_blocks.append(p.upper[ub_idx])
    if lb_idx.size:
        g_blocks.append(sp.csr_matrix(
            (-np.ones(lb_idx.size), (np.arange(lb_idx.size), lb_idx)),
            shape=(lb_idx.size, v)))
        h_blocks.append(-p.lower[lb_idx])
    g_all = sp.vstack(g_blocks, format="csr")
    h_all = np.concatenate(h_blocks)

    use_sparse = sp.issparse(p.quad) or v > 500
    quad_mat = sp.csr_matrix(p.quad) if use_sparse else np.asarray(p.quad)
    cvx_p = _to_cvx(2.0 * quad_mat)
    cvx_q = _cvx_dense(p.lin)
    cvx_g = _to_cvx(g_all if use_sparse else g_all.toarray())
    cvx_h = _cvx_dense(h_all)
    cvx_a = cvx_b = None
    if eq_row is not None:
        cvx_a = _to_cvx(eq_row.reshape(1, -1))
        cvx_b = _cvx_dense(np.asarray([eq_rhs]))

    options = {
        "show_progress": False,
        "maxiters": int(min(max_iter, 200)),
        "abstol": 1e-10,
        "reltol": 1e-10,
        "feastol": min(1e-9, tol),
    }
    raw = None
    for kktsolver in (None, "ldl"):
        try:
            raw = _cvx_solvers.qp(cvx_p, cvx_q, cvx_g, cvx_h, cvx_a, cvx_b,
                                  kktsolver=kktsolver, options=options)
            break
        except (ValueError, ArithmeticError, ZeroDivisionError):
            continue
    if raw is None or raw.get("x") is None:
        if not _feasibility_lp(p):
            return _infeasible(p)
        x = np.clip(np.zeros(v), p.lower, p.upper)
        return QpSolution(x=x, objective=p.objective(x),
                          status=QpStatus.MAX_ITERATIONS, kkt_residual=np.inf)

    x = np.asarray(raw["x"]).ravel()
    y = float(np.asarray(raw["y"]).ravel()[0]) if eq_row is not None else 0.0
    z_all = np.asarray(raw["z"]).ravel()
    n_ineq = p.n_ineq
    z_ineq = z_all[:n_ineq]
    z_ub = np.zeros(v)
    z_lb = np.zeros(v)
    z_ub[ub_idx] = z_all[n_ineq:n_ineq + ub_idx.size]
    z_lb[lb_idx] = z_all[n_ineq + ub_idx.size:]

    best = (x, y, z_ineq, z_lb, z_ub)
    best_res = _kkt_residual(p, *best)
    polished = _polish(p, x, z_ineq, z_lb, z_ub)
    if polished is not None:
        pol_res = _kkt_residual(p, *polished)
        if np.isfinite(pol_res) and pol_res < best_res:
            best, best_res = polished, pol_res

    x_best = best[0]
    status = QpStatus.OPTIMAL if best_res <= tol else QpStatus.MAX_ITERATIONS
    if status is QpStatus.MAX_ITERATIONS and raw["status"] == "primal infeasible":
        if not _feasibility_lp(p):
            return _infeasible(p)
    return QpSolution(x=x_best, objective=p.objective(x_best), status=status,
                      kkt_residual=best_res)


def _axis_grid(lo: float, hi: float, step: float) -> np.ndarray:
    pts = np.arange(lo, hi + 0.5 * step, step)
    if pts.size == 0 or pts[-1] < hi - 1e-15 * max(1.0, abs(hi)):
        pts = np.append(pts, hi)
    return np.minimum(pts, hi)


def _grid_candidates(lower, upper, step, eq_row, eq_rhs):
    """Cartesian grid over the box.  With an equality, the best-conditioned
    coordinate is solved out so every candidate satisfies it exactly."""
    v = lower.size
    if eq_row is None:
        axes = [_axis_grid(lower[i], upper[i], step) for i in range(v)]
        total = int(np.prod([a.size for a in axes]))
        if total > _MAX_GRID_POINTS:
            raise OracleTooLarge(f"grid of {total} points exceeds the oracle budget")
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    k = int(np.argmax(np.abs(eq_row)))
    free = [i for i in range(v) if i != k]
    axes = [_axis_grid(lower[i], upper[i], step) for i in free]
    total = int(np.prod([a.size for a in axes])) if axes else 1
    if total > _MAX_GRID_POINTS:
        raise OracleTooLarge(f"grid of {total} points exceeds the oracle budget")
    if axes:
        mesh = np.meshgrid(*axes, indexing="ij")
        free_pts = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        free_pts = np.zeros((1, 0))
    solved = (eq_rhs - free_pts @ eq_row[free]) / eq_row[k]
    pad = 1e-12 * max(1.0, abs(lower[k]), abs(upper[k]))
    keep = (solved >= lower[k] - pad) & (solved <= upper[k] + pad)
    free_pts = free_pts[keep]
    solved = np.clip(solved[keep], lower[k], upper[k])
    pts = np.empty((free_pts.shape[0], v))
    pts[:, free] = free_pts
    pts[:, k] = solved
    return pts


def brute_force_qp(p: QpProblem, grid_step: float) -> QpSolution:
    """Exhaustive grid search over the box for v <= 3 variables.

    Candidates respect the equality exactly (one coordinate is eliminated)
    and inequalities within a small padding.  Three shrinking refinement
    rounds around the incumbent tighten the objective well below the
    O(grid_step) coarse-grid guarantee.
    """
    if grid_step <= 0.0:
        raise ValueError("grid_step must be positive")
    v = p.n_vars
    if v > 3:
        raise OracleTooLarge(f"oracle supports at most 3 variables, got {v}")
    if not (np.all(np.isfinite(p.lower)) and np.all(np.isfinite(p.upper))):
        raise InvalidProblem("oracle requires a finite box")

    eq_row, eq_rhs = p.eq_row, p.eq_rhs
    if eq_row is not None and not np.any(eq_row):
        if abs(eq_rhs) > 1e-12:
            return _infeasible(p)
        eq_row, eq_rhs = None, None
    if eq_row is not None:
        lo, hi = _equality_range(eq_row, p.lower, p.upper)
        ftol = 1e-9 * max(1.0, abs(eq_rhs))
        if eq_rhs < lo - ftol or eq_rhs > hi + ftol:
            return _infeasible(p)

    def feasible_mask(pts: np.ndarray) -> np.ndarray:
        if p.ineq_rows is None:
            return np.ones(pts.shape[0], dtype=bool)
        rows = p.ineq_rows.toarray() if sp.issparse(p.ineq_rows) else p.ineq_rows
        pad = 1e-9 * np.maximum(1.0, np.abs(p.ineq_rhs))
        return np.all(pts @ rows.T <= p.ineq_rhs + pad, axis=1)

    def objective_values(pts: np.ndarray) -> np.ndarray:
        quad = p.quad.toarray() if sp.issparse(p.quad) else p.quad
        return np.einsum("ni,ij,nj->n", pts, quad, pts) + pts @ p.lin

    best_x = None
    best_obj = np.inf
    lower, upper, step = p.lower.copy(), p.upper.copy(), float(grid_step)
    for round_idx in range(4):
        pts = _grid_candidates(lower, upper, step, eq_row, eq_rhs)
        if pts.shape[0]:
            pts = pts[feasible_mask(pts)]
        if pts.shape[0] == 0:
            if round_idx == 0:
                return _infeasible(p)
            break
        vals = objective_values(pts)
        k = int(np.argmin(vals))
        if vals[k] < best_obj:
            best_obj = float(vals[k])
            best_x = pts[k]
        # Shrink a window around the incumbent and refine.
        lower = np.maximum(p.lower, best_x - 2.0 * step)
        upper = np.minimum(p.upper, best_x + 2.0 * step)
        step /= 10.0

    return QpSolution(x=best_x, objective=best_obj, status=QpStatus.OPTIMAL,
                      kkt_residual=np.nan)
