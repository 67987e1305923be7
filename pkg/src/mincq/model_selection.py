"""Hyperparameter selection by stratified k-fold cross-validation.

Every grid cell (margin mu, slack weight beta, kernel width gamma) is
trained on k-1 folds and scored by average precision on the held-out fold;
the cell with the best mean AP wins.  Cells whose margin is infeasible are
recorded as skipped and never selected.  Results are keyed by cell, not by
completion order, so concurrent evaluation cannot change the outcome.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ClassMissing, MarginInfeasible, NoFeasibleCell
from .mincq import MajorityVote, QuasiUniformWeights, decision_scores, solve_mincq, to_majority_vote
from .metrics import average_precision
from .qp import DEFAULT_TOL
from .ranking import DEFAULT_MAX_PAIRWISE, VARIANT_PW, VARIANT_PWAV, solve_ranking
from .voters import LabeledSample, RbfKernelLayer, ScoreMatrix, median_sq_dist, rbf_expand

VARIANT_PLAIN = "plain"
ALL_VARIANTS = (VARIANT_PLAIN, VARIANT_PW, VARIANT_PWAV)

# 8 log-spaced margins, 10^-4 .. 10^-0.5.
DEFAULT_MU_GRID = tuple(float(10.0 ** e) for e in np.arange(-4.0, 0.0, 0.5))
DEFAULT_BETA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)


def default_gamma_grid(values: np.ndarray) -> tuple[float, ...]:
    """Powers of two scaled by the inverse median pairwise squared distance
    of the score vectors."""
    base = 1.0 / median_sq_dist(values)
    return tuple(float(base * 2.0 ** k) for k in range(-6, 5))


@dataclass(frozen=True)
class CvConfig:
    folds: int
    variant: str = VARIANT_PLAIN
    kernel_layer: bool = False
    seed: int = 0
    mu_grid: tuple[float, ...] | None = None      # None: default grid
    beta_grid: tuple[float, ...] | None = None    # None: default grid
    gamma_grid: tuple[float, ...] | None = None   # None: median-scaled grid

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"need at least 2 folds, got {self.folds}")
        if self.variant not in ALL_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        for name in ("mu_grid", "beta_grid", "gamma_grid"):
            grid = getattr(self, name)
            if grid is None:
                continue
            grid = tuple(float(g) for g in grid)
            if len(grid) == 0 or any(not (g > 0.0) for g in grid):
                raise ValueError(f"{name} must be nonempty and positive")
            object.__setattr__(self, name, grid)


@dataclass(frozen=True)
class ParamCell:
    mu: float
    beta: float | None = None    # ranking variants only
    gamma: float | None = None   # kernel layer only

    def sort_key(self):
        # Tie-break toward the mildest regularization: smaller beta,
        # then smaller mu, then smaller gamma.
        return (self.beta or 0.0, self.mu, self.gamma or 0.0)


@dataclass(frozen=True)
class CellResult:
    params: ParamCell
    mean_ap: float | None
    std_ap: float | None
    folds_used: int
    skipped: bool
    reason: str | None = None


@dataclass(frozen=True)
class CvResult:
    best: ParamCell
    cells: tuple[CellResult, ...]
    fold_assignment: np.ndarray
    config: CvConfig


@dataclass(frozen=True)
class FittedFusion:
    """A trained fusion model: vote weights plus the optional kernel layer
    that turns raw score rows into voter outputs."""

    variant: str
    mu: float
    vote: MajorityVote
    weights: QuasiUniformWeights
    beta: float | None = None
    kernel: RbfKernelLayer | None = None

    def voter_values(self, scores: ScoreMatrix) -> np.ndarray:
        if self.kernel is None:
            return scores.values
        return rbf_expand(self.kernel, scores).values

    def decision_scores(self, scores: ScoreMatrix) -> np.ndarray:
        return decision_scores(self.vote, self.voter_values(scores))

    def predict(self, scores: ScoreMatrix) -> np.ndarray:
        return np.where(self.decision_scores(scores) >= 0.0, 1.0, -1.0)


def kfold_split(m: int, folds: int, seed: int,
                labels: np.ndarray | None = None) -> np.ndarray:
    """Deterministic fold assignment; stratified by label when given, with
    per-class counts differing by at most one across folds."""
    if folds > m:
        raise ValueError(f"{folds} folds for {m} examples")
    if folds < 1:
        raise ValueError("folds must be >= 1")
    rng = np.random.default_rng(seed)
    assign = np.empty(m, dtype=np.int64)
    if labels is None:
        perm = rng.permutation(m)
        assign[perm] = np.arange(m) % folds
        return assign
    labels = np.asarray(labels)
    offset = 0
    for cls in (1.0, -1.0):
        idx = np.flatnonzero(labels == cls)
        shuffled = idx[rng.permutation(idx.size)]
        # Rotating the dealing start keeps total fold sizes balanced too.
        assign[shuffled] = (offset + np.arange(idx.size)) % folds
        offset += idx.size
    return assign


def _max_workers() -> int:
    raw = os.environ.get("MINCQ_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        return 1
    if k == 0:
        return os.cpu_count() or 1
    return max(1, k)


def fit_fusion(sample: LabeledSample, variant: str, mu: float,
               beta: float | None = None, gamma: float | None = None,
               kernel: bool = False, tol: float = DEFAULT_TOL,
               max_pairwise: int = DEFAULT_MAX_PAIRWISE) -> FittedFusion:
    """Train one fusion model on a full sample.

    With ``kernel`` set, every training example becomes an RBF voter over
    score vectors and the vote is learned on the expanded matrix.
    """
    if variant not in ALL_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    layer = None
    train = sample
    if kernel:
        if gamma is None:
            raise ValueError("kernel fusion needs gamma")
        layer = RbfKernelLayer.from_sample(sample.scores, gamma)
        train = LabeledSample(scores=rbf_expand(layer, sample.scores),
                              labels=sample.labels)
    if variant == VARIANT_PLAIN:
        weights = solve_mincq(train, mu, tol=tol)
    else:
        if beta is None:
            raise ValueError(f"variant {variant!r} needs beta")
        weights, _ = solve_ranking(train, mu, beta, variant, tol=tol,
                                   max_pairwise=max_pairwise)
    vote = to_majority_vote(weights, train.scores.voter_names, mu)
    return FittedFusion(variant=variant, mu=mu, beta=beta, vote=vote,
                        weights=weights, kernel=layer)


def _make_cells(sample: LabeledSample, config: CvConfig) -> list[ParamCell]:
    mu_grid = config.mu_grid or DEFAULT_MU_GRID
    if config.variant == VARIANT_PLAIN:
        beta_grid = (None,)
    else:
        beta_grid = config.beta_grid or DEFAULT_BETA_GRID
    if config.kernel_layer:
        gamma_grid = config.gamma_grid or default_gamma_grid(sample.scores.values)
    else:
        gamma_grid = (None,)
    return [ParamCell(mu=mu, beta=beta, gamma=gamma)
            for gamma in gamma_grid for beta in beta_grid for mu in mu_grid]


def _fold_views(sample: LabeledSample, assign: np.ndarray, fold: int):
    train_mask = assign != fold
    train = LabeledSample(
        scores=ScoreMatrix(values=sample.scores.values[train_mask],
                           voter_names=sample.scores.voter_names),
        labels=sample.labels[train_mask])
    val_scores = ScoreMatrix(values=sample.scores.values[~train_mask],
                             voter_names=sample.scores.voter_names)
    return train, val_scores, sample.labels[~train_mask]


class _KernelCache:
    """Expanded train/validation voter matrices per (gamma, fold)."""

    def __init__(self, sample: LabeledSample, assign: np.ndarray, folds: int):
        self.sample = sample
        self.assign = assign
        self.folds = folds
        self._store: dict[tuple[float, int], tuple] = {}

    def get(self, gamma: float, fold: int):
        key = (gamma, fold)
        if key not in self._store:
            train, val_scores, val_labels = _fold_views(
                self.sample, self.assign, fold)
            layer = RbfKernelLayer.from_sample(train.scores, gamma)
            train_k = LabeledSample(scores=rbf_expand(layer, train.scores),
                                    labels=train.labels)
            val_k = rbf_expand(layer, val_scores)
            self._store[key] = (train_k, val_k, val_labels)
        return self._store[key]


def _evaluate_cell(sample: LabeledSample, assign: np.ndarray, config: CvConfig,
                   cell: ParamCell, kernel_cache: _KernelCache | None,
                   tol: float, max_pairwise: int) -> CellResult:
    aps = []
    for fold in range(config.folds):
        if kernel_cache is not None:
            train, val_scores, val_labels = kernel_cache.get(cell.gamma, fold)
            val_values = val_scores.values
        else:
            train, val_scores, val_labels = _fold_views(sample, assign, fold)
            val_values = val_scores.values
        try:
            if config.variant == VARIANT_PLAIN:
                weights = solve_mincq(train, cell.mu, tol=tol)
            else:
                weights, _ = solve_ranking(train, cell.mu, cell.beta,
                                           config.variant, tol=tol,
                                           max_pairwise=max_pairwise)
        except MarginInfeasible:
            return CellResult(params=cell, mean_ap=None, std_ap=None,
                              folds_used=0, skipped=True,
                              reason="margin_infeasible")
        vote = to_majority_vote(weights, train.scores.voter_names, cell.mu)
        if not np.any(val_labels > 0):
            continue  # AP undefined on a positive-free fold; drop it
        fused = decision_scores(vote, val_values)
        aps.append(average_precision(fused, val_labels))
    if not aps:
        return CellResult(params=cell, mean_ap=None, std_ap=None, folds_used=0,
                          skipped=True, reason="no_positive_validation_folds")
    arr = np.asarray(aps)
    return CellResult(params=cell, mean_ap=float(arr.mean()),
                      std_ap=float(arr.std()), folds_used=len(aps),
                      skipped=False)


def grid_search_cv(sample: LabeledSample, config: CvConfig,
                   tol: float = DEFAULT_TOL,
                   max_pairwise: int = DEFAULT_MAX_PAIRWISE) -> CvResult:
    """Evaluate the full grid and return the best feasible cell.

    The winner is additionally refit on the full sample; if that refit is
    infeasible the next-best cell is tried, so the selected parameters are
    always trainable on the data they were selected for.
    """
    if config.folds > sample.m:
        raise ValueError(f"{config.folds} folds for {sample.m} examples")
    assign = kfold_split(sample.m, config.folds, config.seed,
                         labels=sample.labels)
    if config.variant in (VARIANT_PW, VARIANT_PWAV):
        for fold in range(config.folds):
            train_labels = sample.labels[assign != fold]
            if not (np.any(train_labels > 0) and np.any(train_labels < 0)):
                raise ClassMissing(
                    f"training complement of fold {fold} lacks a class; "
                    f"ranking variants need both")

    cells = _make_cells(sample, config)
    kernel_cache = (_KernelCache(sample, assign, config.folds)
                    if config.kernel_layer else None)

    def run(cell: ParamCell) -> CellResult:
        return _evaluate_cell(sample, assign, config, cell, kernel_cache,
                              tol, max_pairwise)

    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(cell) for cell in cells]

    scored = [r for r in results if not r.skipped]
    scored.sort(key=lambda r: (-r.mean_ap,) + r.params.sort_key())
    refit_failed = set()
    best = None
    for cand in scored:
        try:
            fit_fusion(sample, config.variant, cand.params.mu,
                       beta=cand.params.beta, gamma=cand.params.gamma,
                       kernel=config.kernel_layer, tol=tol,
                       max_pairwise=max_pairwise)
        except MarginInfeasible:
            refit_failed.add(cand.params)
            continue
        best = cand.params
        break
    if best is None:
        raise NoFeasibleCell("every grid cell was infeasible or unscorable")

    final = []
    for r in results:
        if r.params in refit_failed:
            final.append(CellResult(params=r.params, mean_ap=r.mean_ap,
                                    std_ap=r.std_ap, folds_used=r.folds_used,
                                    skipped=True, reason="refit_infeasible"))
        else:
            final.append(r)
    return CvResult(best=best, cells=tuple(final), fold_assignment=assign,
                    config=config)
