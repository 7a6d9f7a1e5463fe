"""Hyperparameter selection by stratified k-fold CV and LOOCV evaluation.

The default lambda grid is relative: ``|xbar1 - xbar2|_inf * r`` for 20
log-spaced ratios ``r`` from 1 down to 1/50, evaluated against each fold's
own training means. The selected ratio is mapped back onto the full
training set, and the result is multiplied by ``sqrt((k - 1) / k)`` to
account for the smaller training size inside CV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import linalg
from .classifiers import (
    LabeledDataset,
    TldaModel,
    classify,
    fit_lda,
    moments,
    solve_selection_feasible,
    t_scores,
    tlda_from_beta,
    top_k,
)
from .errors import CvFailed, SparsaError, TooFewSamples
from .l1solver import Status, low_rank_factor, solve_path

DEFAULT_LAMBDA_RATIOS = tuple(np.geomspace(1.0, 1.0 / 50.0, 20))
METHODS = ("tlda", "tscore")


def default_p0_grid(n: int, p: int, cap: int = 30) -> list[int]:
    """``1 .. min(3 * floor(sqrt(n / log p)), cap)``, clipped to ``p``."""
    if p <= 1:
        return [1]
    top = min(3 * int(math.floor(math.sqrt(n / math.log(p)))), cap, p)
    return list(range(1, max(top, 1) + 1))


@dataclass(frozen=True)
class CvConfig:
    """Settings for k-fold CV over ``(lambda, p0)``.

    ``lambda_grid`` is an absolute, strictly descending grid; leave it as
    ``None`` to use ``lambda_ratios`` scaled by each training set's
    ``|xbar1 - xbar2|_inf``. ``p0_grid=None`` uses ``default_p0_grid``.
    """

    folds: int = 5
    seed: int = 0
    lambda_grid: Optional[tuple] = None
    lambda_ratios: tuple = DEFAULT_LAMBDA_RATIOS
    p0_grid: Optional[tuple] = None
    method: str = "tlda"
    ridge: bool = True

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        for name in ("lambda_grid", "lambda_ratios"):
            g = getattr(self, name)
            if g is None:
                continue
            g = tuple(float(v) for v in g)
            if not g or any(v <= 0 for v in g) or any(b >= a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} must be nonempty, positive and strictly descending")
            object.__setattr__(self, name, g)
        if self.p0_grid is not None:
            g = tuple(int(v) for v in self.p0_grid)
            if not g or any(v < 1 for v in g) or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError("p0_grid must be nonempty, positive and ascending")
            object.__setattr__(self, "p0_grid", g)

    @property
    def adjust_factor(self) -> float:
        return math.sqrt((self.folds - 1) / self.folds)


@dataclass(frozen=True)
class CvResult:
    lambda_hat: float
    p0_hat: int
    lambda_adjusted: float
    cv_error_table: np.ndarray  # rows follow lambda_values, columns p0_values; nan = failed
    lambda_values: np.ndarray
    p0_values: np.ndarray
    fold_assignments: np.ndarray
    degenerate: np.ndarray = field(repr=False)
    adjust_factor: float = 1.0

    @property
    def best_error(self) -> float:
        return float(np.nanmin(self.cv_error_table))


def stratified_folds(data: LabeledDataset, k: int, seed: int) -> np.ndarray:
    """Fold id per sample; per-class fold sizes differ by at most one.

    Each class is shuffled independently; class 2 continues the fold
    rotation where class 1 stopped so that overall fold sizes also stay
    balanced.
    """
    if min(data.n1, data.n2) < k:
        raise TooFewSamples(f"each class needs >= {k} samples, got n1={data.n1}, n2={data.n2}")
    rng = linalg.make_rng(seed)
    folds = np.empty(data.n, dtype=int)
    start = 0
    for cls in (1, 2):
        idx = np.flatnonzero(data.labels == cls)
        perm = rng.permutation(idx.size)
        folds[idx[perm]] = (start + np.arange(idx.size)) % k
        start = (start + idx.size) % k
    return folds


def _fold_scores(train: LabeledDataset, test: LabeledDataset, config: CvConfig, lambdas, p0s):
    """Misclassification counts for every grid cell on one fold."""
    n_l = len(lambdas) if lambdas is not None else 1
    counts = np.full((n_l, len(p0s)), np.nan)
    degenerate = np.zeros((n_l, len(p0s)), dtype=bool)
    m = moments(train)
    p = train.p
    valid = [j for j, p0 in enumerate(p0s) if p0 <= p]
    if config.method == "tscore":
        ranks = np.argsort(-np.abs(t_scores(train)), kind="stable")
        for j in valid:
            model = fit_lda(train, np.sort(ranks[: p0s[j]]), ridge=config.ridge, m=m)
            counts[0, j] = np.sum(classify(model, test.features) != test.labels)
        return counts, degenerate
    factor = low_rank_factor(m.centered, 1.0 / m.n) if m.n < p else None
    sols = solve_path(m.pooled_cov, m.mean_diff, lambdas, gram_factor=factor)
    ts = t_scores(train)
    for i, sol in enumerate(sols):
        if sol.status is Status.INFEASIBLE:
            continue
        for j in valid:
            try:
                model = tlda_from_beta(
                    train, m, sol.beta, lambdas[i], p0s[j], ridge=config.ridge, tscores=ts
                )
            except SparsaError:
                continue
            counts[i, j] = np.sum(classify(model, test.features) != test.labels)
            degenerate[i, j] = model.degenerate_selection
    return counts, degenerate


def cross_validate(data: LabeledDataset, config: CvConfig) -> CvResult:
    """k-fold CV of TLDA (or the t-score rule) over the grid.

    Scores are misclassification counts summed over folds, reported as a
    fraction of ``n``. A cell that fails on any fold is excluded. Ties go to
    the smaller ``p0``, then to the larger lambda.
    """
    folds = stratified_folds(data, config.folds, config.seed)
    p0s = list(config.p0_grid) if config.p0_grid is not None else default_p0_grid(data.n, data.p)
    full_dinf = float(np.max(np.abs(moments(data).mean_diff)))
    relative = config.lambda_grid is None
    if config.method == "tscore":
        n_l = 1
    else:
        n_l = len(config.lambda_ratios if relative else config.lambda_grid)
    total = np.zeros((n_l, len(p0s)))
    degenerate = np.zeros((n_l, len(p0s)), dtype=bool)
    for f in range(config.folds):
        train = data.rows(folds != f)
        test = data.rows(folds == f)
        lambdas = None
        if config.method == "tlda":
            if relative:
                dinf = float(np.max(np.abs(moments(train).mean_diff)))
                lambdas = [dinf * r for r in config.lambda_ratios]
            else:
                lambdas = list(config.lambda_grid)
        counts, deg = _fold_scores(train, test, config, lambdas, p0s)
        total += counts  # nan propagates: one failed fold fails the cell
        degenerate |= deg
    if np.all(np.isnan(total)):
        raise CvFailed("every (lambda, p0) cell failed")
    table = total / data.n
    if config.method == "tscore":
        lambda_values = np.array([np.nan])
    elif relative:
        lambda_values = full_dinf * np.asarray(config.lambda_ratios)
    else:
        lambda_values = np.asarray(config.lambda_grid)
    # argmin with ties -> smaller p0 (column), then larger lambda (row)
    best = None
    for j in range(len(p0s)):
        for i in range(n_l):
            v = total[i, j]
            if np.isnan(v):
                continue
            if best is None or v < total[best]:
                best = (i, j)
    i, j = best
    lam_hat = float(lambda_values[i])
    return CvResult(
        lambda_hat=lam_hat,
        p0_hat=int(p0s[j]),
        lambda_adjusted=config.adjust_factor * lam_hat,
        cv_error_table=table,
        lambda_values=lambda_values,
        p0_values=np.asarray(p0s),
        fold_assignments=folds,
        degenerate=degenerate,
        adjust_factor=config.adjust_factor,
    )


def fit_tlda_cv(
    data: LabeledDataset, config: CvConfig, log_prior_offset: float = 0.0
) -> tuple[TldaModel, CvResult]:
    """Tune by CV, then fit on all of ``data`` at the adjusted lambda.

    If the adjusted lambda is infeasible (possible when ``S_n`` is
    singular), lambda is raised toward ``|xbar1 - xbar2|_inf`` until the
    program is feasible; the model records the lambda actually used.
    """
    cv = cross_validate(data, config)
    m = moments(data)
    sol, lam = solve_selection_feasible(m, cv.lambda_adjusted)
    model = tlda_from_beta(
        data, m, sol.beta, lam, cv.p0_hat, ridge=config.ridge,
        log_prior_offset=log_prior_offset, solver_status=sol.status.value,
    )
    return model, cv


def fit_tscore_cv(data: LabeledDataset, config: CvConfig):
    """Tune ``p0`` for the t-score rule by CV and refit on all of ``data``."""
    cfg = CvConfig(
        folds=config.folds, seed=config.seed, p0_grid=config.p0_grid,
        method="tscore", ridge=config.ridge,
    )
    cv = cross_validate(data, cfg)
    sel = top_k(t_scores(data), cv.p0_hat)
    return fit_lda(data, sel, ridge=config.ridge), cv


@dataclass(frozen=True)
class LoocvResult:
    error_rate: float
    n_errors: int
    predictions: np.ndarray
    feature_counts: np.ndarray

    @property
    def mean_features(self) -> float:
        return float(np.mean(self.feature_counts))

    @property
    def sd_features(self) -> float:
        fc = self.feature_counts
        return float(np.std(fc, ddof=1)) if fc.size > 1 else 0.0


def loocv_evaluate(
    data: LabeledDataset,
    recipe: Callable[[LabeledDataset], object],
    progress: Optional[Callable[[int, int, int, int], None]] = None,
) -> LoocvResult:
    """Leave-one-out evaluation of a full training recipe.

    ``recipe(train)`` must return an object with ``predict(x)`` and an
    ``n_features`` attribute. The recipe is rerun for every held-out
    sample, so any screening it does happens inside the split.
    """
    if data.n < 3:
        raise TooFewSamples("LOOCV needs n >= 3")
    preds = np.empty(data.n, dtype=int)
    counts = np.empty(data.n, dtype=int)
    for i in range(data.n):
        mask = np.ones(data.n, dtype=bool)
        mask[i] = False
        fitted = recipe(data.rows(mask))
        preds[i] = int(np.atleast_1d(fitted.predict(data.features[i : i + 1]))[0])
        counts[i] = int(fitted.n_features)
        if progress is not None:
            progress(i, preds[i], int(data.labels[i]), counts[i])
    wrong = int(np.sum(preds != data.labels))
    return LoocvResult(wrong / data.n, wrong, preds, counts)
