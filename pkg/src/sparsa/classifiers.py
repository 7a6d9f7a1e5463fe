"""Two-class Gaussian linear classification rules.

Contains the oracle Fisher rule and its misclassification rate, plug-in
LDA, naive Bayes, the two-sample t-score screen, and the two-stage rule
(TLDA) that selects features by constrained l1 minimization and refits
LDA on them.

Conventions
-----------
* Labels are ``1`` and ``2``. Every rule assigns class 1 iff its score is
  strictly greater than its threshold, so a score exactly on the
  threshold goes to class 2.
* The pooled covariance uses the maximum-likelihood ``1/n`` divisor, not
  ``1/(n-2)``. This differs from most statistics packages.
* Subset signal strength is ``mu_d[A] @ inv(sigma[A, A]) @ mu_d[A]``, the
  Mahalanobis separation of the marginal model on ``A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from . import linalg
from .errors import (
    DegenerateClass,
    InfeasibleProblem,
    NotPositiveDefinite,
    ZeroDirection,
    ZeroVariance,
)
from .l1solver import L1Problem, L1Solution, Status, low_rank_factor, solve


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPopulation:
    """Two classes ``N(mu1, sigma)`` and ``N(mu2, sigma)``."""

    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu1 = np.asarray(self.mu1, dtype=float)
        mu2 = np.asarray(self.mu2, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu1.shape != mu2.shape or sigma.shape != (mu1.size, mu1.size):
            raise ValueError("population dimensions disagree")
        if np.array_equal(mu1, mu2):
            raise ValueError("class means must differ")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "mu2", mu2)
        object.__setattr__(self, "sigma", sigma)

    @property
    def p(self) -> int:
        return self.mu1.size

    @property
    def mu_a(self) -> np.ndarray:
        return 0.5 * (self.mu1 + self.mu2)

    @property
    def mu_d(self) -> np.ndarray:
        return 0.5 * (self.mu1 - self.mu2)

    @property
    def beta0(self) -> np.ndarray:
        """True discriminant direction ``2 inv(sigma) mu_d``."""
        return 2.0 * linalg.spd_solve(self.sigma, self.mu_d)

    def sample(self, n1: int, n2: int, seed: int) -> "LabeledDataset":
        """Draw ``n1`` class-1 rows then ``n2`` class-2 rows from one seeded stream."""
        L = linalg.cholesky(self.sigma)
        z = linalg.make_rng(seed).standard_normal((n1 + n2, self.p))
        x = z @ L.T
        x[:n1] += self.mu1
        x[n1:] += self.mu2
        labels = np.r_[np.ones(n1, dtype=int), np.full(n2, 2, dtype=int)]
        return LabeledDataset(x, labels)


@dataclass(frozen=True)
class LabeledDataset:
    """``n x p`` features with labels in ``{1, 2}``."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels).astype(int).ravel()
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} rows but {y.shape[0]} labels")
        bad = np.flatnonzero((y != 1) & (y != 2))
        if bad.size:
            raise ValueError(f"label at row {bad[0]} is {y[bad[0]]}, expected 1 or 2")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n1(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n2(self) -> int:
        return int(np.sum(self.labels == 2))

    def rows(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx])

    def columns(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[:, idx], self.labels)


@dataclass(frozen=True)
class SampleMoments:
    xbar1: np.ndarray
    xbar2: np.ndarray
    pooled_cov: np.ndarray
    n: int
    centered: np.ndarray = field(repr=False, compare=False)

    @property
    def mu_hat_a(self) -> np.ndarray:
        return 0.5 * (self.xbar1 + self.xbar2)

    @property
    def mu_hat_d(self) -> np.ndarray:
        return 0.5 * (self.xbar1 - self.xbar2)

    @property
    def mean_diff(self) -> np.ndarray:
        return self.xbar1 - self.xbar2


def moments(data: LabeledDataset) -> SampleMoments:
    """Class means and the ``1/n`` pooled within-class covariance."""
    if data.n1 < 2 or data.n2 < 2:
        raise DegenerateClass(f"need at least 2 samples per class, got n1={data.n1}, n2={data.n2}")
    x, y = data.features, data.labels
    xbar1 = x[y == 1].mean(axis=0)
    xbar2 = x[y == 2].mean(axis=0)
    xc = x - np.where((y == 1)[:, None], xbar1, xbar2)
    cov = linalg.symmetrize(xc.T @ xc / data.n)
    return SampleMoments(xbar1, xbar2, cov, data.n, xc)


# ---------------------------------------------------------------------------
# Oracle quantities
# ---------------------------------------------------------------------------


def fisher_delta(pop: GaussianPopulation, subset: Optional[Sequence[int]] = None) -> float:
    """Signal strength ``mu_d' inv(sigma) mu_d``, optionally on a feature subset."""
    if subset is None:
        return linalg.quad_form(pop.sigma, pop.mu_d)
    idx = np.asarray(subset, dtype=int)
    if idx.size == 0:
        raise ValueError("subset must be nonempty")
    return linalg.quad_form(pop.sigma[np.ix_(idx, idx)], pop.mu_d[idx])


def theoretical_rate(delta: float) -> float:
    """Optimal error ``1 - Phi(sqrt(delta))``."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return float(norm.sf(np.sqrt(delta)))


def oracle_classify(pop: GaussianPopulation, x: np.ndarray) -> np.ndarray | int:
    """Fisher's rule with known parameters; accepts one point or a row matrix."""
    w = linalg.spd_solve(pop.sigma, pop.mu_d)
    x = np.asarray(x, dtype=float)
    score = (x - pop.mu_a) @ w
    return _to_labels(score > 0.0)


def _to_labels(is_one):
    out = np.where(is_one, 1, 2)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Fitted linear rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedLda:
    """Rule: class 1 iff ``(x[feature_set] - mu_hat_a) @ direction > offset``."""

    direction: np.ndarray
    mu_hat_a: np.ndarray
    feature_set: np.ndarray
    p: int
    offset: float = 0.0

    @property
    def weights(self):
        return self.direction

    @property
    def center(self):
        return self.mu_hat_a

    @property
    def threshold(self):
        return self.offset


@dataclass(frozen=True)
class TldaModel:
    """Fitted two-stage rule.

    ``beta_star`` solves ``S[A, A] beta = (xbar1 - xbar2)[A]`` on the selected
    set ``A``, so ``log_prior_offset = log(pi2 / pi1)`` is the Gaussian Bayes
    threshold for unequal priors. ``beta_hat`` keeps the full l1 solution.
    """

    selected: np.ndarray
    beta_star: np.ndarray
    mu_hat_a_sel: np.ndarray
    lambda_used: float
    p0_used: int
    p: int
    log_prior_offset: float = 0.0
    beta_hat: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    degenerate_selection: bool = False
    solver_status: str = Status.OPTIMAL.value

    @property
    def feature_set(self):
        return self.selected

    @property
    def weights(self):
        return self.beta_star

    @property
    def center(self):
        return self.mu_hat_a_sel

    @property
    def threshold(self):
        return self.log_prior_offset


def decision_scores(model, x: np.ndarray) -> np.ndarray:
    """Score minus threshold for a linear rule (``FittedLda`` or ``TldaModel``)."""
    x = np.asarray(x, dtype=float)
    return (x[..., model.feature_set] - model.center) @ model.weights - model.threshold


def classify(model, x: np.ndarray):
    return _to_labels(decision_scores(model, x) > 0.0)


def classify_lda(model: FittedLda, x: np.ndarray):
    return classify(model, x)


def classify_tlda(model: TldaModel, x: np.ndarray):
    return classify(model, x)


def error_rate(model, data: LabeledDataset) -> float:
    pred = np.atleast_1d(classify(model, data.features))
    return float(np.mean(pred != data.labels))


def conditional_rate(model, pop: GaussianPopulation) -> float:
    """Exact error of a fitted linear rule under the true Gaussian model.

    Equal class weights; the threshold of the rule is honoured.
    """
    idx = np.asarray(model.feature_set, dtype=int)
    w = np.asarray(model.weights, dtype=float)
    sig = pop.sigma[np.ix_(idx, idx)]
    var = float(w @ sig @ w)
    if not var > 0.0:
        raise ZeroDirection("direction has zero variance under the population")
    sd = np.sqrt(var)
    tau = float(model.threshold)
    c = np.asarray(model.center, dtype=float)
    m1 = float((c - pop.mu1[idx]) @ w)
    m2 = float((c - pop.mu2[idx]) @ w)
    return float(0.5 * norm.cdf((tau + m1) / sd) + 0.5 * norm.cdf(-(tau + m2) / sd))


def _as_index(feature_set, p: int) -> np.ndarray:
    if feature_set is None:
        return np.arange(p)
    idx = np.unique(np.asarray(feature_set, dtype=int))
    if idx.size == 0 or idx[0] < 0 or idx[-1] >= p:
        raise ValueError("feature_set must be nonempty and within range")
    return idx


def fit_lda(
    data: LabeledDataset,
    feature_set: Optional[Sequence[int]] = None,
    ridge: bool = False,
    offset: float = 0.0,
    m: Optional[SampleMoments] = None,
) -> FittedLda:
    """Plug-in LDA, direction ``inv(S[A, A]) mu_hat_d[A]``.

    Raises ``NotPositiveDefinite`` when the restricted pooled covariance is
    singular and ``ridge`` is off.
    """
    m = moments(data) if m is None else m
    idx = _as_index(feature_set, data.p)
    S = m.pooled_cov[np.ix_(idx, idx)]
    direction = linalg.spd_solve(S, m.mu_hat_d[idx], ridge=ridge)
    return FittedLda(direction, m.mu_hat_a[idx], idx, data.p, offset)


def fit_naive_bayes(data: LabeledDataset, m: Optional[SampleMoments] = None) -> FittedLda:
    """LDA with the pooled covariance replaced by its diagonal."""
    m = moments(data) if m is None else m
    var = np.diag(m.pooled_cov)
    if np.any(var <= 0.0):
        j = int(np.flatnonzero(var <= 0.0)[0])
        raise ZeroVariance(f"feature {j} has zero pooled variance")
    return FittedLda(m.mu_hat_d / var, m.mu_hat_a, np.arange(data.p), data.p)


def t_scores(data: LabeledDataset) -> np.ndarray:
    """Two-sample t statistics with pooled variance, one per feature.

    A feature with zero within-class variance scores ``+-inf`` when its
    class means differ and ``0`` when they agree.
    """
    if data.n1 < 1 or data.n2 < 1 or data.n < 3:
        raise DegenerateClass("t statistics need both classes and n >= 3")
    x, y = data.features, data.labels
    n1, n2 = data.n1, data.n2
    diff = x[y == 1].mean(axis=0) - x[y == 2].mean(axis=0)
    ss = ((x[y == 1] - x[y == 1].mean(axis=0)) ** 2).sum(axis=0) + (
        (x[y == 2] - x[y == 2].mean(axis=0)) ** 2
    ).sum(axis=0)
    se = np.sqrt(ss / (n1 + n2 - 2) * (1.0 / n1 + 1.0 / n2))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = diff / se
    zero = se == 0.0
    t[zero] = np.where(diff[zero] == 0.0, 0.0, np.copysign(np.inf, diff[zero]))
    return t


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest ``|scores|``, ties to the lower index, returned sorted."""
    a = np.abs(np.asarray(scores, dtype=float))
    order = np.argsort(-a, kind="stable")
    return np.sort(order[:k])


def fit_tscore_lda(data: LabeledDataset, p0: int, ridge: bool = True, m=None) -> FittedLda:
    """Keep the ``p0`` features with the largest ``|t|`` and fit LDA on them."""
    sel = top_k(t_scores(data), p0)
    return fit_lda(data, sel, ridge=ridge, m=m)


# ---------------------------------------------------------------------------
# Two-stage LDA
# ---------------------------------------------------------------------------


def l1_problem(m: SampleMoments, lam: float) -> L1Problem:
    """The selection program built from sample moments.

    A low-rank factor of ``S_n`` is attached when ``n < p``.
    """
    p = m.xbar1.size
    factor = None
    if m.n < p:
        factor = low_rank_factor(m.centered, 1.0 / m.n)
    return L1Problem(m.pooled_cov, m.mean_diff, lam, gram_factor=factor)


def tlda_from_beta(
    data: LabeledDataset,
    m: SampleMoments,
    beta_hat: np.ndarray,
    lam: float,
    p0: int,
    ridge: bool = True,
    log_prior_offset: float = 0.0,
    solver_status: str = Status.OPTIMAL.value,
    tscores: Optional[np.ndarray] = None,
) -> TldaModel:
    """Selection and refit steps of TLDA given an l1 solution."""
    p = data.p
    if not 1 <= p0 <= p:
        raise ValueError(f"p0 must lie in [1, {p}], got {p0}")
    degenerate = not np.any(beta_hat != 0.0)
    if degenerate:
        ts = t_scores(data) if tscores is None else tscores
        sel = top_k(ts, p0)
    else:
        sel = top_k(beta_hat, p0)
    S = m.pooled_cov[np.ix_(sel, sel)]
    beta_star = linalg.spd_solve(S, m.mean_diff[sel], ridge=ridge)
    if not np.all(np.isfinite(beta_star)):
        raise NotPositiveDefinite("restricted covariance gave a non-finite direction")
    return TldaModel(
        selected=sel,
        beta_star=beta_star,
        mu_hat_a_sel=m.mu_hat_a[sel],
        lambda_used=float(lam),
        p0_used=int(p0),
        p=p,
        log_prior_offset=float(log_prior_offset),
        beta_hat=np.asarray(beta_hat, dtype=float),
        degenerate_selection=degenerate,
        solver_status=solver_status,
    )


def solve_selection(m: SampleMoments, lam: float) -> L1Solution:
    sol = solve(l1_problem(m, lam))
    if sol.status is Status.INFEASIBLE:
        raise InfeasibleProblem(
            f"no beta satisfies |S b - d|_inf <= {lam:.6g}; the pooled covariance is singular"
        )
    return sol


def solve_selection_feasible(m: SampleMoments, lam: float, steps: int = 10):
    """Like ``solve_selection`` but raises lambda until the program is feasible.

    Lambda moves geometrically from ``lam`` toward ``|xbar1 - xbar2|_inf``
    (always feasible, with solution zero) in ``steps`` steps. Returns the
    solution and the lambda actually used.
    """
    dinf = float(np.max(np.abs(m.mean_diff)))
    try:
        return solve_selection(m, lam), lam
    except InfeasibleProblem:
        if lam <= 0 or lam >= dinf:
            raise
    for k in range(1, steps + 1):
        trial = lam * (dinf / lam) ** (k / steps)
        try:
            return solve_selection(m, trial), trial
        except InfeasibleProblem:
            continue
    raise InfeasibleProblem("no feasible lambda found")


def fit_tlda(
    data: LabeledDataset,
    lam: float,
    p0: int,
    ridge: bool = True,
    log_prior_offset: float = 0.0,
) -> TldaModel:
    """Fit TLDA at a fixed ``(lam, p0)``.

    ``A`` holds the ``p0`` largest ``|beta_hat|`` from the l1 program, with
    ties going to the lower index. If ``beta_hat`` is identically zero
    (``lam >= |xbar1 - xbar2|_inf``) the selection falls back to the
    largest ``|t|`` and the model is flagged ``degenerate_selection``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    m = moments(data)
    sol = solve_selection(m, lam)
    return tlda_from_beta(
        data, m, sol.beta, lam, p0, ridge=ridge,
        log_prior_offset=log_prior_offset, solver_status=sol.status.value,
    )


def prior_offset(pi1: float) -> float:
    """``log(pi2 / pi1)`` for a class-1 prior ``pi1``."""
    if not 0.0 < pi1 < 1.0:
        raise ValueError("prior must lie strictly between 0 and 1")
    return float(np.log((1.0 - pi1) / pi1))
