"""Simulation models, replication experiments and report assembly.

Four Gaussian two-class models, all with ``mu2 = 0``:

1. ``sigma_ij = 0.8 ** |i - j|`` and ``mu1 = sigma @ beta0``, where
   ``beta0`` has 5 nonzeros ``+0.5, -0.75, +1.0, -1.25, +1.5`` at 1-based
   positions ``p/10, 3p/10, ..., 9p/10``.
2. Equicorrelation ``0.5`` with the same ``beta0``.
3. The model-1 covariance with ``mu1 = (1, 1, 1, 1, 1, 0, ..., 0)``.
4. The model-2 covariance with a dense ``beta0`` whose tail entries are
   ``0.551 / (p - 5)``.

Replication ``i`` draws its training set from seed ``base_seed + i``; in
holdout mode its test set comes from ``(base_seed + i) + 2**32``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .classifiers import (
    GaussianPopulation,
    LabeledDataset,
    conditional_rate,
    error_rate,
    fisher_delta,
    fit_lda,
    fit_naive_bayes,
    moments,
    oracle_classify,
    theoretical_rate,
)
from .errors import InvalidSpec, SparsaError
from .preprocess import ScalingRecord, screen_by_t, standardize_expression  # noqa: F401
from .tuning import CvConfig, fit_tlda_cv, fit_tscore_cv

METHODS = ("tlda", "nb", "lda_full", "oracle", "tscore_rule")
MAX_FAILURE_FRACTION = 0.05
TEST_SEED_OFFSET = 1 << 32
DEFAULT_HOLDOUT = 10_000


class ExperimentFailed(SparsaError):
    """More than 5% of replications failed for some method."""


@dataclass(frozen=True)
class ModelSpec:
    model_id: int
    p: int = 100
    n1: int = 100
    n2: int = 100

    def __post_init__(self):
        if self.model_id not in (1, 2, 3, 4):
            raise InvalidSpec(f"model must be one of 1, 2, 3, 4; got {self.model_id}")
        if self.model_id in (1, 2) and (self.p < 10 or self.p % 10):
            raise InvalidSpec(f"models 1 and 2 need p >= 10 divisible by 10; got {self.p}")
        if self.model_id == 3 and self.p < 5:
            raise InvalidSpec("model 3 needs p >= 5")
        if self.model_id == 4 and self.p < 6:
            raise InvalidSpec("model 4 needs p >= 6")
        if self.n1 < 2 or self.n2 < 2:
            raise InvalidSpec("each class needs at least 2 samples")


def sparse_beta0(p: int) -> np.ndarray:
    beta = np.zeros(p)
    for k in range(1, 6):
        beta[(2 * k - 1) * p // 10 - 1] = (-1) ** (k + 1) * (k + 1) / 4.0
    return beta


def true_support(pop: GaussianPopulation, rtol: float = 1e-9) -> np.ndarray:
    """Positions where ``beta0`` is nonzero, ignoring round-off."""
    b = np.abs(pop.beta0)
    return np.flatnonzero(b > rtol * b.max())


def build_population(spec: ModelSpec) -> GaussianPopulation:
    p = spec.p
    mid = spec.model_id
    sigma = linalg.ar1_cov(p, 0.8) if mid in (1, 3) else linalg.equicorr_cov(p, 0.5)
    if mid in (1, 2):
        mu1 = sigma @ sparse_beta0(p)
    elif mid == 3:
        mu1 = np.r_[np.ones(5), np.zeros(p - 5)]
    else:
        beta = 0.551 * np.r_[3.0, 1.7, -2.2, -2.1, 2.55, np.full(p - 5, 1.0 / (p - 5))]
        mu1 = sigma @ beta
    return GaussianPopulation(mu1, np.zeros(p), sigma)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSummary:
    mean_error: float  # percent
    sd_error: float
    mean_features: float
    sd_features: float
    failures: int
    completed: int


@dataclass
class ExperimentReport:
    spec: ModelSpec
    methods: dict
    replications: int
    seeds: list
    test_mode: str
    runtime: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """Deterministic content; runtime lives in ``metadata()``."""
        return {
            "model": {"model_id": self.spec.model_id, "p": self.spec.p,
                      "n1": self.spec.n1, "n2": self.spec.n2},
            "replications": self.replications,
            "seeds": list(self.seeds),
            "test_mode": self.test_mode,
            "methods": {
                name: {
                    "mean_error_pct": round(s.mean_error, 2),
                    "sd_error_pct": round(s.sd_error, 2),
                    "mean_features": round(s.mean_features, 2),
                    "sd_features": round(s.sd_features, 2),
                    "failures": s.failures,
                    "completed": s.completed,
                }
                for name, s in self.methods.items()
            },
        }

    def metadata(self) -> dict:
        return {"runtime_seconds": round(self.runtime, 3),
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        s = self.spec
        head = (f"Model {s.model_id}, p={s.p}, n1={s.n1}, n2={s.n2}, "
                f"{self.replications} replications, {self.test_mode} evaluation")
        rows = [("method", "error % (sd)", "features (sd)", "failed")]
        for name, m in self.methods.items():
            rows.append((name, f"{m.mean_error:.2f} ({m.sd_error:.2f})",
                         f"{m.mean_features:.2f} ({m.sd_features:.2f})", str(m.failures)))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = [head]
        for r in rows:
            lines.append("  ".join(v.ljust(w) if c == 0 else v.rjust(w)
                                   for c, (v, w) in enumerate(zip(r, widths))))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FeatureTrace:
    """Replication averages of ``beta_hat`` and ``xbar1 - xbar2``.

    ``tlda_signal`` is all-nan when TLDA was not run.
    """

    tlda_signal: np.ndarray
    t_signal: np.ndarray

    def top(self, which: str, k: int) -> np.ndarray:
        """0-based positions of the ``k`` largest absolute averages."""
        v = np.abs(getattr(self, which))
        return np.sort(np.argsort(-v, kind="stable")[:k])

    def to_csv(self) -> str:
        """Columns ``index`` (1-based feature position), ``tlda_signal``, ``t_signal``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "tlda_signal", "t_signal"])
        for j, (a, b) in enumerate(zip(self.tlda_signal, self.t_signal)):
            w.writerow([j + 1, repr(float(a)), repr(float(b))])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


def _parse_test_mode(test_mode) -> tuple[str, int]:
    if test_mode in (None, "analytic"):
        return "analytic", 0
    if isinstance(test_mode, str) and test_mode.startswith("holdout"):
        inner = test_mode[len("holdout"):].strip("()= ")
        m = int(inner) if inner else DEFAULT_HOLDOUT
    elif isinstance(test_mode, tuple) and test_mode[0] == "holdout":
        m = int(test_mode[1])
    else:
        raise ValueError(f"test_mode must be 'analytic' or 'holdout(m)', got {test_mode!r}")
    if m < 2:
        raise ValueError("holdout size must be >= 2")
    return "holdout", m


def _one_replication(args):
    spec, methods, seed, mode, m_test, cv_kwargs = args
    pop = build_population(spec)
    data = pop.sample(spec.n1, spec.n2, seed)
    test = None
    if mode == "holdout":
        test = pop.sample(m_test // 2, m_test - m_test // 2, seed + TEST_SEED_OFFSET)
    mom = moments(data)
    out = {"mean_diff": mom.mean_diff, "beta_hat": None, "results": {}}
    cfg = CvConfig(seed=seed, **cv_kwargs)
    for name in methods:
        try:
            if name == "oracle":
                if mode == "analytic":
                    err = theoretical_rate(fisher_delta(pop))
                else:
                    err = float(np.mean(oracle_classify(pop, test.features) != test.labels))
                nfeat = int(true_support(pop).size)
                out["results"][name] = (err, nfeat)
                continue
            if name == "tlda":
                model, _ = fit_tlda_cv(data, cfg)
                out["beta_hat"] = model.beta_hat
            elif name == "tscore_rule":
                model, _ = fit_tscore_cv(data, cfg)
            elif name == "nb":
                model = fit_naive_bayes(data, m=mom)
            else:
                model = fit_lda(data, m=mom)
            if mode == "analytic":
                err = conditional_rate(model, pop)
            else:
                err = error_rate(model, test)
            out["results"][name] = (err, len(model.feature_set))
        except (SparsaError, ValueError, np.linalg.LinAlgError) as exc:
            out["results"][name] = (type(exc).__name__, str(exc))
    return out


def worker_count(requested: Optional[int] = None) -> int:
    """Requested workers capped by ``SPARSA_THREADS`` (default 1)."""
    cap = os.environ.get("SPARSA_THREADS")
    cap = int(cap) if cap and cap.isdigit() and int(cap) > 0 else None
    n = requested if requested is not None else (cap or 1)
    if cap is not None:
        n = min(n, cap)
    return max(1, int(n))


def run_experiment(
    spec: ModelSpec,
    methods: Sequence[str],
    reps: int,
    seed: int,
    test_mode="analytic",
    cv: Optional[dict] = None,
    workers: Optional[int] = None,
) -> tuple[ExperimentReport, FeatureTrace]:
    """Replicate train/tune/evaluate for each method.

    ``cv`` holds extra ``CvConfig`` fields (the seed is always the
    replication seed). ``test_mode`` is ``"analytic"`` (exact conditional
    error under the true model) or ``"holdout(m)"``.
    """
    methods = list(dict.fromkeys(methods))
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ValueError(f"methods must be a nonempty subset of {METHODS}; got {bad or methods}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    mode, m_test = _parse_test_mode(test_mode)
    cv_kwargs = dict(cv or {})
    cv_kwargs.pop("seed", None)
    seeds = [int(seed) + i for i in range(reps)]
    jobs = [(spec, methods, s, mode, m_test, cv_kwargs) for s in seeds]
    t0 = time.perf_counter()
    n_workers = worker_count(workers)
    if n_workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            outs = list(ex.map(_one_replication, jobs))
    else:
        outs = [_one_replication(j) for j in jobs]
    runtime = time.perf_counter() - t0

    summaries = {}
    for name in methods:
        ok = [o["results"][name] for o in outs if not isinstance(o["results"][name][0], str)]
        failed = reps - len(ok)
        if failed > MAX_FAILURE_FRACTION * reps:
            first = next(o["results"][name] for o in outs if isinstance(o["results"][name][0], str))
            raise ExperimentFailed(
                f"{name}: {failed} of {reps} replications failed (first: {first[0]}: {first[1]})"
            )
        errs = 100.0 * np.array([e for e, _ in ok])
        feats = np.array([f for _, f in ok], dtype=float)
        ddof = 1 if len(ok) > 1 else 0
        summaries[name] = MethodSummary(
            mean_error=float(np.mean(errs)) if ok else float("nan"),
            sd_error=float(np.std(errs, ddof=ddof)) if ok else float("nan"),
            mean_features=float(np.mean(feats)) if ok else float("nan"),
            sd_features=float(np.std(feats, ddof=ddof)) if ok else float("nan"),
            failures=failed,
            completed=len(ok),
        )

    t_signal = np.mean([o["mean_diff"] for o in outs], axis=0)
    betas = [o["beta_hat"] for o in outs if o["beta_hat"] is not None]
    tlda_signal = np.mean(betas, axis=0) if betas else np.full(spec.p, np.nan)
    report = ExperimentReport(spec, summaries, reps, seeds, _mode_label(mode, m_test), runtime)
    return report, FeatureTrace(tlda_signal, t_signal)


def _mode_label(mode: str, m: int) -> str:
    return "analytic" if mode == "analytic" else f"holdout({m})"


# ---------------------------------------------------------------------------
# Support recovery
# ---------------------------------------------------------------------------


def support_recovery(
    spec: ModelSpec, n_values: Sequence[int], reps: int, seed: int, cv: Optional[dict] = None
) -> dict:
    """Fraction of replications whose selected set equals ``support(beta0)``.

    ``p0`` is held at the true support size and lambda is chosen by CV; for
    each per-class size ``n`` the replication seeds are ``seed + i``.
    """
    pop = build_population(spec)
    support = true_support(pop)
    kwargs = dict(cv or {})
    kwargs.pop("seed", None)
    kwargs["p0_grid"] = (support.size,)
    out = {}
    for n in n_values:
        hits = 0
        for i in range(reps):
            data = pop.sample(n, n, seed + i)
            model, _ = fit_tlda_cv(data, CvConfig(seed=seed + i, **kwargs))
            hits += bool(np.array_equal(model.selected, support))
        out[int(n)] = hits / reps
    return out
