"""End-to-end TLDA on user data: preprocessing, tuning, fit and persistence.

A fitted pipeline maps raw feature rows through an optional scaling
record and an optional screen before applying the TLDA rule, so models
can be applied to data in its original column layout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .classifiers import (
    LabeledDataset,
    TldaModel,
    classify,
    fit_tlda,
    moments,
    prior_offset,
    solve_selection_feasible,
    tlda_from_beta,
)
from .errors import DataFormatError
from .preprocess import ScalingRecord, screen_by_t, standardize_expression
from .tuning import DEFAULT_LAMBDA_RATIOS, CvConfig, fit_tlda_cv

SCHEMA = "sparsa.model/1"


@dataclass(frozen=True)
class Recipe:
    """How to train: preprocessing flags plus CV settings.

    ``lam`` and ``p0`` skip CV when both are given.
    """

    cv: CvConfig = field(default_factory=CvConfig)
    standardize: bool = False
    standardize_order: str = "row_first"
    screen: Optional[int] = None
    screen_threshold: Optional[float] = None
    prior: Optional[float] = None
    lam: Optional[float] = None
    p0: Optional[int] = None

    def __call__(self, data: LabeledDataset) -> "FittedPipeline":
        return fit_pipeline(data, self)


@dataclass(frozen=True)
class FittedPipeline:
    model: TldaModel
    p_input: int
    scaling: Optional[ScalingRecord] = None
    screen_kept: Optional[np.ndarray] = None
    tuning: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return int(self.model.selected.size)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.p_input:
            raise DataFormatError(f"expected {self.p_input} features, got {x.shape[1]}")
        if self.scaling is not None:
            x = self.scaling.apply(x)
        if self.screen_kept is not None:
            x = x[:, self.screen_kept]
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(classify(self.model, self.transform(x)))

    @property
    def selected_original(self) -> np.ndarray:
        """Selected features as 0-based columns of the raw input."""
        idx = self.model.selected
        if self.screen_kept is not None:
            idx = self.screen_kept[idx]
        if self.scaling is not None:
            idx = self.scaling.kept[idx]
        return np.asarray(idx, dtype=int)

    def to_dict(self) -> dict:
        m = self.model
        return {
            "schema": SCHEMA,
            "p_input": self.p_input,
            "selected_indices": self.selected_original.tolist(),
            "selected_positions": (self.selected_original + 1).tolist(),
            "model": {
                "selected": m.selected.tolist(),
                "beta_star": m.beta_star.tolist(),
                "mu_hat_a": m.mu_hat_a_sel.tolist(),
                "lambda": m.lambda_used,
                "p0": m.p0_used,
                "p": m.p,
                "log_prior_offset": m.log_prior_offset,
                "degenerate_selection": m.degenerate_selection,
                "solver_status": m.solver_status,
            },
            "scaling": None if self.scaling is None else self.scaling.to_dict(),
            "screen": None if self.screen_kept is None else {"kept": self.screen_kept.tolist()},
            "tuning": self.tuning,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FittedPipeline":
        if d.get("schema") != SCHEMA:
            raise DataFormatError(f"unsupported model schema {d.get('schema')!r}, expected {SCHEMA}")
        try:
            mm = d["model"]
            model = TldaModel(
                selected=np.asarray(mm["selected"], dtype=int),
                beta_star=np.asarray(mm["beta_star"], dtype=float),
                mu_hat_a_sel=np.asarray(mm["mu_hat_a"], dtype=float),
                lambda_used=float(mm["lambda"]),
                p0_used=int(mm["p0"]),
                p=int(mm["p"]),
                log_prior_offset=float(mm["log_prior_offset"]),
                degenerate_selection=bool(mm["degenerate_selection"]),
                solver_status=str(mm["solver_status"]),
            )
            scaling = None if d["scaling"] is None else ScalingRecord.from_dict(d["scaling"])
            screen = None if d["screen"] is None else np.asarray(d["screen"]["kept"], dtype=int)
            return cls(model, int(d["p_input"]), scaling, screen, d.get("tuning", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed model file: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "FittedPipeline":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"model file is not JSON: {exc}") from None
        return cls.from_dict(d)


def usable_folds(n1: int, n2: int, folds: int) -> int:
    """Largest ``k <= folds`` leaving every fold-training set 2+ per class; 0 if none."""
    for k in range(folds, 1, -1):
        if all(c >= k and c - math.ceil(c / k) >= 2 for c in (n1, n2)):
            return k
    return 0


def fit_pipeline(data: LabeledDataset, recipe: Recipe) -> FittedPipeline:
    """Standardize, screen, tune and fit, in that order.

    When the training set is too small for any CV split the rule is fitted
    untuned at ``p0 = 1`` with lambda at the middle of the default ratio
    grid, ``|xbar1 - xbar2|_inf * 50**(-10/19)``.
    """
    p_input = data.p
    scaling = None
    if recipe.standardize:
        data, scaling = standardize_expression(data, order=recipe.standardize_order)
    kept = None
    if recipe.screen is not None or recipe.screen_threshold is not None:
        keep = None if recipe.screen is None else min(recipe.screen, data.p)
        data, kept = screen_by_t(data, keep=keep, mean_diff_threshold=recipe.screen_threshold)
        if data.p == 0:
            raise DataFormatError("screening kept no features")
    offset = 0.0 if recipe.prior is None else prior_offset(recipe.prior)
    tuning: dict
    if recipe.lam is not None and recipe.p0 is not None:
        model = fit_tlda(data, recipe.lam, recipe.p0, ridge=recipe.cv.ridge, log_prior_offset=offset)
        tuning = {"mode": "fixed"}
    else:
        k = usable_folds(data.n1, data.n2, recipe.cv.folds)
        if k >= 2:
            cfg = replace(recipe.cv, folds=k)
            model, cv = fit_tlda_cv(data, cfg, log_prior_offset=offset)
            tuning = {
                "mode": "cv",
                "folds": k,
                "lambda_hat": cv.lambda_hat,
                "lambda_adjusted": cv.lambda_adjusted,
                "p0_hat": cv.p0_hat,
                "cv_error": cv.best_error,
            }
        else:
            m = moments(data)
            lam = float(np.max(np.abs(m.mean_diff))) * DEFAULT_LAMBDA_RATIOS[10]
            sol, lam = solve_selection_feasible(m, lam)
            model = tlda_from_beta(
                data, m, sol.beta, lam, 1, ridge=recipe.cv.ridge,
                log_prior_offset=offset, solver_status=sol.status.value,
            )
            tuning = {"mode": "untuned"}
    return FittedPipeline(model, p_input, scaling, kept, tuning)


# ---------------------------------------------------------------------------
# CSV datasets
# ---------------------------------------------------------------------------


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def read_table(path: str, transpose: bool = False) -> tuple[list, int]:
    """Rows of cells and the 1-based file line of the first data row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if transpose and rows:
        width = len(rows[0])
        bad = [i for i, r in enumerate(rows) if len(r) != width]
        if bad:
            raise DataFormatError(f"{path}: line {bad[0] + 1} has {len(rows[bad[0]])} fields, expected {width}")
        # optional leading feature-id column, optional sample-name row, then the label row
        if any(not _is_number(r[0].strip()) for r in rows[2:]):
            rows = [r[1:] for r in rows]
        if rows and rows[0] and not all(_is_number(c.strip()) for c in rows[0]):
            rows = rows[1:]
        rows = [list(col) for col in zip(*rows)]
        return _nonempty(rows, path), 1
    first = 1
    if rows and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
        first = 2
    return _nonempty(rows, path), first


def _nonempty(rows, path):
    if not rows or not rows[0]:
        raise DataFormatError(f"{path}: no data rows")
    return rows


def _parse_label(cell: str, where: str) -> int:
    try:
        v = float(cell)
    except ValueError:
        raise DataFormatError(f"{where}: label {cell!r} is not 1 or 2") from None
    if v not in (1.0, 2.0):
        raise DataFormatError(f"{where}: label {cell!r} is not 1 or 2")
    return int(v)


def read_dataset(path: str, transpose: bool = False, expect_p: Optional[int] = None):
    """Parse a CSV with the label in the first column.

    Returns ``(features, labels)``. When ``expect_p`` is given and rows have
    exactly ``expect_p`` fields, the file is read as unlabeled and
    ``labels`` is ``None``. A non-numeric first cell marks a header row.

    With ``transpose`` the file holds one sample per column: an optional
    sample-name row, then the label row, then one row per feature, with an
    optional leading feature-id column. Errors then name sample columns.
    """
    rows, first = read_table(path, transpose)
    width = len(rows[0])
    unit = "column" if transpose else "line"
    labeled = not (expect_p is not None and width == expect_p)
    if labeled and width < 2:
        raise DataFormatError(f"{path}: need a label and at least one feature")
    feats = np.empty((len(rows), width - labeled))
    labels = np.empty(len(rows), dtype=int) if labeled else None
    for i, r in enumerate(rows):
        where = f"{path}: {unit} {i + first}"
        if len(r) != width:
            raise DataFormatError(f"{where}: {len(r)} fields, expected {width}")
        if labeled:
            labels[i] = _parse_label(r[0].strip(), where)
        try:
            feats[i] = [float(c) for c in r[labeled:]]
        except ValueError as exc:
            raise DataFormatError(f"{where}: {exc}") from None
    if not np.all(np.isfinite(feats)):
        i = int(np.flatnonzero(~np.all(np.isfinite(feats), axis=1))[0])
        raise DataFormatError(f"{path}: {unit} {i + first}: non-finite value")
    if expect_p is not None and feats.shape[1] != expect_p:
        raise DataFormatError(f"{path}: {feats.shape[1]} features, model expects {expect_p}")
    return feats, labels
