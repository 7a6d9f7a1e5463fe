"""Expression-data preprocessing: sample standardization and t-screening.

Works on per-feature statistics only, so it never forms a ``p x p`` matrix
and is safe on the full gene set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classifiers import LabeledDataset, t_scores, top_k

ORDERS = ("row_first", "scale_first")


def pooled_variance(data: LabeledDataset) -> np.ndarray:
    """Diagonal of the ``1/n`` pooled within-class covariance."""
    x, y = data.features, data.labels
    ss = np.zeros(data.p)
    for k in (1, 2):
        xk = x[y == k]
        if xk.shape[0]:
            ss += ((xk - xk.mean(axis=0)) ** 2).sum(axis=0)
    return ss / data.n


@dataclass(frozen=True)
class ScalingRecord:
    """How training samples were standardized; reapplied to new samples.

    ``kept`` indexes the input columns that survive (zero-variance columns
    are dropped) and ``scale`` holds their pooled standard deviations.
    """

    order: str
    kept: np.ndarray
    scale: np.ndarray
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.order == "row_first":
            x = x - x.mean(axis=1, keepdims=True)
            return x[:, self.kept] / self.scale
        x = x[:, self.kept] / self.scale
        return x - x.mean(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "kept": self.kept.tolist(),
            "scale": self.scale.tolist(),
            "dropped": self.dropped.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingRecord":
        return cls(
            order=d["order"],
            kept=np.asarray(d["kept"], dtype=int),
            scale=np.asarray(d["scale"], dtype=float),
            dropped=np.asarray(d.get("dropped", []), dtype=int),
        )


def standardize_expression(
    data: LabeledDataset, order: str = "row_first", var_rtol: float = 1e-12
) -> tuple[LabeledDataset, ScalingRecord]:
    """Center every sample across features and give ``S_n`` a unit diagonal.

    With ``order="row_first"`` samples are centered first and features
    scaled second, so after scaling the row means are no longer exactly
    zero; ``"scale_first"`` does the reverse. Features whose pooled
    variance is at most ``var_rtol * max variance`` are dropped.
    """
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    x = data.features
    if order == "row_first":
        x = x - x.mean(axis=1, keepdims=True)
    var = pooled_variance(LabeledDataset(x, data.labels))
    vmax = float(np.max(var, initial=0.0))
    ok = var > var_rtol * vmax if vmax > 0 else np.zeros(data.p, dtype=bool)
    kept = np.flatnonzero(ok)
    record = ScalingRecord(order, kept, np.sqrt(var[kept]), np.flatnonzero(~ok))
    return LabeledDataset(record.apply(data.features), data.labels), record


@dataclass(frozen=True)
class ScreenRecord:
    """Columns kept by screening, ascending, in the coordinates of its input."""

    kept: np.ndarray

    def to_dict(self) -> dict:
        return {"kept": self.kept.tolist()}


def screen_by_t(
    data: LabeledDataset,
    keep: Optional[int] = None,
    mean_diff_threshold: Optional[float] = None,
) -> tuple[LabeledDataset, np.ndarray]:
    """Keep the features with the largest ``|t|``.

    Either ``keep`` (a count) or ``mean_diff_threshold`` (keep features with
    ``|xbar1 - xbar2| > threshold``) must be given; both may be combined, in
    which case the threshold is applied first. Kept indices are returned in
    ascending order so positions stay traceable.
    """
    if keep is None and mean_diff_threshold is None:
        raise ValueError("give keep or mean_diff_threshold")
    candidates = np.arange(data.p)
    if mean_diff_threshold is not None:
        y = data.labels
        diff = data.features[y == 1].mean(axis=0) - data.features[y == 2].mean(axis=0)
        candidates = np.flatnonzero(np.abs(diff) > mean_diff_threshold)
    if keep is not None:
        if not 1 <= keep <= data.p:
            raise ValueError(f"keep must lie in [1, {data.p}]")
        if keep < candidates.size:
            t = t_scores(data.columns(candidates))
            candidates = candidates[top_k(t, keep)]
    kept = np.sort(candidates)
    return data.columns(kept), kept
