"""
Weighted clusterwise regression (WCR).

Each typical pattern of a season gets its own least-squares line from monthly energy to CMPC;
an estimate for a customer combines the lines with the customer's class probabilities:

    F_hat = sum_z P(C = z | X) * (W_z * E + b_z)
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    ShapeMismatchError,
    UndefinedMetricError,
    ValidationError,
)
from .utils import decode_float

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
ESTIMATE_COLUMNS = ["customer_id", "year", "month", "cmpc_actual", "cmpc_estimated", "clamped"]


@dataclass
class ClusterRegression:
    cluster: int
    slope: float
    intercept: float
    n: int
    residual_variance: float = 0.0
    mean_residual: float = 0.0
    heteroskedasticity: float = float("nan")
    fallback: bool = False

    def predict(self, E: np.ndarray) -> np.ndarray:
        return self.slope * np.asarray(E, dtype=float) + self.intercept


@dataclass
class WcrModel:
    seasons: Dict[str, List[ClusterRegression]] = field(default_factory=dict)

    def estimate(self, season: str, probs: np.ndarray, E: np.ndarray) -> np.ndarray:
        return estimate(self.seasons[season], probs, E)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": MODEL_VERSION,
            "seasons": {s: [asdict(r) for r in regs] for s, regs in self.seasons.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "WcrModel":
        if data.get("version") != MODEL_VERSION:
            raise ValidationError(f"unsupported wcr_model.json version {data.get('version')}")
        seasons = {}
        for season, regs in data["seasons"].items():
            seasons[season] = [
                ClusterRegression(
                    cluster=int(r["cluster"]),
                    slope=float(r["slope"]),
                    intercept=float(r["intercept"]),
                    n=int(r["n"]),
                    residual_variance=decode_float(r["residual_variance"]),
                    mean_residual=decode_float(r["mean_residual"]),
                    heteroskedasticity=decode_float(r["heteroskedasticity"]),
                    fallback=bool(r["fallback"]),
                )
                for r in regs
            ]
        return cls(seasons)


def _heteroskedasticity(E: np.ndarray, residuals: np.ndarray) -> float:
    """Residual variance above the median energy over the variance at or below it."""
    median = np.median(E)
    above, below = residuals[E > median], residuals[E <= median]
    if above.size < 2 or below.size < 2:
        return float("nan")
    lower = np.var(below, ddof=1)
    return float(np.var(above, ddof=1) / lower) if lower > 0 else float("nan")


def fit_cluster_ols(E: Sequence[float], F: Sequence[float], cluster: int = 0) -> ClusterRegression:
    """Closed-form least-squares line F = W * E + b."""
    E = np.asarray(E, dtype=float)
    F = np.asarray(F, dtype=float)
    if E.shape != F.shape or E.ndim != 1:
        raise ShapeMismatchError(f"energy {E.shape} and CMPC {F.shape} must be aligned vectors")
    if E.size < 2:
        raise InsufficientDataError(f"cluster {cluster}: {E.size} points; at least 2 are required")
    if not (np.isfinite(E).all() and np.isfinite(F).all()):
        raise ValidationError(f"cluster {cluster}: regression data must be finite")
    if np.unique(E).size < 2:
        raise DegenerateInputError(f"cluster {cluster}: all energy values are identical (rank deficient)")

    dE = E - E.mean()
    slope = float(dE @ (F - F.mean()) / (dE @ dE))
    intercept = float(F.mean() - slope * E.mean())
    residuals = F - (slope * E + intercept)
    n = E.size
    return ClusterRegression(
        cluster=cluster,
        slope=slope,
        intercept=intercept,
        n=n,
        residual_variance=float(residuals @ residuals / (n - 2)) if n > 2 else 0.0,
        mean_residual=float(residuals.mean()),
        heteroskedasticity=_heteroskedasticity(E, residuals),
    )


def fit_wcr(E: np.ndarray, F: np.ndarray, labels: np.ndarray, k: int) -> List[ClusterRegression]:
    """
    One regression per cluster from hard labels. A cluster whose points cannot support a line
    takes the pooled regression of the whole season, flagged ``fallback``.
    """
    E = np.asarray(E, dtype=float)
    F = np.asarray(F, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pooled = fit_cluster_ols(E, F, cluster=-1)
    regressions = []
    for z in range(k):
        inside = labels == z
        try:
            regressions.append(fit_cluster_ols(E[inside], F[inside], cluster=z))
        except (InsufficientDataError, DegenerateInputError) as e:
            logger.warning(f"{e}; using the pooled seasonal line")
            regressions.append(ClusterRegression(
                cluster=z,
                slope=pooled.slope,
                intercept=pooled.intercept,
                n=int(inside.sum()),
                residual_variance=pooled.residual_variance,
                mean_residual=pooled.mean_residual,
                heteroskedasticity=pooled.heteroskedasticity,
                fallback=True,
            ))
    return regressions


def estimate(regressions: Sequence[ClusterRegression], probs: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Probability-weighted combination of the cluster lines (unclamped)."""
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if probs.shape[1] != len(regressions):
        raise ShapeMismatchError(f"{probs.shape[1]} class probabilities for {len(regressions)} clusters")
    if probs.shape[0] != E.size:
        raise ShapeMismatchError(f"{probs.shape[0]} probability rows for {E.size} energy values")
    if np.any(E < 0):
        raise ValidationError("monthly energy must be non-negative")
    slopes = np.array([r.slope for r in regressions])
    intercepts = np.array([r.intercept for r in regressions])
    lines = E[:, None] * slopes[None, :] + intercepts[None, :]
    return (probs * lines).sum(axis=1)


def clamp_estimates(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=float)
    clipped = np.clip(values, 0.0, 1.0)
    return clipped, clipped != values


def split_train_test(ids: Iterable[str], ratio: float, seed: int) -> Tuple[List[str], List[str]]:
    """Seeded customer-level split; both sides come back sorted."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio {ratio} must lie in (0, 1)")
    ids = sorted(set(ids))
    n_train = int(round(ratio * len(ids)))
    if n_train == 0 or n_train == len(ids):
        raise InsufficientDataError(f"splitting {len(ids)} customers at {ratio} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(len(ids))
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


def r2(actual: Sequence[float], predicted: Sequence[float]) -> float:
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.size < 2:
        raise InsufficientDataError("R^2 needs at least 2 points")
    if np.ptp(actual) == 0:
        raise UndefinedMetricError("R^2 is undefined for constant actual values")
    ss_tot = np.sum((actual - actual.mean()) ** 2)
    return float(1.0 - np.sum((actual - predicted) ** 2) / ss_tot)


def mape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute percentage error in percent, over records with a non-zero actual."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.size < 2:
        raise InsufficientDataError("MAPE needs at least 2 points")
    usable = actual != 0
    if not usable.any():
        raise UndefinedMetricError("MAPE is undefined when every actual value is zero")
    return float(np.mean(np.abs(actual[usable] - predicted[usable]) / np.abs(actual[usable])) * 100.0)


def safe_metric(metric, actual, predicted) -> float:
    try:
        return metric(actual, predicted)
    except (InsufficientDataError, UndefinedMetricError):
        return float("nan")


def _group_means(frame: pd.DataFrame, key: str) -> Tuple[float, float]:
    r2s, mapes = [], []
    for _, group in frame.groupby(key, sort=True):
        r2s.append(safe_metric(r2, group.cmpc_actual, group.cmpc_estimated))
        mapes.append(safe_metric(mape, group.cmpc_actual, group.cmpc_estimated))
    r2s, mapes = np.array(r2s), np.array(mapes)
    return (
        float(np.nanmean(r2s)) if np.isfinite(r2s).any() else float("nan"),
        float(np.nanmean(mapes)) if np.isfinite(mapes).any() else float("nan"),
    )


def estimate_report(records: pd.DataFrame) -> Dict[str, Dict[str, Any]]:
    """
    Per-season accuracy of the estimates.

    ``records`` needs ``season, customer_id, cluster, energy_kwh, cmpc_actual, cmpc_estimated,
    raw_estimate, clamped``; ``cluster`` is the most likely pattern. Pooled, per-cluster
    averaged and per-customer averaged R^2/MAPE are reported side by side.
    """
    report: Dict[str, Dict[str, Any]] = {}
    for season, group in records.groupby("season", sort=True):
        actual = group.cmpc_actual.to_numpy(dtype=float)
        predicted = group.cmpc_estimated.to_numpy(dtype=float)
        residuals = actual - predicted
        cluster_r2, cluster_mape = _group_means(group, "cluster")
        customer_r2, customer_mape = _group_means(group, "customer_id")
        report[season] = {
            "n_records": int(len(group)),
            "n_customers": int(group.customer_id.nunique()),
            "r2": safe_metric(r2, actual, predicted),
            "mape": safe_metric(mape, actual, predicted),
            "r2_cluster_avg": cluster_r2,
            "mape_cluster_avg": cluster_mape,
            "r2_customer_avg": customer_r2,
            "mape_customer_avg": customer_mape,
            "mean_residual": float(residuals.mean()),
            "heteroskedasticity": _heteroskedasticity(group.energy_kwh.to_numpy(dtype=float), residuals),
            "n_clamped": int(group.clamped.sum()),
            "n_zero_actual": int((actual == 0).sum()),
        }
    return report
