"""
Multinomial logistic regression from peak-timing distributions to typical-pattern classes.

Training maximizes the ridge-penalized log-likelihood

    J(w) = sum_j sum_z c_jz * w_z.x_j - sum_j log sum_z exp(w_z.x_j) - (lambda/2) |w|^2

with Newton (IRLS) steps and step halving, over a full k-class softmax (no reference class).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp, softmax
from scipy.stats import rankdata
from sklearn.model_selection import KFold, StratifiedKFold

from .cmpc import coarsen_timing
from .config import HOURS_PER_DAY, ClassifyConfig
from .errors import (
    ClassAbsentError,
    DuplicateKeyError,
    NumericalError,
    ParseError,
    ShapeMismatchError,
    UndefinedMetricError,
    ValidationError,
)

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
MAX_HALVINGS = 30
SURVEY_COLUMNS = [f"x{i}" for i in range(HOURS_PER_DAY)]


@dataclass
class MlrModel:
    weights: np.ndarray
    ridge: float
    bias: bool = True
    coarse: bool = False
    iterations: int = 0
    loglik: float = float("nan")
    history: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "iterations": self.iterations,
            "loglik": self.loglik,
            "history": list(self.history),
            "converged": self.converged,
        }


@dataclass
class CvReport:
    fold_auc: List[float]
    fold_sizes: List[int]
    skipped_classes: List[List[int]]

    @property
    def mean_auc(self) -> float:
        scored = [a for a in self.fold_auc if np.isfinite(a)]
        return float(np.mean(scored)) if scored else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold_auc": list(self.fold_auc),
            "fold_sizes": list(self.fold_sizes),
            "skipped_classes": [list(s) for s in self.skipped_classes],
            "mean_auc": self.mean_auc,
        }


def prepare_features(X: np.ndarray, coarse: bool = False) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatchError(f"features must be a 2-D array, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("features must be finite")
    return coarsen_timing(X) if coarse else X


def design_matrix(X: np.ndarray, bias: bool = True) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.hstack([X, np.ones((X.shape[0], 1))]) if bias else X


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    C = np.zeros((labels.size, k))
    C[np.arange(labels.size), labels] = 1.0
    return C


def mlr_loglik(w: np.ndarray, X: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> Tuple[float, np.ndarray]:
    """
    Penalized log-likelihood and its gradient.

    ``X`` is the design matrix (bias column included when used), ``w`` is k x d and
    ``targets`` is the M x k one-hot class membership.
    """
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    C = np.asarray(targets, dtype=float)
    if w.ndim != 2 or X.shape[1] != w.shape[1] or C.shape != (X.shape[0], w.shape[0]):
        raise ShapeMismatchError(f"inconsistent shapes w{w.shape}, X{X.shape}, targets{C.shape}")
    if not (np.isfinite(w).all() and np.isfinite(X).all() and np.isfinite(C).all()):
        raise ValidationError("log-likelihood inputs must be finite")

    Z = X @ w.T
    lse = logsumexp(Z, axis=1)
    J = float(np.sum(C * Z) - lse.sum() - 0.5 * ridge * np.sum(w * w))
    P = np.exp(Z - lse[:, None])
    grad = (C - P).T @ X - ridge * w
    return J, grad


def mlr_hessian(w: np.ndarray, X: np.ndarray, ridge: float) -> np.ndarray:
    """Hessian of the penalized log-likelihood, flattened to (k*d) x (k*d) in row-major w order."""
    k, d = w.shape
    P = softmax(X @ w.T, axis=1)
    H = np.empty((k * d, k * d))
    for z in range(k):
        for y in range(z, k):
            s = P[:, z] * ((1.0 if z == y else 0.0) - P[:, y])
            block = -(X.T * s) @ X
            H[z * d:(z + 1) * d, y * d:(y + 1) * d] = block
            H[y * d:(y + 1) * d, z * d:(z + 1) * d] = block.T
    H -= ridge * np.eye(k * d)
    return H


def _check_classes(labels: np.ndarray, k: int) -> None:
    if k < 2:
        raise ClassAbsentError("training needs at least 2 classes")
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(k)) - present)
    if missing:
        raise ClassAbsentError(f"classes {missing} have no training samples")
    if not present <= set(range(k)):
        raise ValidationError(f"labels must lie in [0, {k})")


def train_irls(
    X: np.ndarray,
    labels: np.ndarray,
    k: int,
    ridge: float = 1e-3,
    max_iter: int = 100,
    tol: float = 1e-8,
    bias: bool = True,
    coarse: bool = False,
) -> MlrModel:
    """Newton/IRLS on the penalized log-likelihood; stops when the gradient's max-norm is below ``tol``."""
    if ridge <= 0:
        raise ValidationError("ridge strength must be positive")
    labels = np.asarray(labels, dtype=int)
    _check_classes(labels, k)
    features = prepare_features(X, coarse)
    if features.shape[0] != labels.size:
        raise ShapeMismatchError(f"{features.shape[0]} feature rows for {labels.size} labels")

    A = design_matrix(features, bias)
    C = one_hot(labels, k)
    w = np.zeros((k, A.shape[1]))
    J, grad = mlr_loglik(w, A, C, ridge)
    history = [J]
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            converged = True
            iterations -= 1
            break
        H = mlr_hessian(w, A, ridge)
        try:
            factor = cho_factor(-H)
            step = cho_solve(factor, grad.ravel()).reshape(w.shape)
        except LinAlgError as e:
            raise NumericalError(f"Hessian is singular at iteration {iterations}") from e

        t = 1.0
        for _ in range(MAX_HALVINGS):
            w_new = w + t * step
            J_new, grad_new = mlr_loglik(w_new, A, C, ridge)
            if J_new >= J:
                break
            t /= 2.0
        else:
            logger.debug(f"Step halving exhausted at iteration {iterations}; stopping")
            converged = np.max(np.abs(grad)) < tol
            iterations -= 1
            break
        w, J, grad = w_new, J_new, grad_new
        history.append(J)
    else:
        converged = np.max(np.abs(grad)) < tol

    if not converged:
        logger.warning(f"IRLS stopped after {iterations} iterations with |grad|max={np.max(np.abs(grad)):.3e}")
    return MlrModel(w, ridge, bias, coarse, iterations, J, history, bool(converged))


def predict(model: MlrModel, X: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per feature vector."""
    A = design_matrix(prepare_features(X, model.coarse), model.bias)
    if A.shape[1] != model.weights.shape[1]:
        raise ShapeMismatchError(f"model expects {model.weights.shape[1]} inputs, got {A.shape[1]}")
    return softmax(A @ model.weights.T, axis=1)


def auc_ovr(scores: np.ndarray, labels: np.ndarray, z: int) -> float:
    """One-vs-rest AUC of class ``z`` as a rank statistic (midranks for ties)."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 2:
        scores = scores[:, z]
    positive = np.asarray(labels) == z
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"class {z} needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(probs: np.ndarray, labels: np.ndarray, k: Optional[int] = None) -> Tuple[float, List[int]]:
    """Unweighted mean one-vs-rest AUC; classes lacking positives or negatives are skipped and returned."""
    probs = np.asarray(probs, dtype=float)
    k = probs.shape[1] if k is None else k
    values, skipped = [], []
    for z in range(k):
        try:
            values.append(auc_ovr(probs, labels, z))
        except UndefinedMetricError:
            skipped.append(z)
    if not values:
        raise UndefinedMetricError("no class has both positive and negative examples")
    return float(np.mean(values)), skipped


def _splitter(labels: np.ndarray, k_folds: int, seed: int):
    counts = np.bincount(labels)
    if k_folds <= counts.max():
        return StratifiedKFold(n_splits=k_folds, shuffle=True, random_state=seed)
    return KFold(n_splits=k_folds, shuffle=True, random_state=seed)


def kfold_cv(
    X: np.ndarray,
    labels: np.ndarray,
    k: int,
    k_folds: int = 5,
    seed: int = 0,
    config: Optional[ClassifyConfig] = None,
    X_eval: Optional[np.ndarray] = None,
) -> CvReport:
    """
    Stratified k-fold macro AUC.

    Held-out folds are scored on ``X_eval`` rows when given (same row order as ``X``).
    Classes missing from a training fold get zero probability; classes without positives
    or negatives in a held-out fold are skipped for that fold.
    """
    config = config or ClassifyConfig()
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if k_folds < 2:
        raise ValidationError("k_folds must be at least 2")
    if k_folds > labels.size:
        raise ValidationError(f"k_folds={k_folds} exceeds the {labels.size} samples")
    X_eval = X if X_eval is None else np.asarray(X_eval, dtype=float)
    if X_eval.shape[0] != X.shape[0]:
        raise ShapeMismatchError("evaluation features must align with training features")

    fold_auc, sizes, skipped = [], [], []
    for fold, (train_idx, test_idx) in enumerate(_splitter(labels, k_folds, seed).split(X, labels)):
        present = np.unique(labels[train_idx])
        sizes.append(int(test_idx.size))
        if present.size < 2:
            logger.warning(f"fold {fold}: training part holds a single class; fold not scored")
            fold_auc.append(float("nan"))
            skipped.append(list(range(k)))
            continue

        remap = np.full(k, -1, dtype=int)
        remap[present] = np.arange(present.size)
        model = train_irls(
            X[train_idx], remap[labels[train_idx]], present.size,
            ridge=config.ridge, max_iter=config.max_iter, tol=config.tol,
            bias=config.bias, coarse=config.coarse,
        )
        probs = np.zeros((test_idx.size, k))
        probs[:, present] = predict(model, X_eval[test_idx])
        try:
            auc, missing = macro_auc(probs, labels[test_idx], k)
        except UndefinedMetricError:
            auc, missing = float("nan"), list(range(k))
        if missing:
            logger.debug(f"fold {fold}: classes {missing} skipped in macro AUC")
        fold_auc.append(auc)
        skipped.append(missing)

    report = CvReport(fold_auc, sizes, skipped)
    logger.info(f"{k_folds}-fold CV macro AUC {report.mean_auc:.4f}")
    return report


def load_survey(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read ``survey.csv`` (``customer_id,x0..x23``, optional ``season``) and validate each row as
    a distribution. Rows are renormalized to sum exactly to 1 after the check.
    """
    frame = pd.read_csv(path, dtype={"customer_id": str}, float_precision="round_trip")
    expected = {"customer_id", *SURVEY_COLUMNS}
    if not expected <= set(frame.columns) or set(frame.columns) - expected - {"season"}:
        raise ParseError(f"survey header must be customer_id,{','.join(SURVEY_COLUMNS)}[,season]", line=1)

    values = frame[SURVEY_COLUMNS].to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1) | (values < 0).any(axis=1)
    sums = values.sum(axis=1)
    bad |= np.abs(sums - 1.0) > 1e-6
    if bad.any():
        raise ParseError("survey row is not a probability distribution", line=int(np.flatnonzero(bad)[0]) + 2)

    keys = ["customer_id", "season"] if "season" in frame.columns else ["customer_id"]
    duplicated = frame.duplicated(keys)
    if duplicated.any():
        raise DuplicateKeyError(f"line {int(np.flatnonzero(duplicated)[0]) + 2}: duplicate survey row")

    survey = pd.DataFrame(values / sums[:, None], columns=list(range(HOURS_PER_DAY)))
    survey.insert(0, "customer_id", frame["customer_id"].astype(str).to_numpy())
    if "season" in frame.columns:
        survey.insert(1, "season", frame["season"].astype(str).to_numpy())
    return survey


def survey_features(survey: pd.DataFrame, season: str) -> pd.DataFrame:
    """Survey vectors that apply to ``season``, indexed by customer id."""
    rows = survey[survey["season"] == season] if "season" in survey.columns else survey
    features = rows.set_index("customer_id")[list(range(HOURS_PER_DAY))]
    features.index.name = "customer_id"
    return features


def align_features(features: pd.DataFrame, customers: List[str]) -> Tuple[pd.DataFrame, List[str]]:
    """
    Feature rows for ``customers`` in that order, plus the ids that had no row.

    Missing rows get the mean distribution of the rows that are present (uniform when none
    are), so every aligned row is still a distribution.
    """
    aligned = features.reindex(pd.Index(customers, name=features.index.name))
    absent = aligned.isna().any(axis=1)
    missing = [c for c, gap in zip(customers, absent) if gap]
    if missing:
        present = aligned[~absent]
        fallback = (present.mean() if len(present)
                    else pd.Series(1.0 / features.shape[1], index=features.columns))
        aligned.loc[absent] = np.tile(fallback.to_numpy(dtype=float), (len(missing), 1))
    return aligned, missing


def models_to_dict(models: Dict[str, MlrModel], config: ClassifyConfig) -> Dict[str, Any]:
    return {
        "version": MODEL_VERSION,
        "ridge": config.ridge,
        "features": {"h": HOURS_PER_DAY, "bias": config.bias, "coarse": config.coarse},
        "seasons": {season: model.to_dict() for season, model in models.items()},
    }


def models_from_dict(data: Dict[str, Any]) -> Dict[str, MlrModel]:
    if data.get("version") != MODEL_VERSION:
        raise ValidationError(f"unsupported mlr_model.json version {data.get('version')}")
    features = data["features"]
    return {
        season: MlrModel(
            weights=np.asarray(entry["weights"], dtype=float),
            ridge=float(data["ridge"]),
            bias=bool(features["bias"]),
            coarse=bool(features["coarse"]),
            iterations=int(entry["iterations"]),
            loglik=float(entry["loglik"]),
            history=[float(v) for v in entry["history"]],
            converged=bool(entry["converged"]),
        )
        for season, entry in data["seasons"].items()
    }
