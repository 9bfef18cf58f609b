"""
Spectral clustering of seasonal average daily profiles.

The similarity graph uses self-tuning local scales (alpha_i = distance to the phi-th nearest
neighbour), the embedding takes the eigenvectors of the k smallest eigenvalues of the
symmetric normalized Laplacian, k-means clusters the row-normalized embedding and the
Davies-Bouldin index over the original profiles chooses k.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.spatial import KDTree
from scipy.spatial.distance import pdist, squareform
from sklearn.cluster import KMeans

from .config import HOURS_PER_DAY, SEASONS, SpectralConfig
from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    NumericalError,
    ShapeMismatchError,
    ValidationError,
)
from .utils import decode_float

logger = logging.getLogger(__name__)

PATTERNS_VERSION = 1


@dataclass
class SimilarityGraph:
    vertices: np.ndarray
    W: np.ndarray
    alpha: np.ndarray
    clamped: List[int] = field(default_factory=list)

    @property
    def degrees(self) -> np.ndarray:
        return self.W.sum(axis=1)


@dataclass
class SpectralEmbedding:
    U: np.ndarray
    eigenvalues: np.ndarray
    residuals: np.ndarray
    zero_rows: List[int] = field(default_factory=list)


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass
class SeasonPatterns:
    """One season's entry of the pattern bank."""

    season: str
    k: int
    profiles: np.ndarray
    counts: List[int]
    dbi_curve: Dict[int, float]
    customers: List[str] = field(default_factory=list)
    labels: List[int] = field(default_factory=list)
    clamped_scales: int = 0
    zero_rows: int = 0

    @property
    def shares(self) -> List[float]:
        total = sum(self.counts)
        return [c / total for c in self.counts]

    def labels_by_customer(self) -> Dict[str, int]:
        return dict(zip(self.customers, self.labels))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "profiles": self.profiles.tolist(),
            "counts": list(self.counts),
            "shares": self.shares,
            "dbi_curve": {str(k): v for k, v in sorted(self.dbi_curve.items())},
            "customers": list(self.customers),
            "labels": list(self.labels),
            "clamped_scales": self.clamped_scales,
            "zero_rows": self.zero_rows,
        }

    @classmethod
    def from_dict(cls, season: str, data: Dict[str, Any]) -> "SeasonPatterns":
        return cls(
            season=season,
            k=int(data["k"]),
            profiles=np.asarray(data["profiles"], dtype=float),
            counts=[int(c) for c in data["counts"]],
            dbi_curve={int(k): decode_float(v) for k, v in data["dbi_curve"].items()},
            customers=list(data.get("customers", [])),
            labels=[int(v) for v in data.get("labels", [])],
            clamped_scales=int(data.get("clamped_scales", 0)),
            zero_rows=int(data.get("zero_rows", 0)),
        )


@dataclass
class PatternBank:
    seasons: Dict[str, SeasonPatterns]
    settings: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, season: str) -> SeasonPatterns:
        return self.seasons[season]

    @property
    def total_patterns(self) -> int:
        return sum(p.k for p in self.seasons.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": PATTERNS_VERSION,
            "config": dict(self.settings),
            "seasons": {s: p.to_dict() for s, p in self.seasons.items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PatternBank":
        if data.get("version") != PATTERNS_VERSION:
            raise ValidationError(f"unsupported patterns.json version {data.get('version')}")
        seasons = {s: SeasonPatterns.from_dict(s, d) for s, d in data["seasons"].items()}
        return cls(seasons, dict(data.get("config", {})))


def build_graph(profiles: np.ndarray, phi: int = 7) -> SimilarityGraph:
    """
    Self-tuning similarity graph: W_ij = exp(-|V_i - V_j|^2 / (alpha_i * alpha_j)).

    A zero local scale (duplicates within the phi nearest neighbours) is clamped to the
    smallest positive pairwise distance.
    """
    X = np.asarray(profiles, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatchError(f"profiles must be a 2-D array, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("profiles must be finite")
    n = X.shape[0]
    if n < phi + 1:
        raise InsufficientDataError(f"{n} profiles cannot support neighbour rank phi={phi}")

    dist = squareform(pdist(X))
    positive = dist[dist > 0]
    if positive.size == 0:
        raise DegenerateInputError("all profiles are identical")

    # column 0 of the query is the point itself (or a duplicate at distance 0)
    neighbour_dist, _ = KDTree(X).query(X, k=phi + 1)
    alpha = neighbour_dist[:, phi].astype(float)
    clamped = np.flatnonzero(alpha == 0).tolist()
    if clamped:
        alpha[clamped] = positive.min()
        logger.warning(f"Clamped {len(clamped)} zero local scales to {positive.min():.6g}")

    W = np.exp(-(dist ** 2) / np.outer(alpha, alpha))
    return SimilarityGraph(X, W, alpha, clamped)


def _normalized_affinity(W: np.ndarray) -> np.ndarray:
    degrees = W.sum(axis=1)
    if np.any(degrees <= 0):
        raise DegenerateInputError("graph has a vertex with zero degree")
    inv_sqrt = 1.0 / np.sqrt(degrees)
    M = W * inv_sqrt[:, None] * inv_sqrt[None, :]
    return (M + M.T) / 2.0


def spectral_decomposition(
    graph: SimilarityGraph,
    k: int,
    operator: str = "laplacian",
    dense_limit: int = 2000,
    tol: float = 1e-10,
    residual_tol: float = 1e-8,
) -> SpectralEmbedding:
    """
    The k eigenpairs of L_sym = I - D^-1/2 W D^-1/2 with the smallest eigenvalues, unnormalized.

    ``operator="affinity"`` solves for the k largest eigenpairs of D^-1/2 W D^-1/2 instead;
    eigenvalues are reported on the Laplacian scale either way. Each eigenvector's largest
    magnitude entry is made positive.
    """
    n = graph.W.shape[0]
    if not 2 <= k <= n:
        raise ValidationError(f"embedding dimension k={k} must lie in [2, {n}]")
    M = _normalized_affinity(graph.W)
    L = np.eye(n) - M

    if n > dense_limit:
        try:
            mu, vectors = eigsh(M, k=k, which="LA", tol=tol)
        except ArpackNoConvergence as e:
            raise NumericalError(f"iterative eigensolver did not converge: {e}") from e
        order = np.argsort(-mu, kind="stable")
        values, vectors = 1.0 - mu[order], vectors[:, order]
    elif operator == "affinity":
        mu, vectors = scipy.linalg.eigh(M, subset_by_index=[n - k, n - 1])
        values, vectors = 1.0 - mu[::-1], vectors[:, ::-1]
    else:
        values, vectors = scipy.linalg.eigh(L, subset_by_index=[0, k - 1])

    residuals = np.linalg.norm(L @ vectors - vectors * values[None, :], axis=0)
    if np.any(residuals > residual_tol):
        raise NumericalError(
            f"eigenpair residuals exceed {residual_tol:g}: max {residuals.max():.3e} "
            f"at index {int(np.argmax(residuals))}"
        )

    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return SpectralEmbedding(vectors * signs, values, residuals)


def normalize_rows(U: np.ndarray) -> SpectralEmbedding:
    norms = np.linalg.norm(U, axis=1)
    zero = norms == 0
    out = U.copy()
    out[~zero] /= norms[~zero, None]
    return SpectralEmbedding(out, np.empty(0), np.empty(0), np.flatnonzero(zero).tolist())


def embed(graph: SimilarityGraph, k: int, **solver) -> SpectralEmbedding:
    """Row-normalized spectral embedding of ``graph`` in ``k`` dimensions."""
    raw = spectral_decomposition(graph, k, **solver)
    rows = normalize_rows(raw.U)
    if rows.zero_rows:
        logger.warning(f"{len(rows.zero_rows)} embedding rows are zero and stay unnormalized")
    return SpectralEmbedding(rows.U, raw.eigenvalues, raw.residuals, rows.zero_rows)


def _first_appearance(labels: np.ndarray, k: int) -> np.ndarray:
    _, first = np.unique(labels, return_index=True)
    mapping = np.empty(k, dtype=int)
    mapping[np.argsort(first, kind="stable")] = np.arange(k)
    return mapping


def kmeans(
    rows: np.ndarray,
    k: int,
    seed: int,
    n_init: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> ClusterAssignment:
    """k-means++ / Lloyd with ``n_init`` restarts; labels are numbered by first appearance."""
    rows = np.asarray(rows, dtype=float)
    distinct = np.unique(rows, axis=0).shape[0]
    if k > distinct:
        raise InsufficientDataError(f"k={k} exceeds the {distinct} distinct rows")
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=n_init,
        max_iter=max_iter,
        tol=tol,
        random_state=seed,
        algorithm="lloyd",
    ).fit(rows)
    mapping = _first_appearance(model.labels_, k)
    labels = mapping[model.labels_]
    centroids = np.empty_like(model.cluster_centers_)
    centroids[mapping] = model.cluster_centers_
    return ClusterAssignment(labels, centroids, float(model.inertia_))


def dbi(profiles: np.ndarray, labels: np.ndarray) -> float:
    """
    Davies-Bouldin index with sigma = mean member distance to the centroid.

    Returns ``inf`` when two centroids coincide.
    """
    X = np.asarray(profiles, dtype=float)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ValidationError("the Davies-Bouldin index needs at least 2 clusters")

    centroids = np.array([X[labels == c].mean(axis=0) for c in clusters])
    sigma = np.array([
        np.linalg.norm(X[labels == c] - centroids[i], axis=1).mean()
        for i, c in enumerate(clusters)
    ])
    separation = squareform(pdist(centroids))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (sigma[:, None] + sigma[None, :]) / separation
    ratio[separation == 0] = np.inf
    np.fill_diagonal(ratio, -np.inf)
    return float(ratio.max(axis=1).mean())


def ncut_value(graph: SimilarityGraph, labels: np.ndarray, k: Optional[int] = None) -> float:
    """Normalized cut: sum over clusters of cut(A, V minus A) / vol(A)."""
    labels = np.asarray(labels)
    k = int(labels.max()) + 1 if k is None else k
    if k < 2:
        raise ValidationError("the normalized cut needs at least 2 clusters")
    degrees = graph.degrees
    total = 0.0
    for c in range(k):
        inside = labels == c
        if not inside.any():
            raise ValidationError(f"cluster {c} is empty")
        cut = graph.W[np.ix_(inside, ~inside)].sum()
        total += cut / degrees[inside].sum()
    return float(total)


def _max_normalize(X: np.ndarray) -> np.ndarray:
    peaks = X.max(axis=1, keepdims=True)
    return np.divide(X, peaks, out=np.zeros_like(X), where=peaks > 0)


def select_k_and_cluster(
    profiles: np.ndarray,
    k_min: int,
    k_max: int,
    phi: int,
    seed: int,
    config: Optional[SpectralConfig] = None,
    season: str = "",
) -> SeasonPatterns:
    """
    Cluster at every candidate k and keep the one with the smallest DBI (ties: smaller k).

    With ``normalize_profiles`` the graph and the DBI both see each profile divided by its
    own maximum, so clusters follow shape rather than consumption level. Typical profiles are
    always member means in the input units.
    """
    config = config or SpectralConfig()
    X = np.asarray(profiles, dtype=float)
    n = X.shape[0]
    k_hi = min(k_max, n - 1)
    if k_hi < k_min:
        raise InsufficientDataError(f"{n} profiles leave no candidate k in [{k_min}, {k_max}]")

    Z = _max_normalize(X) if config.normalize_profiles else X
    graph = build_graph(Z, phi)
    spectrum = spectral_decomposition(
        graph,
        k_hi,
        operator=config.operator,
        dense_limit=config.dense_limit,
        tol=config.eig_tol,
        residual_tol=config.residual_tol,
    )

    curve: Dict[int, float] = {}
    best: Optional[ClusterAssignment] = None
    zero_rows = 0
    for k in range(k_min, k_hi + 1):
        rows = normalize_rows(spectrum.U[:, :k])
        try:
            assignment = kmeans(rows.U, k, seed, config.n_init, config.max_iter, config.kmeans_tol)
        except InsufficientDataError:
            logger.debug(f"{season}: k={k} skipped, too few distinct embedding rows")
            curve[k] = float("inf")
            continue
        curve[k] = dbi(Z, assignment.labels)
        if best is None or curve[k] < curve[best.k]:
            best = assignment
            zero_rows = len(rows.zero_rows)

    if best is None or not np.isfinite(curve[best.k]):
        raise DegenerateInputError(f"{season}: no candidate k produced a finite DBI")
    if zero_rows:
        logger.warning(f"{season}: {zero_rows} zero embedding rows at k={best.k}")

    typical = np.array([X[best.labels == c].mean(axis=0) for c in range(best.k)])
    counts = np.bincount(best.labels, minlength=best.k).tolist()
    logger.info(f"{season}: chose k={best.k} (DBI {curve[best.k]:.4f}) over {n} profiles")
    return SeasonPatterns(
        season=season,
        k=best.k,
        profiles=typical,
        counts=counts,
        dbi_curve=curve,
        labels=best.labels.tolist(),
        clamped_scales=len(graph.clamped),
        zero_rows=zero_rows,
    )


def cluster_season(season: str, profiles: pd.DataFrame, config: SpectralConfig, seed: int) -> SeasonPatterns:
    """
    Cluster one season's customer profiles (rows indexed by customer id).

    Profiles are put in lexicographic order first, so the labels do not depend on the order
    customers arrive in.
    """
    if profiles.shape[1] != HOURS_PER_DAY:
        raise ShapeMismatchError(f"expected {HOURS_PER_DAY} profile columns, got {profiles.shape[1]}")
    X = profiles.to_numpy(dtype=float)
    ids = profiles.index.astype(str).to_numpy()
    id_rank = np.argsort(np.argsort(ids, kind="stable"), kind="stable")
    # lexsort's last key is the primary one: hour 0 first, customer id last
    order = np.lexsort((id_rank,) + tuple(X.T[::-1]))

    result = select_k_and_cluster(
        X[order], config.k_min, config.k_max, config.phi, seed, config, season=season
    )
    labels = np.empty(len(order), dtype=int)
    labels[order] = result.labels
    result.customers = ids.tolist()
    result.labels = labels.tolist()
    return result


def build_pattern_bank(profiles_by_season: Dict[str, pd.DataFrame], config: SpectralConfig, seed: int) -> PatternBank:
    seasons = {
        season: cluster_season(season, profiles_by_season[season], config, seed)
        for season in SEASONS
        if season in profiles_by_season
    }
    settings = {
        "phi": config.phi,
        "seed": seed,
        "k_min": config.k_min,
        "k_max": config.k_max,
        "operator": config.operator,
        "normalize_profiles": config.normalize_profiles,
    }
    return PatternBank(seasons, settings)
