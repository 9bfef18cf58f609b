import itertools

import numpy as np
import pandas as pd
import pytest
import scipy.linalg
from sklearn.metrics import adjusted_rand_score, davies_bouldin_score

from peak_contribution.config import SpectralConfig, SynthConfig, default_calendar
from peak_contribution.errors import DegenerateInputError, InsufficientDataError
from peak_contribution.ingest import FeederSeries, build_panel, split_seasons
from peak_contribution.spectral import (
    PatternBank,
    SimilarityGraph,
    build_graph,
    build_pattern_bank,
    cluster_season,
    dbi,
    embed,
    kmeans,
    ncut_value,
    select_k_and_cluster,
    spectral_decomposition,
)
from peak_contribution.synth import archetype_shape, generate

ARCHETYPES = ["morning_peaker", "evening_peaker", "flat", "night_heavy"]


@pytest.fixture
def blobs(rng):
    centers = np.array([[0.0, 0.0, 0.0], [6.0, 0.0, 0.0], [0.0, 6.0, 0.0]])
    labels = np.repeat(np.arange(3), 10)
    return centers[labels] + 0.3 * rng.standard_normal((30, 3)), labels


@pytest.fixture
def archetype_profiles(rng):
    """Twelve near-identical copies of four well separated daily shapes."""
    truth = np.repeat(np.arange(len(ARCHETYPES)), 12)
    shapes = np.array([archetype_shape(name, "winter") for name in ARCHETYPES])
    X = shapes[truth] * (1.0 + 1e-4 * rng.standard_normal((truth.size, 24)))
    ids = [f"C{i + 1:04d}" for i in range(truth.size)]
    return pd.DataFrame(X, index=ids), truth


def test_graph_is_symmetric_with_unit_diagonal(rng):
    graph = build_graph(rng.random((20, 24)), phi=7)
    np.testing.assert_allclose(graph.W, graph.W.T)
    np.testing.assert_allclose(np.diag(graph.W), 1.0)
    assert np.all(graph.W > 0) and np.all(graph.W <= 1.0)


def test_local_scale_is_phi_th_neighbour_distance(rng):
    X = rng.random((15, 24))
    graph = build_graph(X, phi=3)
    dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    expected = np.sort(dist, axis=1)[:, 3]
    np.testing.assert_allclose(graph.alpha, expected)
    np.testing.assert_allclose(graph.W[0, 1], np.exp(-dist[0, 1] ** 2 / (expected[0] * expected[1])))


def test_zero_local_scale_is_clamped(rng):
    X = np.vstack([np.tile(rng.random(24), (9, 1)), rng.random((1, 24))])
    graph = build_graph(X, phi=7)
    assert graph.clamped == list(range(9))
    positive = np.linalg.norm(X[0] - X[9])
    np.testing.assert_allclose(graph.alpha[:9], positive)


def test_graph_contracts(rng):
    with pytest.raises(InsufficientDataError):
        build_graph(rng.random((7, 24)), phi=7)
    with pytest.raises(DegenerateInputError):
        build_graph(np.ones((10, 24)), phi=7)


def test_decomposition_matches_dense_oracle(rng):
    graph = build_graph(rng.random((40, 24)), phi=7)
    k = 4
    result = spectral_decomposition(graph, k)

    d = graph.W.sum(axis=1)
    L = np.eye(40) - graph.W / np.sqrt(np.outer(d, d))
    values, vectors = np.linalg.eigh(L)
    np.testing.assert_allclose(result.eigenvalues, values[:k], atol=1e-8)
    assert np.all(result.eigenvalues >= -1e-8) and np.all(result.eigenvalues <= 2 + 1e-8)
    assert np.all(result.residuals <= 1e-8)
    if values[k] - values[k - 1] > 1e-6:
        angles = scipy.linalg.subspace_angles(result.U, vectors[:, :k])
        assert np.max(angles) <= 1e-6


def test_affinity_operator_gives_same_spectrum(rng):
    graph = build_graph(rng.random((30, 24)), phi=7)
    laplacian = spectral_decomposition(graph, 5, operator="laplacian")
    affinity = spectral_decomposition(graph, 5, operator="affinity")
    np.testing.assert_allclose(laplacian.eigenvalues, affinity.eigenvalues, atol=1e-10)


def test_sparse_solver_matches_dense(rng):
    graph = build_graph(rng.random((30, 24)), phi=7)
    dense = spectral_decomposition(graph, 3)
    sparse = spectral_decomposition(graph, 3, dense_limit=10)
    np.testing.assert_allclose(dense.eigenvalues, sparse.eigenvalues, atol=1e-8)


def test_embedding_rows_have_unit_norm(blobs):
    embedding = embed(build_graph(blobs[0], phi=7), 3)
    norms = np.linalg.norm(embedding.U, axis=1)
    nonzero = np.setdiff1d(np.arange(len(norms)), embedding.zero_rows)
    np.testing.assert_allclose(norms[nonzero], 1.0)


def test_kmeans_labels_by_first_appearance(blobs):
    X, truth = blobs
    order = np.r_[20:30, 0:20]
    assignment = kmeans(X[order], 3, seed=0)
    assert assignment.labels[0] == 0
    assert adjusted_rand_score(truth[order], assignment.labels) == pytest.approx(1.0)
    assert assignment.k == 3


def test_dbi_matches_sklearn(blobs):
    X, truth = blobs
    assert dbi(X, truth) == pytest.approx(davies_bouldin_score(X, truth), rel=1e-10)


def test_dbi_is_infinite_for_coincident_centroids():
    X = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])
    assert dbi(X, np.array([0, 0, 1])) == np.inf


def test_spectral_partition_beats_random_partitions(blobs, rng):
    X, _ = blobs
    graph = build_graph(X, phi=7)
    assignment = kmeans(embed(graph, 3).U, 3, seed=0)
    ours = ncut_value(graph, assignment.labels, 3)
    for _ in range(100):
        labels = rng.permutation(np.arange(30) % 3)
        assert ours <= ncut_value(graph, labels, 3)


def test_ncut_brute_force_on_tiny_graph(rng):
    X = np.vstack([rng.normal(0, 0.1, (4, 2)), rng.normal(5, 0.1, (4, 2))])
    graph = build_graph(X, phi=3)
    best = min(
        ncut_value(graph, np.array(bits))
        for bits in itertools.product([0, 1], repeat=8)
        if 0 < sum(bits) < 8
    )
    assignment = kmeans(embed(graph, 2).U, 2, seed=0)
    assert ncut_value(graph, assignment.labels) == pytest.approx(best)


def test_select_k_recovers_archetypes(archetype_profiles):
    profiles, truth = archetype_profiles
    patterns = select_k_and_cluster(profiles.to_numpy(), 2, 15, 7, seed=0)
    assert patterns.k == 4
    assert adjusted_rand_score(truth, patterns.labels) == pytest.approx(1.0)
    assert sum(patterns.counts) == len(truth)
    assert min(patterns.dbi_curve, key=patterns.dbi_curve.get) == 4
    assert patterns.profiles.shape == (4, 24)


def test_cluster_season_ignores_input_order(archetype_profiles):
    profiles, _ = archetype_profiles
    config = SpectralConfig()
    first = cluster_season("winter", profiles, config, seed=3)
    shuffled = profiles.sample(frac=1.0, random_state=11)
    second = cluster_season("winter", shuffled, config, seed=3)
    assert first.labels_by_customer() == second.labels_by_customer()
    np.testing.assert_allclose(first.profiles, second.profiles)


def test_pattern_bank_serialization(archetype_profiles):
    profiles, _ = archetype_profiles
    bank = build_pattern_bank({"winter": profiles}, SpectralConfig(), seed=0)
    restored = PatternBank.from_dict(bank.to_dict())
    assert restored.total_patterns == bank.total_patterns == 4
    assert restored["winter"].labels == bank["winter"].labels
    assert restored["winter"].shares == pytest.approx([0.25] * 4)


def generator_profiles(**overrides):
    """Winter profiles and true archetypes of 200 customers drawn from four archetypes."""
    config = SynthConfig(n_customers=200, months=2, archetypes=list(ARCHETYPES),
                         archetype_persistence=1.0, seed=21, **overrides)
    result = generate(config)
    readings = result.readings
    panel = build_panel(readings.assign(timestamp=pd.to_datetime(readings["timestamp"])))
    datasets, _ = split_seasons(panel, FeederSeries(panel.sum(axis=1)), default_calendar())
    truth = pd.Series(result.ground_truth.archetypes["winter"], index=result.ground_truth.customers)
    return datasets["winter"].profiles, truth


def test_noiseless_generator_archetypes_are_recovered():
    profiles, truth = generator_profiles(noise=0.0, day_noise=0.0, weather_noise=0.0, shape_jitter=0.0)
    patterns = cluster_season("winter", profiles, SpectralConfig(), seed=0)
    labels = pd.Series(patterns.labels_by_customer())
    assert patterns.k == 4
    assert adjusted_rand_score(truth.loc[labels.index], labels) == pytest.approx(1.0)


def test_default_generator_archetypes_are_recovered():
    profiles, truth = generator_profiles()
    patterns = cluster_season("winter", profiles, SpectralConfig(), seed=0)
    labels = pd.Series(patterns.labels_by_customer())
    assert adjusted_rand_score(truth.loc[labels.index], labels) >= 0.9


def test_disconnected_blobs_give_a_double_zero_eigenvalue(rng):
    X = np.vstack([rng.normal(0.0, 0.1, (10, 3)), rng.normal(100.0, 0.1, (10, 3))])
    truth = np.repeat([0, 1], 10)
    graph = build_graph(X, phi=3)
    assert np.all(graph.W[:10, 10:] == 0.0)

    spectrum = spectral_decomposition(graph, 3)
    np.testing.assert_allclose(spectrum.eigenvalues[:2], 0.0, atol=1e-8)
    assert spectrum.eigenvalues[2] > 1e-3

    rows = embed(graph, 2).U
    np.testing.assert_allclose(rows[:10], np.tile(rows[0], (10, 1)), atol=1e-6)
    np.testing.assert_allclose(rows[10:], np.tile(rows[10], (10, 1)), atol=1e-6)
    assert np.linalg.norm(rows[0] - rows[10]) == pytest.approx(np.sqrt(2.0), abs=1e-6)
    assert ncut_value(graph, truth) == 0.0


def test_complete_graph_has_constant_first_eigenvector():
    n = 6
    graph = SimilarityGraph(np.zeros((n, 1)), np.ones((n, n)), np.ones(n))
    spectrum = spectral_decomposition(graph, 2)
    assert spectrum.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)
    assert spectrum.eigenvalues[1] == pytest.approx(1.0)
    np.testing.assert_allclose(spectrum.U[:, 0], np.full(n, 1 / np.sqrt(n)))


def test_laplacian_spectrum_lies_in_zero_two(rng):
    graph = build_graph(rng.random((25, 24)), phi=7)
    spectrum = spectral_decomposition(graph, 25)
    assert spectrum.eigenvalues[0] == pytest.approx(0.0, abs=1e-8)
    assert np.all(spectrum.eigenvalues >= -1e-8)
    assert np.all(spectrum.eigenvalues <= 2.0 + 1e-8)


def test_kmeans_one_cluster_per_point(rng):
    assignment = kmeans(rng.random((5, 2)), 5, seed=0)
    assert assignment.labels.tolist() == [0, 1, 2, 3, 4]
    assert assignment.inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_duplicates_share_a_label():
    rows = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0], [0.0, 0.1]])
    labels = kmeans(rows, 2, seed=0).labels
    assert labels[0] == labels[1] == labels[4]
    assert labels[2] == labels[3] != labels[0]


def test_dbi_hand_values():
    X = np.array([[-1.0, 0.0], [1.0, 0.0], [3.0, 0.0], [5.0, 0.0]])
    assert dbi(X, np.array([0, 0, 1, 1])) == pytest.approx(0.5)
    tight = np.array([[0.0], [1e-9], [10.0], [10.0 + 1e-9]])
    assert dbi(tight, np.array([0, 0, 1, 1])) < 1e-9
