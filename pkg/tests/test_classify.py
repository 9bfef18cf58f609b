import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import auc, roc_auc_score, roc_curve

from peak_contribution.classify import (
    MlrModel,
    align_features,
    auc_ovr,
    design_matrix,
    kfold_cv,
    load_survey,
    macro_auc,
    mlr_hessian,
    mlr_loglik,
    models_from_dict,
    models_to_dict,
    one_hot,
    predict,
    survey_features,
    train_irls,
)
from peak_contribution.config import ClassifyConfig
from peak_contribution.errors import ClassAbsentError, ParseError, UndefinedMetricError


@pytest.fixture
def timing_data(rng):
    """Peak-timing distributions of three classes peaking at 7h, 13h and 19h."""
    labels = np.repeat(np.arange(3), 20)
    centers = np.array([7, 13, 19])
    hours = np.arange(24)
    X = np.exp(-0.5 * ((hours[None, :] - centers[labels][:, None]) / 2.0) ** 2)
    X = X * rng.uniform(0.5, 1.5, size=X.shape)
    return X / X.sum(axis=1, keepdims=True), labels


def random_problem(rng, n=30, d=5, k=3):
    X = design_matrix(rng.random((n, d)))
    C = one_hot(rng.integers(k, size=n), k)
    return X, C


def test_gradient_matches_finite_differences(rng):
    eps = 1e-6
    for _ in range(10):
        X, C = random_problem(rng)
        w = rng.standard_normal((3, X.shape[1]))
        _, grad = mlr_loglik(w, X, C, ridge=0.1)
        numeric = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            step = np.zeros_like(w)
            step[idx] = eps
            numeric[idx] = (mlr_loglik(w + step, X, C, 0.1)[0] - mlr_loglik(w - step, X, C, 0.1)[0]) / (2 * eps)
        assert np.linalg.norm(grad - numeric) / np.linalg.norm(numeric) <= 1e-5


def test_hessian_matches_gradient_differences(rng):
    X, C = random_problem(rng)
    w = rng.standard_normal((3, X.shape[1]))
    H = mlr_hessian(w, X, ridge=0.1)
    eps = 1e-6
    numeric = np.zeros_like(H)
    for i, idx in enumerate(np.ndindex(*w.shape)):
        step = np.zeros_like(w)
        step[idx] = eps
        numeric[:, i] = (mlr_loglik(w + step, X, C, 0.1)[1] - mlr_loglik(w - step, X, C, 0.1)[1]).ravel() / (2 * eps)
    np.testing.assert_allclose(H, numeric, atol=1e-6)


def test_loglik_at_zero_weights_is_uniform(rng):
    for m in (1, 10):
        X = design_matrix(rng.random((m, 5)))
        C = one_hot(rng.integers(3, size=m), 3)
        J, _ = mlr_loglik(np.zeros((3, X.shape[1])), X, C, ridge=0.5)
        assert J == pytest.approx(-m * np.log(3))


def test_predict_ignores_a_common_weight_shift(timing_data, rng):
    X, labels = timing_data
    model = train_irls(X, labels, 3)
    shifted = MlrModel(model.weights + rng.standard_normal(model.weights.shape[1])[None, :], model.ridge)
    np.testing.assert_allclose(predict(shifted, X), predict(model, X), atol=1e-10)


def test_predict_saturates_without_overflow(rng):
    X = rng.dirichlet(np.ones(24), size=20)
    model = MlrModel(1e6 * rng.standard_normal((3, 25)), ridge=0.0)
    probs = predict(model, X)
    assert np.isfinite(probs).all()
    assert np.all((probs >= 0) & (probs <= 1))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_loglik_never_decreases(rng):
    for _ in range(20):
        n, k = 40, 3
        X = rng.dirichlet(np.ones(24), size=n)
        labels = np.r_[np.arange(k), rng.integers(k, size=n - k)]
        model = train_irls(X, labels, k)
        assert np.all(np.diff(model.history) >= -1e-12)
        assert model.loglik == model.history[-1]


def test_training_fits_separable_classes(timing_data):
    X, labels = timing_data
    model = train_irls(X, labels, 3)
    probs = predict(model, X)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert np.mean(np.argmax(probs, axis=1) == labels) > 0.95
    assert model.weights.shape == (3, 25)
    assert model.iterations == len(model.history) - 1


def test_coarse_features(timing_data):
    X, labels = timing_data
    model = train_irls(X, labels, 3, coarse=True)
    assert model.weights.shape == (3, 5)
    assert predict(model, X).shape == (60, 3)


def test_missing_class_is_rejected(timing_data):
    X, labels = timing_data
    with pytest.raises(ClassAbsentError):
        train_irls(X, labels, 4)


def test_auc_matches_roc_integration(rng):
    scores = rng.integers(0, 5, size=50).astype(float)
    labels = rng.integers(0, 2, size=50)
    assert auc_ovr(scores, labels, 1) == pytest.approx(roc_auc_score(labels == 1, scores), abs=1e-12)


def test_auc_worked_example():
    scores = np.array([0.9, 0.8, 0.7, 0.6])
    assert auc_ovr(scores, np.array([1, 0, 1, 0]), 1) == pytest.approx(0.75)


def test_auc_matches_trapezoidal_roc_area(rng):
    for _ in range(100):
        n = int(rng.integers(10, 60))
        scores = rng.integers(0, 8, size=n).astype(float)
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        fpr, tpr, _ = roc_curve(labels == 1, scores)
        assert auc_ovr(scores, labels, 1) == pytest.approx(auc(fpr, tpr), abs=1e-12)


def test_auc_needs_both_classes():
    with pytest.raises(UndefinedMetricError):
        auc_ovr(np.array([0.1, 0.2]), np.array([1, 1]), 1)


def test_macro_auc_reports_skipped_classes():
    probs = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.6, 0.4, 0.0]])
    value, skipped = macro_auc(probs, np.array([0, 1, 0]), 3)
    assert skipped == [2]
    assert value == pytest.approx(1.0)


def test_kfold_cv(timing_data):
    X, labels = timing_data
    report = kfold_cv(X, labels, 3, k_folds=5, seed=0)
    assert len(report.fold_auc) == 5
    assert sum(report.fold_sizes) == 60
    assert report.mean_auc > 0.95


def test_kfold_cv_is_deterministic(timing_data):
    X, labels = timing_data
    first = kfold_cv(X, labels, 3, k_folds=4, seed=7)
    second = kfold_cv(X, labels, 3, k_folds=4, seed=7)
    assert first.fold_auc == second.fold_auc


def test_kfold_cv_scores_evaluation_features(timing_data):
    X, labels = timing_data
    uniform = np.full_like(X, 1.0 / 24)
    report = kfold_cv(X, labels, 3, k_folds=5, seed=0, X_eval=uniform)
    # identical evaluation rows tie every score
    assert report.mean_auc == pytest.approx(0.5)


def test_load_survey_validates_and_renormalizes(tmp_path):
    path = tmp_path / "survey.csv"
    rows = np.full((2, 24), 1.0 / 24)
    frame = pd.DataFrame(rows, columns=[f"x{h}" for h in range(24)])
    frame.insert(0, "customer_id", ["A", "B"])
    frame["season"] = ["winter", "summer"]
    frame.to_csv(path, index=False)

    survey = load_survey(path)
    features = survey_features(survey, "winter")
    assert features.index.tolist() == ["A"]
    np.testing.assert_allclose(features.sum(axis=1), 1.0)

    frame.loc[1, "x0"] = 0.5
    frame.to_csv(path, index=False)
    with pytest.raises(ParseError) as info:
        load_survey(path)
    assert info.value.line == 3


def test_models_serialization(timing_data):
    X, labels = timing_data
    model = train_irls(X, labels, 3)
    restored = models_from_dict(models_to_dict({"winter": model}, ClassifyConfig()))
    np.testing.assert_allclose(predict(restored["winter"], X), predict(model, X))


def test_align_features_fills_absent_customers():
    features = pd.DataFrame(
        [np.eye(24)[3], np.eye(24)[5]], index=pd.Index(["A", "B"], name="customer_id")
    )
    aligned, missing = align_features(features, ["B", "C", "A"])
    assert missing == ["C"]
    assert aligned.index.tolist() == ["B", "C", "A"]
    np.testing.assert_allclose(aligned.loc["C"].to_numpy(), 0.5 * (np.eye(24)[3] + np.eye(24)[5]))
    np.testing.assert_allclose(aligned.sum(axis=1).to_numpy(), 1.0)

    aligned, missing = align_features(features, ["X"])
    assert missing == ["X"]
    np.testing.assert_allclose(aligned.loc["X"].to_numpy(), np.full(24, 1 / 24))
