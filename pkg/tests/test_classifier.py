"""
Tests for the linear SVM and evaluation metrics
"""
import numpy as np
import pytest
from scipy.optimize import minimize

from selfie_synergy.classifier import (SvmModel, accuracy_at, average_precision, decision_value, evaluate,
                                       optimal_bias, predict, report_from_decisions, svm_objective, svm_train,
                                       tune_threshold)
from selfie_synergy.errors import ArgumentError


def blobs(rng, n=40, margin=2.0):
    """Two Gaussian clouds separated along the first axis"""
    neg = rng.normal(size=(n, 3)) * 0.3
    pos = rng.normal(size=(n, 3)) * 0.3
    neg[:, 0] -= margin
    pos[:, 0] += margin
    X = np.vstack([neg, pos])
    y = np.array([-1] * n + [1] * n)
    return X, y


def test_svm_one_dimensional_optimum():
    """Points at -1 and +1 have the maximum-margin solution w = 1, b = 0"""
    X = np.array([[-1.0], [1.0]])
    y = np.array([-1, 1])
    model = svm_train(X, y, C=1.0, epochs=500)
    assert model.w[0] == pytest.approx(1.0, abs=0.05)
    assert model.objective <= svm_objective(np.array([1.0]), 0.0, X, y, 1.0) + 0.01


def test_svm_separates_blobs(rng):
    X, y = blobs(rng)
    model = svm_train(X, y, C=1.0, epochs=100)
    assert np.all(predict(model, X) == y)
    assert evaluate(model, X, y).accuracy == 1.0


def dual_optimum(X, y, C):
    """Optimal primal objective, read off the dual QP solved by scipy"""
    Q = (y[:, None] * X) @ (y[:, None] * X).T
    result = minimize(lambda a: 0.5 * a @ Q @ a - a.sum(), np.zeros(len(y)), jac=lambda a: Q @ a - 1.0,
                      bounds=[(0.0, C)] * len(y), constraints=[{"type": "eq", "fun": lambda a: a @ y}],
                      method="SLSQP", options={"maxiter": 500, "ftol": 1e-12})
    return -result.fun


def test_svm_reaches_reference_optimum(rng):
    X, y = blobs(rng)
    model = svm_train(X, y, C=1.0, epochs=300)
    reference = dual_optimum(X, y.astype(float), 1.0)

    assert model.objective >= reference - 1e-3
    assert model.objective <= 1.25 * reference + 0.01
    assert model.objective == pytest.approx(svm_objective(model.w, model.b, X, y, 1.0))


def test_svm_bias_is_not_blown_up(rng):
    """A shifted problem keeps its bias near the shift"""
    X, y = blobs(rng)
    model = svm_train(X + np.array([5.0, 0.0, 0.0]), y, C=1.0, epochs=100)
    assert -model.b / model.w[0] == pytest.approx(5.0, abs=0.5)


@pytest.mark.parametrize("scores, labels, expected", [
    ([-1.0, 1.0], [-1, 1], 0.0),
    ([2.0, 4.0], [-1, 1], -3.0),
    ([0.0, 0.0, 0.0], [1, 1, -1], 1.0),
])
def test_optimal_bias(scores, labels, expected):
    assert optimal_bias(np.array(scores), np.array(labels)) == pytest.approx(expected)


def test_optimal_bias_beats_every_grid_point(rng):
    scores = rng.normal(size=30)
    labels = np.where(rng.random(30) < 0.4, 1, -1)
    best = optimal_bias(scores, labels)

    def hinge(b):
        return np.maximum(0.0, 1.0 - labels * (scores + b)).sum()

    assert all(hinge(best) <= hinge(b) + 1e-12 for b in np.linspace(-4.0, 4.0, 401))


def test_svm_objective_trace_never_increases(rng):
    X, y = blobs(rng, margin=0.3)
    model = svm_train(X, y, C=0.5, epochs=30)
    assert all(b <= a for a, b in zip(model.objective_trace, model.objective_trace[1:]))
    assert model.objective == model.objective_trace[-1]


def test_svm_is_deterministic(rng):
    X, y = blobs(rng, margin=0.5)
    first = svm_train(X, y, epochs=20, seed=3)
    second = svm_train(X, y, epochs=20, seed=3)
    np.testing.assert_array_equal(first.w, second.w)
    assert first.b == second.b


def test_svm_rejects_bad_input():
    X = np.zeros((4, 2))
    with pytest.raises(ArgumentError):
        svm_train(X, np.ones(4, dtype=int))
    with pytest.raises(ArgumentError):
        svm_train(X, np.array([0, 1, 1, 0]))
    with pytest.raises(ArgumentError):
        svm_train(X, np.array([-1, 1, 1, -1]), C=0.0)


def test_decision_and_predict():
    model = SvmModel(w=np.array([1.0, 0.0]), b=-1.0)
    assert decision_value(model, np.array([3.0, 5.0])) == 2.0
    assert predict(model, np.array([1.0, 7.0])) == 1
    assert predict(model, np.array([0.5, 0.0])) == -1
    np.testing.assert_array_equal(predict(model, np.array([[3.0, 0.0], [0.0, 0.0]])), [1, -1])
    with pytest.raises(ArgumentError):
        decision_value(model, np.zeros(3))


def test_average_precision():
    assert average_precision(np.array([4.0, 3.0, 2.0, 1.0]), np.array([1, -1, 1, -1])) == pytest.approx(5 / 6)
    assert average_precision(np.array([4.0, 3.0, 2.0, 1.0]), np.array([1, 1, -1, -1])) == 1.0
    assert average_precision(np.array([1.0, 2.0]), np.array([-1, -1])) == 0.0


def test_average_precision_ties_keep_input_order():
    decisions = np.zeros(4)
    assert average_precision(decisions, np.array([1, -1, -1, 1])) == pytest.approx((1.0 + 0.5) / 2)
    assert average_precision(decisions, np.array([1, 1, -1, -1])) == 1.0


def test_report_counts():
    report = report_from_decisions(np.array([1.0, 0.0, -0.5, -2.0, 3.0]), np.array([1, -1, -1, 1, 1]), ids=list("abcde"))
    assert (report.tp, report.fp, report.tn, report.fn) == (2, 1, 1, 1)
    assert report.total == 5
    assert report.accuracy == pytest.approx(0.6)
    assert report.ids == list("abcde")
    assert "accuracy           0.6000" in report.summary("test")
    with pytest.raises(ArgumentError):
        report_from_decisions(np.array([]), np.array([]))


def test_tune_threshold():
    threshold, acc = tune_threshold(np.array([-2.0, -1.0, 1.0, 2.0]), np.array([-1, 1, 1, 1]))
    assert threshold == -1.0
    assert acc == 1.0
    assert accuracy_at(np.array([-2.0, -1.0, 1.0, 2.0]), np.array([-1, 1, 1, 1]), 0.0) == 0.75


def test_tune_threshold_constant_decisions():
    """With one decision value the best rule predicts the majority class"""
    threshold, acc = tune_threshold(np.zeros(5), np.array([1, 1, 1, -1, -1]))
    assert threshold == 0.0
    assert acc == pytest.approx(0.6)
    threshold, acc = tune_threshold(np.zeros(5), np.array([-1, -1, -1, 1, 1]))
    assert threshold == np.inf
    assert acc == pytest.approx(0.6)


def test_report_csv(tmp_path):
    report = report_from_decisions(np.array([0.5, -0.5]), np.array([1, 1]), ids=["x", "y"])
    report.tuned_threshold, report.tuned_accuracy = -1.0, 1.0
    report.to_csv(tmp_path / "report.csv")
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0] == "metric,value"
    assert "tuned_threshold,-1.0" in rows
    assert rows[-2:] == ["x,1,0.5,1", "y,1,-0.5,-1"]
