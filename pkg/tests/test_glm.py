import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pstrata import glm
from pstrata.exceptions import DimensionMismatch, Separation


# -- independent oracle: per-row likelihood, coordinate pattern search ---------

def nll_multinomial(theta, X, labels, w, J):
    """Negative weighted log-likelihood; theta is a flat list of (J-1)*p values."""
    p = X.shape[1]
    total = 0.0
    for i in range(len(labels)):
        etas = [sum(theta[k * p + j] * X[i, j] for j in range(p)) for k in range(J - 1)] + [0.0]
        m = max(etas)
        lse = m + math.log(sum(math.exp(e - m) for e in etas))
        total -= w[i] * (etas[labels[i] - 1] - lse)
    return total


def coordinate_search(f, x0, step=1.0, tol=1e-7):
    x = list(x0)
    fx = f(x)
    while step > tol:
        improved = False
        for j in range(len(x)):
            for d in (step, -step):
                y = list(x)
                y[j] += d
                fy = f(y)
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step /= 2
    return np.array(x)


def logistic_fixture(seed, n=50):
    rng = np.random.default_rng(seed)
    X = glm.add_intercept(rng.standard_normal((n, 2)))
    y = (rng.random(n) < 1 / (1 + np.exp(-(X @ [0.3, 1.0, -0.7])))).astype(int)
    w = rng.integers(1, 4, n).astype(float)
    return X, y, w


def test_logistic_matches_brute_force():
    X, y, w = logistic_fixture(1)
    fit = glm.fit_logistic(X, y, w)
    oracle = coordinate_search(lambda t: nll_multinomial(t, X, 2 - y, w, 2), [0.0] * 3)
    assert np.abs(fit.coefficients - oracle).max() < 1e-4
    assert fit.converged


def test_multinomial_three_classes_matches_brute_force():
    rng = np.random.default_rng(5)
    X = glm.add_intercept(rng.standard_normal((60, 1)))
    labels = rng.integers(1, 4, 60)
    labels[:3] = [1, 2, 3]
    w = rng.uniform(0.5, 2.0, 60)
    fit = glm.fit_multinomial(X, labels, w, n_classes=3)
    oracle = coordinate_search(lambda t: nll_multinomial(t, X, labels, w, 3), [0.0] * 4)
    assert np.abs(fit.coefficients.ravel() - oracle).max() < 1e-3
    assert np.allclose(glm.predict_proba(fit, X).sum(axis=1), 1.0)


def test_binary_reduction():
    X, y, w = logistic_fixture(2)
    a = glm.fit_logistic(X, y, w)
    # class 1 of the multinomial is y=1, class 2 (reference) is y=0
    b = glm.fit_multinomial(X, np.where(y == 1, 1, 2), w)
    assert np.abs(a.coefficients - b.coefficients[0]).max() < 1e-6


def test_symmetric_two_point_design():
    X = np.array([[1.0, -1.0], [1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    fit = glm.fit_logistic(X, [0, 0, 1, 1])
    assert np.allclose(fit.coefficients, 0.0, atol=1e-12)


def test_constant_response_is_separation():
    X = glm.add_intercept(np.arange(6.0)[:, None])
    with pytest.raises(Separation):
        glm.fit_logistic(X, np.ones(6, dtype=int))
    with pytest.raises(Separation):
        glm.fit_multinomial(X, np.ones(6, dtype=int), n_classes=3)


def test_complete_separation_detected():
    X = glm.add_intercept(np.arange(8.0)[:, None])
    with pytest.raises(Separation):
        glm.fit_logistic(X, (np.arange(8) >= 4).astype(int))


def test_predict_proba_examples():
    zero = glm.LogitFit(np.zeros(3), np.eye(3), True, 0, 0.0)
    assert np.allclose(glm.predict_proba(zero, [1.0, 0.3, -2.0]), [0.5, 0.5])
    alpha = glm.LogitFit(np.array([-2.0, 1.0, -2.0, 2.0]), np.eye(4), True, 0, 0.0)
    assert glm.predict_proba(alpha, [1.0, 0.0, 0.0, 1.0])[1] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DimensionMismatch):
        glm.predict_proba(alpha, [1.0, 0.0])


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_predict_proba_matches_link_formula(seed, J):
    rng = np.random.default_rng(seed)
    coef = rng.normal(0, 2, (J - 1, 3))
    row = np.r_[1.0, rng.standard_normal(2)]
    fit = glm.MultinomialFit(coef, np.eye(coef.size), True, 0, 0.0)
    eta = [float(np.dot(c, row)) for c in coef] + [0.0]
    den = sum(math.exp(e) for e in eta)
    expected = [math.exp(e) / den for e in eta]
    got = glm.predict_proba(fit, row)
    assert np.allclose(got, expected, rtol=1e-12, atol=1e-15)
    assert (got >= 0).all() and (got <= 1).all()


@given(st.integers(0, 10_000))
def test_gradient_small_and_weight_scaling(seed):
    X, y, w = logistic_fixture(seed, n=80)
    try:
        fit = glm.fit_logistic(X, y, w)
    except Separation:
        return
    p = 1 / (1 + np.exp(-(X @ fit.coefficients)))
    grad = X.T @ (w * (y - p))
    assert np.abs(grad).max() < 1e-6
    doubled = glm.fit_logistic(X, y, 2 * w)
    assert np.allclose(doubled.coefficients, fit.coefficients, atol=1e-8)
    cov = fit.covariance
    assert np.allclose(cov, cov.T) and np.linalg.eigvalsh(cov).min() > 0


def test_recovers_generating_coefficients():
    # bias of each coefficient within 3 Monte Carlo SEs at n = 10 000
    truth = np.array([-0.5, 1.0, -2.0])
    est = []
    for r in range(40):
        rng = np.random.default_rng(100 + r)
        X = glm.add_intercept(rng.standard_normal((10_000, 2)))
        y = (rng.random(10_000) < 1 / (1 + np.exp(-(X @ truth)))).astype(int)
        est.append(glm.fit_logistic(X, y).coefficients)
    est = np.array(est)
    mcse = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert (np.abs(est.mean(axis=0) - truth) < 3 * mcse).all()


def test_batch_rows_agree_with_single_fits():
    X, y, _ = logistic_fixture(9, n=100)
    rng = np.random.default_rng(0)
    W = rng.integers(0, 3, (5, 100)).astype(float)
    full = glm.newton_batch(X, y[:, None].astype(float), W)
    for i in range(5):
        single = glm.newton_batch(X, y[:, None].astype(float), W[i:i + 1])
        assert np.allclose(single.coefficients[0], full.coefficients[i], rtol=0, atol=1e-12)


def test_statsmodels_cross_check():
    sm = pytest.importorskip("statsmodels.api")
    X, y, w = logistic_fixture(4, n=300)
    ref = sm.GLM(y, X, family=sm.families.Binomial(), freq_weights=w).fit(tol=1e-12)
    assert np.allclose(glm.fit_logistic(X, y, w).coefficients, ref.params, atol=1e-8)
