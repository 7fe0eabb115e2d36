"""Weighted binary and multinomial logistic regression.

Everything funnels through :func:`newton_batch`, which maximises the
weighted log-likelihood for a whole stack of case-weight vectors at once.
The bootstrap relies on this: a resample is just an integer weight vector,
so a thousand resamples become one batched fit over a shared design.

Multinomial models use the last class as reference; coefficients are
stored one row per non-reference class, intercept first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import DimensionMismatch, NotConverged, Separation, Singular

TOL = 1e-8
MAX_ITER = 100
SEPARATION_BOUND = 30.0
MAX_HALVINGS = 40

RUNNING, CONVERGED, SEPARATED, SINGULAR, MAXITER = range(5)


@dataclass(frozen=True)
class LogitFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float

    @property
    def n_classes(self):
        return 2


@dataclass(frozen=True)
class MultinomialFit:
    coefficients: np.ndarray  # (J-1, p); row k is class k+1 against the reference J
    covariance: np.ndarray  # over coefficients.ravel()
    converged: bool
    iterations: int
    log_likelihood: float

    @property
    def n_classes(self):
        return self.coefficients.shape[0] + 1


class BatchFit(NamedTuple):
    coefficients: np.ndarray  # (B, K, p)
    status: np.ndarray  # (B,) one of RUNNING..MAXITER
    iterations: np.ndarray
    log_likelihood: np.ndarray
    information: np.ndarray  # (B, K*p, K*p) at the returned coefficients

    @property
    def ok(self):
        return self.status == CONVERGED


def add_intercept(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


def _linear_predictor(X, theta):
    # (n, p) x (B, K, p) -> (B, n, K)
    return np.matmul(X, theta.transpose(0, 2, 1))


def _evaluate(X, Y, W, theta, ridge):
    """Weighted log-likelihood and fitted non-reference probabilities."""
    if theta.shape[1] == 1:
        eta = theta[:, 0, :] @ X.T
        e = np.exp(-np.abs(eta))
        softplus = np.maximum(eta, 0.0) + np.log1p(e)
        ll = (W * (Y[:, 0] * eta - softplus)).sum(axis=1)
        if ridge:
            ll = ll - 0.5 * ridge * (theta[:, :, 1:] ** 2).sum(axis=(1, 2))
        p = np.where(eta >= 0, 1.0, e) / (1.0 + e)
        return ll, p[..., None]
    eta = _linear_predictor(X, theta)
    m = np.maximum(eta.max(axis=-1), 0.0)
    e = np.exp(eta - m[..., None])
    s = np.exp(-m) + e.sum(axis=-1)
    per_obs = (eta * Y[None]).sum(axis=-1) - m - np.log(s)
    ll = (W * per_obs).sum(axis=1)
    if ridge:
        ll = ll - 0.5 * ridge * (theta[:, :, 1:] ** 2).sum(axis=(1, 2))
    return ll, e / s[..., None]


def _probs(eta):
    m = np.maximum(eta.max(axis=-1, keepdims=True), 0.0)
    e = np.exp(eta - m)
    return e / (np.exp(-m) + e.sum(axis=-1, keepdims=True))


def _grad_info(X, XX, Y, W, theta, P, ridge):
    B, K, p = theta.shape
    R = W[:, :, None] * (Y[None] - P)
    G = np.matmul(X.T, R).transpose(0, 2, 1)  # (B, K, p)
    info = np.empty((B, K, p, K, p))
    for k in range(K):
        for l in range(k, K):
            c = P[:, :, k] * ((k == l) - P[:, :, l]) * W
            blk = (c @ XX).reshape(B, p, p)
            info[:, k, :, l, :] = blk
            if l != k:
                info[:, l, :, k, :] = blk
    if ridge:
        G[:, :, 1:] -= ridge * theta[:, :, 1:]
        idx = np.arange(1, p)
        for k in range(K):
            info[:, k, idx, k, idx] += ridge
    return G, info.reshape(B, K * p, K * p)


def _solve(info, g):
    """Newton direction per batch element; ``None`` rows mark singular systems."""
    B = len(info)
    out = np.zeros_like(g)
    bad = np.zeros(B, dtype=bool)
    ev = np.linalg.eigvalsh(info)
    top = ev[:, -1]
    bad |= ~(top > 0) | (ev[:, 0] <= 1e-12 * np.where(top > 0, top, 1.0))
    good = ~bad
    if good.any():
        out[good] = np.linalg.solve(info[good], g[good][..., None])[..., 0]
    return out, bad


def newton_batch(X, Y, W, *, start=None, ridge=0.0, tol=TOL, max_iter=MAX_ITER,
                 separation_bound=SEPARATION_BOUND) -> BatchFit:
    """Maximise the weighted multinomial log-likelihood for every weight row.

    Parameters
    ----------
    X : (n, p) design matrix (intercept column included by the caller)
    Y : (n, K) indicators of the K non-reference classes
    W : (B, n) nonnegative case weights, one row per fit
    start : optional (K, p) or (B, K, p) starting coefficients (default 0)

    Newton-Raphson with step halving. A fit stops as soon as the max-norm of
    its score drops below ``tol``; elements that finish are frozen so the
    result of a row never depends on the rest of the batch.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    n, p = X.shape
    K = Y.shape[1]
    if Y.shape[0] != n or W.shape[1] != n:
        raise DimensionMismatch("design, response and weights disagree on n")
    B = W.shape[0]
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    theta = np.zeros((B, K, p))
    if start is not None:
        theta[:] = start
    status = np.full(B, RUNNING)
    iters = np.zeros(B, dtype=int)

    # each class (reference included) needs positive weight, else no interior maximum
    class_w = W @ Y
    ref_w = W.sum(axis=1) - class_w.sum(axis=1)
    empty = (class_w <= 0).any(axis=1) | (ref_w <= 0)
    status[empty] = SEPARATED

    ll, P = _evaluate(X, Y, W, theta, ridge)
    info = np.zeros((B, K * p, K * p))
    for it in range(max_iter + 1):
        act = np.flatnonzero(status == RUNNING)
        if act.size == 0:
            break
        Wa = W[act]
        G, I = _grad_info(X, XX, Y, Wa, theta[act], P[act], ridge)
        info[act] = I
        done = np.abs(G).reshape(len(act), -1).max(axis=1) < tol
        status[act[done]] = CONVERGED
        if it == max_iter:
            status[act[~done]] = MAXITER
            break
        act, G, I, Wa = act[~done], G[~done], I[~done], Wa[~done]
        if act.size == 0:
            break
        step, singular = _solve(I, G.reshape(len(act), -1))
        status[act[singular]] = SINGULAR
        keep = ~singular
        act, step, Wa = act[keep], step[keep].reshape(-1, K, p), Wa[keep]
        if act.size == 0:
            continue
        iters[act] += 1
        old = theta[act]
        old_ll = ll[act]
        scale = np.ones(len(act))
        new = old + step
        new_ll, new_P = _evaluate(X, Y, Wa, new, ridge)
        for _ in range(MAX_HALVINGS):
            # tolerate round-off sized decreases so the final polishing steps go through
            worse = ~(new_ll >= old_ll - 1e-12 * np.abs(old_ll))
            if not worse.any():
                break
            scale[worse] *= 0.5
            new[worse] = old[worse] + scale[worse, None, None] * step[worse]
            new_ll[worse], new_P[worse] = _evaluate(X, Y, Wa[worse], new[worse], ridge)
        theta[act] = new
        ll[act] = new_ll
        P[act] = new_P
        sep = np.abs(new).reshape(len(act), -1).max(axis=1) > separation_bound
        status[act[sep]] = SEPARATED
    return BatchFit(theta, status, iters, ll, info)


def _raise_for(status, what):
    if status == SEPARATED:
        raise Separation(f"{what}: coefficients diverge (complete or quasi-complete separation)")
    if status == SINGULAR:
        raise Singular(f"{what}: information matrix is not invertible")
    if status == MAXITER:
        raise NotConverged(f"{what}: no convergence within {MAX_ITER} iterations")


def _check_inputs(design, response, case_weights):
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise DimensionMismatch("design must be a 2-D matrix")
    response = np.asarray(response)
    n = design.shape[0]
    if case_weights is None:
        case_weights = np.ones(n)
    case_weights = np.asarray(case_weights, dtype=float)
    if response.shape != (n,) or case_weights.shape != (n,):
        raise DimensionMismatch("design, response and case_weights must have the same length")
    if (case_weights < 0).any() or not np.isfinite(case_weights).all():
        raise ValueError("case weights must be finite and nonnegative")
    return design, response, case_weights


def fit_logistic(design, response, case_weights=None, *, ridge=0.0, tol=TOL,
                 max_iter=MAX_ITER) -> LogitFit:
    """Weighted logistic regression of a 0/1 response.

    ``design`` must already contain the intercept column.
    """
    design, response, w = _check_inputs(design, response, case_weights)
    if not np.isin(response, (0, 1)).all():
        raise ValueError("response must be 0/1")
    res = newton_batch(design, response.reshape(-1, 1).astype(float), w[None],
                       ridge=ridge, tol=tol, max_iter=max_iter)
    _raise_for(res.status[0], "logistic fit")
    return LogitFit(
        coefficients=res.coefficients[0, 0].copy(),
        covariance=np.linalg.inv(res.information[0]),
        converged=bool(res.ok[0]),
        iterations=int(res.iterations[0]),
        log_likelihood=float(res.log_likelihood[0]),
    )


def one_hot(labels, n_classes):
    """Indicators of classes ``1..n_classes-1`` (class ``n_classes`` is reference)."""
    labels = np.asarray(labels)
    return (labels[:, None] == np.arange(1, n_classes)[None, :]).astype(float)


def fit_multinomial(design, response, case_weights=None, *, n_classes=None, ridge=0.0,
                    tol=TOL, max_iter=MAX_ITER) -> MultinomialFit:
    """Weighted multinomial logit for labels ``1..J``; ``J`` is the reference."""
    design, response, w = _check_inputs(design, response, case_weights)
    if n_classes is None:
        n_classes = int(response.max())
    if n_classes < 2 or ((response < 1) | (response > n_classes)).any():
        raise ValueError(f"labels must lie in 1..{n_classes} with at least two classes")
    res = newton_batch(design, one_hot(response, n_classes), w[None], ridge=ridge, tol=tol,
                       max_iter=max_iter)
    _raise_for(res.status[0], "multinomial fit")
    return MultinomialFit(
        coefficients=res.coefficients[0].copy(),
        covariance=np.linalg.inv(res.information[0]),
        converged=bool(res.ok[0]),
        iterations=int(res.iterations[0]),
        log_likelihood=float(res.log_likelihood[0]),
    )


def class_probabilities(coefficients, design):
    """Class probabilities for stacked coefficients.

    ``coefficients`` is (..., K, p); returns (..., n, K+1) with the
    reference class last.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    design = np.asarray(design, dtype=float)
    eta = np.matmul(design, np.swapaxes(coefficients, -1, -2))
    P = _probs(eta)
    return np.concatenate([P, 1.0 - P.sum(axis=-1, keepdims=True)], axis=-1)


def predict_proba(fit: LogitFit | MultinomialFit, design_row) -> np.ndarray:
    """Class probabilities at one design row (or each row of a matrix).

    For a :class:`LogitFit` the result is ``(P(y=0), P(y=1))``; for a
    :class:`MultinomialFit` it is ``(P(1), ..., P(J))``.
    """
    x = np.asarray(design_row, dtype=float)
    coef = np.atleast_2d(fit.coefficients)
    if x.shape[-1] != coef.shape[-1]:
        raise DimensionMismatch(
            f"design row has {x.shape[-1]} entries, model expects {coef.shape[-1]}")
    single = x.ndim == 1
    P = class_probabilities(coef, np.atleast_2d(x))
    if isinstance(fit, LogitFit):
        P = P[:, ::-1]
    return P[0] if single else P
