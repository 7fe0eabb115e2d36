"""Stratum-membership weights for treated subjects with missing status and for controls.

Two models are fitted on the experimental arm:

* ``A | X, B`` on treated subjects whose stratum was observed, and
* ``B | X`` on every treated subject.

A treated subject with missing stratum receives ``P(A=a | x, b)``. A control
receives the same probability averaged over ``B | X``, i.e.
``sum_b P(A=a | x, b) P(B=b | x)``, which keeps the implied ``A | X`` model
consistent with the one used in the treated arm. Treated subjects with an
observed stratum get a 0/1 indicator.

``B`` must be categorical, so the average over ``B`` is an exact finite sum.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import glm
from .data_model import Dataset
from .exceptions import DegenerateStratum, DimensionMismatch, UnknownBLevel


def _b_dummies(b, b_levels):
    b = np.asarray(b)
    return (b[:, None] == np.asarray(b_levels[1:])[None, :]).astype(float)


def design_a(X, b, b_levels, use_post_measure=True):
    """Design of the stratum model: intercept, covariates, B indicators (first level dropped)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = [np.ones((len(X), 1)), X]
    if use_post_measure and len(b_levels) > 1:
        cols.append(_b_dummies(np.broadcast_to(b, len(X)), b_levels))
    return np.hstack(cols)


def design_b(X):
    return glm.add_intercept(np.atleast_2d(np.asarray(X, dtype=float)))


@dataclass(frozen=True)
class WeightModelSet:
    model_a: glm.MultinomialFit  # A | X, B  (A | X when use_post_measure is False)
    model_b: glm.LogitFit | glm.MultinomialFit | None  # None when B has one level or is unused
    num_strata: int
    b_levels: tuple[int, ...]
    covariates: tuple[str, ...]
    use_post_measure: bool = True

    def covariate_matrix(self, ds: Dataset) -> np.ndarray:
        return ds.X[:, ds.covariate_index(self.covariates)]


def _check_treated(ds: Dataset):
    if not ds.treated.any():
        raise DegenerateStratum("no treated subjects to fit the weight models on")
    obs_strata = ds.stratum[ds.observed]
    absent = [a for a in range(1, ds.num_strata + 1) if not (obs_strata == a).any()]
    if absent:
        raise DegenerateStratum(f"strata {absent} have no treated subject with observed status")


def fit_weight_models(ds: Dataset, covariates: Sequence[str] | None = None, *,
                      use_post_measure: bool = True, ridge: float = 0.0) -> WeightModelSet:
    """Fit the stratum model on observed treated subjects and the B model on all treated.

    With ``use_post_measure=False`` the stratum model conditions on X only and
    no B model is fitted; both missing treated subjects and controls then
    get ``P(A=a | x)``. B only serves subjects with missing status, so it is
    also left out when no treated status is missing; the control weights are
    then the direct fit of ``P(A=a | x)``.
    """
    _check_treated(ds)
    use_post_measure = use_post_measure and bool((ds.treated & ds.missing).any())
    names = tuple(ds.covariate_names) if covariates is None else tuple(covariates)
    X = ds.X[:, ds.covariate_index(names)]
    b_levels = ds.b_levels
    obs = ds.observed
    model_a = glm.fit_multinomial(
        design_a(X[obs], ds.b[obs], b_levels, use_post_measure), ds.stratum[obs],
        n_classes=ds.num_strata, ridge=ridge)
    model_b = None
    if use_post_measure and len(b_levels) > 1:
        tr = ds.treated
        Xb = design_b(X[tr])
        if len(b_levels) == 2:
            model_b = glm.fit_logistic(Xb, (ds.b[tr] == b_levels[1]).astype(int), ridge=ridge)
        else:
            labels = np.searchsorted(b_levels, ds.b[tr]) + 1
            model_b = glm.fit_multinomial(Xb, labels, n_classes=len(b_levels), ridge=ridge)
    return WeightModelSet(model_a=model_a, model_b=model_b, num_strata=ds.num_strata,
                          b_levels=b_levels, covariates=names, use_post_measure=use_post_measure)


def _check_x(ms, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(ms.covariates):
        raise DimensionMismatch(f"expected {len(ms.covariates)} covariates, got {X.shape[1]}")
    return X


def missing_treated_weights(ms: WeightModelSet, X, b) -> np.ndarray:
    """Vectorised ``P(A=a | x, b)``; returns (n, J)."""
    X = _check_x(ms, X)
    b = np.broadcast_to(np.asarray(b), len(X))
    if ms.use_post_measure:
        unknown = set(np.unique(b).tolist()) - set(ms.b_levels)
        if unknown:
            raise UnknownBLevel(f"post-landmark levels {sorted(unknown)} not seen when fitting")
    return glm.predict_proba(ms.model_a, design_a(X, b, ms.b_levels, ms.use_post_measure))


def control_weights(ms: WeightModelSet, X) -> np.ndarray:
    """Vectorised ``sum_b P(A=a | x, b) P(B=b | x)``; returns (n, J)."""
    X = _check_x(ms, X)
    if not ms.use_post_measure or ms.model_b is None:
        b0 = ms.b_levels[0] if ms.b_levels else 0
        return glm.predict_proba(ms.model_a, design_a(X, b0, ms.b_levels, ms.use_post_measure))
    pb = glm.predict_proba(ms.model_b, design_b(X))  # (n, L) in b_levels order
    out = np.zeros((len(X), ms.num_strata))
    for j, lvl in enumerate(ms.b_levels):
        pa = glm.predict_proba(ms.model_a, design_a(X, lvl, ms.b_levels))
        out += pa * pb[:, j:j + 1]
    return out


def weight_missing_treated(ms: WeightModelSet, x, b) -> np.ndarray:
    """Probability vector over strata for one treated subject with missing status."""
    return missing_treated_weights(ms, np.asarray(x, dtype=float)[None, :], [b])[0]


def weight_control(ms: WeightModelSet, x) -> np.ndarray:
    """Probability vector over strata for one control subject."""
    return control_weights(ms, np.asarray(x, dtype=float)[None, :])[0]


@dataclass(frozen=True)
class WeightedDataset:
    ids: np.ndarray
    weights: np.ndarray  # (n, J); column a-1 is the weight for stratum a
    num_strata: int

    def stratum(self, a: int) -> np.ndarray:
        return self.weights[:, a - 1]

    def rows(self):
        for i, sid in enumerate(self.ids):
            for a in range(1, self.num_strata + 1):
                yield str(sid), a, float(self.weights[i, a - 1])

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "stratum_level", "weight"])
            for sid, a, wt in self.rows():
                w.writerow([sid, a, repr(wt)])


def build_weighted_dataset(ds: Dataset, ms: WeightModelSet, *,
                           max_weight: float | None = None) -> WeightedDataset:
    """Assign per-stratum weights to every subject.

    ``max_weight`` caps the modelled weights (missing treated and controls);
    it is off by default and, when used, rows no longer sum to one.
    """
    X = ms.covariate_matrix(ds)
    W = np.zeros((len(ds), ds.num_strata))
    obs = ds.observed
    W[obs, ds.stratum[obs] - 1] = 1.0
    miss = ds.treated & ds.missing
    if miss.any():
        W[miss] = missing_treated_weights(ms, X[miss], ds.b[miss])
    ctl = ds.control
    if ctl.any():
        W[ctl] = control_weights(ms, X[ctl])
    if max_weight is not None:
        modelled = ~obs
        W[modelled] = np.minimum(W[modelled], max_weight)
    W.setflags(write=False)
    return WeightedDataset(ids=ds.ids, weights=W, num_strata=ds.num_strata)


# -- batched path used by the bootstrap ---------------------------------------

def batch_weights(ds: Dataset, multiplicity, *, covariates=None, use_post_measure=True,
                  start: WeightModelSet | None = None, max_weight=None, ridge=0.0):
    """Refit both models for every row of ``multiplicity`` and return all weights.

    ``multiplicity`` is (B, n): how often each subject appears in each
    resample. Returns ``(weights, ok)`` with weights of shape (B, n, J) and
    ``ok`` flagging rows whose fits converged.
    """
    M = np.atleast_2d(np.asarray(multiplicity, dtype=float))
    names = tuple(ds.covariate_names) if covariates is None else tuple(covariates)
    X = ds.X[:, ds.covariate_index(names)]
    J = ds.num_strata
    b_levels = ds.b_levels
    Bn, n = M.shape
    miss = np.flatnonzero(ds.treated & ds.missing)
    use_post_measure = use_post_measure and miss.size > 0
    obs = np.flatnonzero(ds.observed)
    fit_a = glm.newton_batch(
        design_a(X[obs], ds.b[obs], b_levels, use_post_measure),
        glm.one_hot(ds.stratum[obs], J), M[:, obs], ridge=ridge,
        start=None if start is None else start.model_a.coefficients)
    ok = fit_a.ok.copy()
    coef_a = fit_a.coefficients

    W = np.zeros((Bn, n, J))
    W[:, obs, ds.stratum[obs] - 1] = 1.0
    if miss.size:
        W[:, miss] = glm.class_probabilities(
            coef_a, design_a(X[miss], ds.b[miss], b_levels, use_post_measure))
    ctl = np.flatnonzero(ds.control)
    if ctl.size:
        if use_post_measure and len(b_levels) > 1:
            tr = np.flatnonzero(ds.treated)
            labels = np.searchsorted(b_levels, ds.b[tr]) + 1
            L = len(b_levels)
            if L == 2:
                Yb = (labels == 2).astype(float)[:, None]
            else:
                Yb = glm.one_hot(labels, L)
            b_start = None
            if start is not None and start.model_b is not None:
                b_start = np.atleast_2d(start.model_b.coefficients)
            fit_b = glm.newton_batch(design_b(X[tr]), Yb, M[:, tr], ridge=ridge, start=b_start)
            ok &= fit_b.ok
            pb = glm.class_probabilities(fit_b.coefficients, design_b(X[ctl]))
            if L == 2:
                pb = pb[..., ::-1]
            acc = np.zeros((Bn, ctl.size, J))
            for j, lvl in enumerate(b_levels):
                pa = glm.class_probabilities(coef_a, design_a(X[ctl], lvl, b_levels))
                acc += pa * pb[..., j:j + 1]
            W[:, ctl] = acc
        else:
            b0 = b_levels[0] if b_levels else 0
            W[:, ctl] = glm.class_probabilities(
                coef_a, design_a(X[ctl], b0, b_levels, use_post_measure))
    if max_weight is not None:
        modelled = ~ds.observed
        W[:, modelled] = np.minimum(W[:, modelled], max_weight)
    return W, ok


def batch_nonmissing_probability(ds: Dataset, multiplicity, *, covariates=None, ridge=0.0):
    """``P(M=0 | x)`` for every subject under a ``M ~ X`` logistic fit on each treated resample.

    Returns ``(prob, ok)`` with prob of shape (B, n). Without any missing
    treated subject the probability is identically one.
    """
    M = np.atleast_2d(np.asarray(multiplicity, dtype=float))
    if not (ds.treated & ds.missing).any():
        return np.ones_like(M), np.ones(len(M), dtype=bool)
    names = tuple(ds.covariate_names) if covariates is None else tuple(covariates)
    X = ds.X[:, ds.covariate_index(names)]
    tr = np.flatnonzero(ds.treated)
    fit = glm.newton_batch(design_b(X[tr]), ds.missing[tr].astype(float)[:, None], M[:, tr],
                           ridge=ridge)
    p_missing = glm.class_probabilities(fit.coefficients, design_b(X))[..., 0]
    return 1.0 - p_missing, fit.ok


def fit_missingness_model(ds: Dataset, covariates: Sequence[str] | None = None, *,
                          ridge: float = 0.0) -> glm.LogitFit | None:
    """Logistic model of the missing-status flag on X over the treated arm.

    Returns ``None`` when no treated subject has a missing status.
    """
    if not (ds.treated & ds.missing).any():
        return None
    X = ds.X[:, ds.covariate_index(covariates)]
    tr = ds.treated
    return glm.fit_logistic(design_b(X[tr]), ds.missing[tr].astype(int), ridge=ridge)


def nonmissing_probability(model: glm.LogitFit | None, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model is None:
        return np.ones(len(X))
    return glm.predict_proba(model, design_b(X))[:, 0]
