"""Weighted Kaplan-Meier curves and a weighted two-group Cox model.

The Cox model has a single binary covariate (treatment), so the weighted
at-risk totals of each group at every event time do not depend on the log
hazard ratio. They are accumulated once and Newton's method then runs on
those aggregates, which makes fitting a whole batch of weight vectors
(bootstrap resamples) cheap. Tied event times use the Breslow form.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import AllZeroWeights, DimensionMismatch, MonotoneLikelihood, NoEvents

TOL = 1e-8
MAX_ITER = 100
DIVERGENCE_BOUND = 30.0

RUNNING, CONVERGED, NO_EVENTS, MONOTONE, MAXITER = range(5)


def _as_arrays(times, events, weights):
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    n = len(times)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if events.shape != (n,) or weights.shape[-1] != n:
        raise DimensionMismatch("times, events and weights must have the same length")
    if (weights < 0).any():
        raise ValueError("weights must be nonnegative")
    return times, events, weights


@dataclass(frozen=True)
class KMCurve:
    times: np.ndarray  # distinct times with positive weighted events
    survival: np.ndarray
    at_risk: np.ndarray  # weighted number at risk just before each time
    events: np.ndarray  # weighted number of events at each time

    def at(self, t):
        """Right-continuous step function S(t)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        s = np.concatenate([[1.0], self.survival])
        return s[k]

    def rows(self):
        return list(zip(self.times.tolist(), self.survival.tolist(), self.at_risk.tolist()))


def weighted_km(times, events, weights=None) -> KMCurve:
    """Product-limit estimate with weighted event and at-risk counts."""
    times, events, w = _as_arrays(times, events, weights)
    if not w.sum() > 0:
        raise AllZeroWeights("all case weights are zero")
    uniq, inv = np.unique(times, return_inverse=True)
    d = np.bincount(inv, weights=w * events, minlength=len(uniq))
    leaving = np.bincount(inv, weights=w, minlength=len(uniq))
    at_risk = np.cumsum(leaving[::-1])[::-1]
    keep = d > 0
    hazard = d[keep] / at_risk[keep]
    surv = np.cumprod(1.0 - hazard)
    return KMCurve(times=uniq[keep], survival=np.clip(surv, 0.0, 1.0), at_risk=at_risk[keep],
                   events=d[keep])


def write_km_csv(path, curves):
    """Write curves as long-format CSV.

    ``curves`` maps a label tuple, e.g. ``(stratum, arm)``, to a KMCurve.
    """
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        labels = next(iter(curves)) if curves else ()
        w.writerow([f"label{i}" for i in range(len(labels))] + ["time", "survival", "at_risk"])
        for key, curve in curves.items():
            for row in curve.rows():
                w.writerow([*key, *(repr(v) for v in row)])


@dataclass(frozen=True)
class CoxFit:
    log_hazard_ratio: float
    converged: bool
    iterations: int
    score: float
    information: float

    @property
    def hazard_ratio(self):
        return float(np.exp(self.log_hazard_ratio))

    @property
    def se(self):
        """Model-based standard error (inverse observed information)."""
        return float(1.0 / np.sqrt(self.information)) if self.information > 0 else float("inf")


class CoxBatch(NamedTuple):
    log_hazard_ratio: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    score: np.ndarray
    information: np.ndarray

    @property
    def ok(self):
        return self.status == CONVERGED


class RiskSetLayout:
    """Time ordering and tie groups shared by every weight vector of a batch."""

    def __init__(self, times, events, treatment):
        times = np.asarray(times, dtype=float)
        self.order = np.argsort(times, kind="stable")
        t = times[self.order]
        self.events = np.asarray(events, dtype=bool)[self.order]
        self.treatment = np.asarray(treatment, dtype=float)[self.order]
        if not np.isin(self.treatment, (0.0, 1.0)).all():
            raise ValueError("treatment indicator must be 0/1")
        starts = np.flatnonzero(np.r_[True, t[1:] != t[:-1]])
        has_event = np.add.reduceat(self.events.astype(np.int64), starts) > 0
        self.starts = starts
        self.event_groups = has_event

    def aggregates(self, W):
        """Per event time: weighted events (all, treated), at-risk totals per group."""
        Ws = np.atleast_2d(W)[:, self.order]
        wz = Ws * self.treatment
        we = Ws * self.events
        d = np.add.reduceat(we, self.starts, axis=1)[:, self.event_groups]
        d1 = np.add.reduceat(we * self.treatment, self.starts, axis=1)[:, self.event_groups]
        r_all = np.cumsum(Ws[:, ::-1], axis=1)[:, ::-1][:, self.starts[self.event_groups]]
        r1 = np.cumsum(wz[:, ::-1], axis=1)[:, ::-1][:, self.starts[self.event_groups]]
        return d, d1, r1, r_all - r1


def _score_info(beta, d, d1, r1, r0):
    num = np.exp(beta)[:, None] * r1
    frac = np.divide(num, num + r0, out=np.zeros_like(num), where=d > 0)
    dfrac = d * frac
    return (d1 - dfrac).sum(axis=1), (dfrac * (1.0 - frac)).sum(axis=1)


def cox_batch(times, events, treatment, W, *, layout=None, start=0.0, tol=TOL,
              max_iter=MAX_ITER) -> CoxBatch:
    """Weighted Cox fits (Breslow ties) of one treatment indicator, one per weight row.

    A row stops when its score falls below ``tol`` in absolute value, or when
    a full Newton step no longer moves the estimate at double precision
    (only accepted as converged if the score is below ``tol`` relative to
    the total event weight). The score is decreasing in the log hazard
    ratio, so Newton steps are halved until the absolute score drops, which
    is enough to guarantee convergence to the unique root. ``start`` is the
    initial log hazard ratio (scalar or one per row).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if layout is None:
        layout = RiskSetLayout(times, events, treatment)
    d, d1, r1, r0 = layout.aggregates(W)
    B = W.shape[0]
    beta = np.broadcast_to(np.asarray(start, dtype=float), (B,)).copy()
    status = np.full(B, RUNNING)
    iters = np.zeros(B, dtype=int)
    tot = d.sum(axis=1)
    tot1 = d1.sum(axis=1)
    status[~(tot > 0)] = NO_EVENTS
    status[(tot > 0) & ~((tot1 > 0) & (tot - tot1 > 1e-12 * tot))] = MONOTONE
    U = np.zeros(B)
    info = np.zeros(B)
    act = np.flatnonzero(status == RUNNING)
    if act.size:
        U[act], info[act] = _score_info(beta[act], d[act], d1[act], r1[act], r0[act])
    for it in range(max_iter + 1):
        act = np.flatnonzero(status == RUNNING)
        if act.size == 0:
            break
        done = np.abs(U[act]) < tol
        status[act[done]] = CONVERGED
        act = act[~done]
        if act.size == 0:
            break
        if it == max_iter:
            status[act] = MAXITER
            break
        sl = (d[act], d1[act], r1[act], r0[act])
        step = U[act] / info[act]
        stalled = np.abs(step) <= 1e-14 * (1.0 + np.abs(beta[act]))
        if stalled.any():
            rel_ok = np.abs(U[act[stalled]]) <= tol * np.maximum(1.0, tot[act[stalled]])
            status[act[stalled]] = np.where(rel_ok, CONVERGED, MAXITER)
        scale = np.where(stalled, 0.0, 1.0)
        new = beta[act] + scale * step
        nU, ninfo = _score_info(new, *sl)
        for _ in range(40):
            worse = np.flatnonzero((np.abs(nU) >= np.abs(U[act])) & ~stalled)
            if worse.size == 0:
                break
            scale[worse] *= 0.5
            new[worse] = beta[act[worse]] + scale[worse] * step[worse]
            wsl = tuple(x[worse] for x in sl)
            nU[worse], ninfo[worse] = _score_info(new[worse], *wsl)
        run = ~stalled
        beta[act[run]] = new[run]
        U[act[run]] = nU[run]
        info[act[run]] = ninfo[run]
        iters[act[run]] += 1
        div = np.abs(new) > DIVERGENCE_BOUND
        status[act[div & run]] = MONOTONE
    return CoxBatch(beta, status, iters, U, info)


def weighted_cox_hr(times, events, treatment_indicator, weights=None, *, tol=TOL,
                    max_iter=MAX_ITER) -> CoxFit:
    """Weighted Cox proportional-hazards fit of a single 0/1 treatment covariate."""
    times, events, w = _as_arrays(times, events, weights)
    z = np.asarray(treatment_indicator, dtype=float)
    if z.shape != times.shape:
        raise DimensionMismatch("treatment indicator must have one entry per subject")
    for g in (0.0, 1.0):
        grp = z == g
        if not w[grp].sum() > 0:
            raise NoEvents(f"group {int(g)} has no positive weight")
        if not (w[grp] * events[grp]).sum() > 0:
            raise MonotoneLikelihood(f"group {int(g)} has no weighted events")
    res = cox_batch(times, events, z, w[None], tol=tol, max_iter=max_iter)
    st = res.status[0]
    if st == NO_EVENTS:
        raise NoEvents("no weighted events")
    if st == MONOTONE:
        raise MonotoneLikelihood("partial likelihood is monotone in the log hazard ratio")
    return CoxFit(
        log_hazard_ratio=float(res.log_hazard_ratio[0]),
        converged=bool(st == CONVERGED),
        iterations=int(res.iterations[0]),
        score=float(res.score[0]),
        information=float(res.information[0]),
    )
