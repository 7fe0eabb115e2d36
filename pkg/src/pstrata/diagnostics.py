"""Covariate balance between the weighted pseudo-populations.

The balance metric is the absolute standardized mean difference (ASMD)
with a pooled standard deviation. Observed numbers of covariates above a
threshold are set against the number expected in a randomized trial of the
same size, where each ASMD is roughly normal with mean 0 and standard
error ``sqrt(1/n1 + 1/n0)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data_model import Dataset
from .exceptions import AllZeroWeights, DimensionMismatch
from .weights import WeightedDataset

DEFAULT_THRESHOLDS = (0.1, 0.25)


def _weighted_moments(values, weights):
    v = np.asarray(values, dtype=float)
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != v.shape:
        raise DimensionMismatch("values and weights must have the same length")
    tot = w.sum()
    if not tot > 0:
        raise AllZeroWeights("each sample needs positive total weight")
    p = w / tot
    mean = float(p @ v)
    return mean, float(p @ (v - mean) ** 2)


def asmd(values_1, weights_1, values_0, weights_0) -> float:
    """Absolute standardized mean difference of two weighted samples.

    Means and variances use normalized weights. Returns ``inf`` when both
    variances are zero but the means differ, and 0 for identical constants.
    """
    m1, v1 = _weighted_moments(values_1, weights_1)
    m0, v0 = _weighted_moments(values_0, weights_0)
    diff = abs(m1 - m0)
    pooled = math.sqrt((v1 + v0) / 2.0)
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / pooled


def expected_exceedances(n_1: float, n_0: float, num_covariates: int, threshold: float) -> float:
    """Expected count of covariates with ASMD above ``threshold`` under randomization."""
    if n_1 < 2 or n_0 < 2:
        raise ValueError("group sizes must be at least 2")
    se = math.sqrt(1.0 / n_1 + 1.0 / n_0)
    return float(num_covariates * 2.0 * norm.sf(threshold / se))


def kish_size(weights) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    s2 = float(w @ w)
    return float(w.sum() ** 2 / s2) if s2 > 0 else 0.0


@dataclass(frozen=True)
class StratumBalance:
    stratum: int
    covariates: tuple[str, ...]
    adjusted: tuple[float, ...]
    unadjusted: tuple[float, ...]
    n_treated: int  # subjects with positive weight in the treated pseudo-population
    n_effective_treated: float
    n_effective_control: float
    observed_adjusted: dict = field(default_factory=dict)  # threshold -> count
    observed_unadjusted: dict = field(default_factory=dict)
    expected_effective: dict = field(default_factory=dict)
    expected_randomized: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BalanceReport:
    thresholds: tuple[float, ...]
    strata: tuple[StratumBalance, ...]

    def to_json(self) -> dict:
        def keyed(d):
            return {repr(float(t)): d[t] for t in self.thresholds}

        out = []
        for s in self.strata:
            out.append({
                "stratum": s.stratum,
                "asmd": [{"covariate": c, "adjusted": a, "unadjusted": u}
                         for c, a, u in zip(s.covariates, s.adjusted, s.unadjusted)],
                "n_treated": s.n_treated,
                "n_effective": {"treated": s.n_effective_treated,
                                "control": s.n_effective_control},
                "observed_exceedances": {"adjusted": keyed(s.observed_adjusted),
                                         "unadjusted": keyed(s.observed_unadjusted)},
                "expected_exceedances": {"effective_size": keyed(s.expected_effective),
                                         "randomized_1to1": keyed(s.expected_randomized)},
            })
        return {"thresholds": list(self.thresholds), "strata": out}

    def write_csv(self, path):
        """Long format: one row per stratum and covariate."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stratum", "covariate", "adjusted", "unadjusted"])
            for s in self.strata:
                for c, a, u in zip(s.covariates, s.adjusted, s.unadjusted):
                    w.writerow([s.stratum, c, repr(a), repr(u)])


def _expected(n1, n0, k, thresholds):
    if n1 < 2 or n0 < 2:
        return {t: math.nan for t in thresholds}
    return {t: expected_exceedances(n1, n0, k, t) for t in thresholds}


def balance_report(ds: Dataset, wd: WeightedDataset,
                   thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                   covariates: Sequence[str] | None = None) -> BalanceReport:
    """Adjusted and unadjusted ASMD per stratum and covariate.

    Adjusted compares the treated pseudo-population of a stratum with the
    control arm weighted by its stratum weights. Unadjusted compares treated
    subjects observed in the stratum with the whole unweighted control arm.
    Expected counts are given twice: with Kish effective sizes of the two
    weighted groups, and for a 1:1 trial whose arms both have the stratum's
    treated size.
    """
    thresholds = tuple(float(t) for t in thresholds)
    names = tuple(ds.covariate_names) if covariates is None else tuple(covariates)
    X = ds.X[:, ds.covariate_index(names)]
    tr, ctl = ds.treated, ds.control
    strata = []
    for a in range(1, ds.num_strata + 1):
        w = wd.stratum(a)
        raw = ds.observed & (ds.stratum == a)
        adj = tuple(asmd(X[tr, k], w[tr], X[ctl, k], w[ctl]) for k in range(len(names)))
        unadj = tuple(asmd(X[raw, k], None, X[ctl, k], None) for k in range(len(names)))
        n_pos = int((w[tr] > 0).sum())
        n1, n0 = kish_size(w[tr]), kish_size(w[ctl])
        strata.append(StratumBalance(
            stratum=a, covariates=names, adjusted=adj, unadjusted=unadj, n_treated=n_pos,
            n_effective_treated=n1, n_effective_control=n0,
            observed_adjusted={t: sum(v > t for v in adj) for t in thresholds},
            observed_unadjusted={t: sum(v > t for v in unadj) for t in thresholds},
            expected_effective=_expected(round(n1), round(n0), len(names), thresholds),
            expected_randomized=_expected(n_pos, n_pos, len(names), thresholds),
        ))
    return BalanceReport(thresholds=thresholds, strata=tuple(strata))
