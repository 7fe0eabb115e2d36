"""Stratum-specific treatment effects from weighted pseudo-populations.

For stratum ``a`` the treated pseudo-population is every treated subject
weighted by its stratum-``a`` weight (1 for observed members of ``a``, the
model probability for subjects with missing status, 0 otherwise); the
control pseudo-population is the whole control arm weighted the same way.
The effect is a rate difference for binary outcomes and a Cox log hazard
ratio for time-to-event outcomes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import survival
from .data_model import Dataset, Endpoint
from .exceptions import EmptyPseudoPopulation
from .weights import (
    WeightedDataset,
    batch_nonmissing_probability,
    batch_weights,
    build_weighted_dataset,
    fit_missingness_model,
    fit_weight_models,
    nonmissing_probability,
)


class EffectType(str, Enum):
    RATE_DIFFERENCE = "rate_difference"
    LOG_HAZARD_RATIO = "log_hazard_ratio"

    @classmethod
    def for_endpoint(cls, endpoint: Endpoint) -> "EffectType":
        if Endpoint(endpoint) is Endpoint.BINARY:
            return cls.RATE_DIFFERENCE
        return cls.LOG_HAZARD_RATIO


@dataclass(frozen=True)
class Strategy:
    """How treated subjects with missing stratum status are handled.

    ``proposed``
        model-based weights for missing treated subjects.
    ``impute``
        every missing status is set to ``impute_to``; the fully observed
        weighting then applies.
    ``complete_case``
        missing treated subjects are dropped and controls are additionally
        weighted by their modelled probability of an observed status.
    """

    kind: str = "proposed"
    impute_to: int | None = None

    def __post_init__(self):
        if self.kind not in ("proposed", "impute", "complete_case"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if (self.kind == "impute") != (self.impute_to is not None):
            raise ValueError("impute_to is required for, and only for, the impute strategy")

    @classmethod
    def parse(cls, text: str, labels: Sequence[str] = ()) -> "Strategy":
        """Parse ``proposed``, ``complete-case`` or ``impute:<level|label>``."""
        text = text.strip().lower()
        if text == "proposed":
            return cls()
        if text in ("complete-case", "complete_case"):
            return cls("complete_case")
        if text.startswith("impute:"):
            target = text.split(":", 1)[1]
            names = [s.lower() for s in labels]
            if target in names:
                return cls("impute", names.index(target) + 1)
            try:
                return cls("impute", int(target))
            except ValueError:
                raise ValueError(f"unknown stratum {target!r} in strategy {text!r}") from None
        raise ValueError(f"unknown strategy {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "impute":
            return f"impute:{self.impute_to}"
        return self.kind.replace("_", "-")


@dataclass(frozen=True)
class AnalysisOptions:
    covariates: tuple[str, ...] | None = None
    use_post_measure: bool = True
    max_weight: float | None = None
    ridge: float = 0.0


@dataclass(frozen=True)
class StratumEstimate:
    stratum: int
    effect_type: EffectType
    point: float
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    n_eff_treated: float = 0.0
    n_eff_control: float = 0.0
    strategy: str = "proposed"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ci_low is not None and not (self.ci_low <= self.point <= self.ci_high):
            raise ValueError("confidence interval must contain the point estimate")

    def to_json(self) -> dict:
        d = {
            "stratum": self.stratum,
            "effect_type": EffectType(self.effect_type).value,
            "point": self.point,
            "se": self.se,
            "ci": None if self.ci_low is None else [self.ci_low, self.ci_high],
            "n_eff": {"treated": self.n_eff_treated, "control": self.n_eff_control},
            "strategy": self.strategy,
        }
        d.update(self.extra)
        return d


def impute_missing(ds: Dataset, stratum: int) -> Dataset:
    if not 1 <= stratum <= ds.num_strata:
        raise ValueError(f"imputation target must lie in 1..{ds.num_strata}")
    miss = ds.treated & ds.missing
    s = ds.stratum.copy()
    s[miss] = stratum
    return ds.replace(stratum=s, missing=np.zeros(len(ds), dtype=bool))


def strategy_weights(ds: Dataset, strategy: Strategy = Strategy(),
                     options: AnalysisOptions = AnalysisOptions()):
    """Dataset actually analysed under ``strategy`` and its per-stratum weights."""
    kw = dict(use_post_measure=options.use_post_measure, ridge=options.ridge)
    if strategy.kind == "impute":
        ds = impute_missing(ds, strategy.impute_to)
    ms = fit_weight_models(ds, options.covariates, **kw)
    wd = build_weighted_dataset(ds, ms, max_weight=options.max_weight)
    if strategy.kind == "complete_case":
        W = wd.weights.copy()
        W[ds.treated & ds.missing] = 0.0
        ctl = ds.control
        mm = fit_missingness_model(ds, options.covariates, ridge=options.ridge)
        W[ctl] *= nonmissing_probability(mm, ms.covariate_matrix(ds)[ctl])[:, None]
        wd = WeightedDataset(ids=wd.ids, weights=W, num_strata=wd.num_strata)
    return ds, wd, ms


def _pseudo_populations(ds: Dataset, w_a):
    return np.where(ds.treated, w_a, 0.0), np.where(ds.control, w_a, 0.0)


def estimate_stratum_effect(ds: Dataset, wd: WeightedDataset, a: int,
                            kind: EffectType | None = None, *,
                            strategy: str = "proposed") -> StratumEstimate:
    """Point estimate of the stratum-``a`` effect from precomputed weights."""
    kind = EffectType.for_endpoint(ds.endpoint) if kind is None else EffectType(kind)
    tw, cw = _pseudo_populations(ds, wd.stratum(a))
    st, sc = tw.sum(), cw.sum()
    if not (st > 0 and sc > 0):
        raise EmptyPseudoPopulation(f"stratum {a}: a pseudo-population has zero total weight")
    if kind is EffectType.RATE_DIFFERENCE:
        if ds.endpoint is not Endpoint.BINARY:
            raise ValueError("rate difference needs a binary endpoint")
        point = float(tw @ ds.y / st - cw @ ds.y / sc)
    else:
        if ds.endpoint is not Endpoint.TIME_TO_EVENT:
            raise ValueError("log hazard ratio needs a time-to-event endpoint")
        fit = survival.weighted_cox_hr(ds.time, ds.event, ds.arm, tw + cw)
        point = fit.log_hazard_ratio
    return StratumEstimate(stratum=a, effect_type=kind, point=point, n_eff_treated=float(st),
                           n_eff_control=float(sc), strategy=strategy)


def estimate_with_strategy(ds: Dataset, strategy: Strategy = Strategy(),
                           kind: EffectType | None = None,
                           options: AnalysisOptions = AnalysisOptions()) -> list[StratumEstimate]:
    """Point estimates for every stratum under one missing-status strategy."""
    used, wd, _ = strategy_weights(ds, strategy, options)
    return [estimate_stratum_effect(used, wd, a, kind, strategy=strategy.label)
            for a in range(1, ds.num_strata + 1)]


# -- batched path ------------------------------------------------------------

class EffectBatch:
    """Effects of every stratum for a stack of resample multiplicities.

    Holds per-dataset preprocessing (analysed dataset, risk-set layout,
    full-sample fits for warm starts) so repeated calls stay cheap.
    """

    def __init__(self, ds: Dataset, strategy: Strategy = Strategy(),
                 kind: EffectType | None = None, options: AnalysisOptions = AnalysisOptions()):
        self.kind = EffectType.for_endpoint(ds.endpoint) if kind is None else EffectType(kind)
        self.strategy = strategy
        self.options = options
        self.source = ds
        self.ds, wd, self.start = strategy_weights(ds, strategy, options)
        self.layout = None
        self.cox_start = np.zeros(ds.num_strata)
        if self.kind is EffectType.LOG_HAZARD_RATIO:
            self.layout = survival.RiskSetLayout(ds.time, ds.event, ds.arm)
            for a in range(ds.num_strata):
                res = survival.cox_batch(ds.time, ds.event, ds.arm, wd.weights[:, a],
                                         layout=self.layout)
                if res.ok[0]:
                    self.cox_start[a] = res.log_hazard_ratio[0]

    def __call__(self, multiplicity):
        """Return ``(estimates, ok)``, both of shape (B, J)."""
        M = np.atleast_2d(np.asarray(multiplicity, dtype=float))
        ds, opt = self.ds, self.options
        W, ok = batch_weights(ds, M, covariates=opt.covariates,
                              use_post_measure=opt.use_post_measure, start=self.start,
                              max_weight=opt.max_weight, ridge=opt.ridge)
        if self.strategy.kind == "complete_case":
            W[:, ds.treated & ds.missing] = 0.0
            pm, ok_m = batch_nonmissing_probability(ds, M, covariates=opt.covariates,
                                                    ridge=opt.ridge)
            ctl = ds.control
            W[:, ctl] *= pm[:, ctl, None]
            ok &= ok_m
        J = ds.num_strata
        est = np.full((len(M), J), np.nan)
        good = np.zeros((len(M), J), dtype=bool)
        treated = ds.treated.astype(float)
        control = ds.control.astype(float)
        for a in range(J):
            eff = M * W[:, :, a]
            tw, cw = eff * treated, eff * control
            st, sc = tw.sum(axis=1), cw.sum(axis=1)
            nonempty = (st > 0) & (sc > 0)
            if self.kind is EffectType.RATE_DIFFERENCE:
                with np.errstate(invalid="ignore", divide="ignore"):
                    est[:, a] = tw @ ds.y / st - cw @ ds.y / sc
                good[:, a] = ok & nonempty
            else:
                res = survival.cox_batch(ds.time, ds.event, ds.arm, eff, layout=self.layout,
                                         start=self.cox_start[a])
                est[:, a] = res.log_hazard_ratio
                good[:, a] = ok & nonempty & res.ok
        est[~good] = np.nan
        return est, good


def result_dict(estimates: Sequence[StratumEstimate]) -> list[dict]:
    return [e.to_json() for e in estimates]


def options_dict(options: AnalysisOptions) -> dict:
    d = asdict(options)
    if d["covariates"] is not None:
        d["covariates"] = list(d["covariates"])
    return d
