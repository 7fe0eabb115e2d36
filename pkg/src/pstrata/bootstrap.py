"""Nonparametric bootstrap for the stratum effects.

Each replicate resamples subjects with replacement within each randomized
arm, refits every weight model and recomputes the effects. A resample is
represented by per-subject multiplicities, which the weighted fitting code
treats exactly like duplicated rows; resamples are processed in fixed-size
chunks through the batched fitting path.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import rng as rng_mod
from .data_model import Dataset
from .estimators import (
    AnalysisOptions,
    EffectBatch,
    EffectType,
    StratumEstimate,
    Strategy,
    estimate_with_strategy,
)
from .exceptions import TooManyFailures

CHUNK = 100
MAX_FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class BootstrapResult:
    stratum: int
    estimates: np.ndarray  # successful replicates only
    se: float
    ci: tuple[float, float]
    n_failed: int

    @property
    def n_boot(self):
        return len(self.estimates) + self.n_failed


@dataclass(frozen=True)
class BootstrapConfig:
    n_boot: int = 1000
    seed: int | tuple = 0
    strategy: Strategy = Strategy()
    effect_type: EffectType | None = None
    ci: str = "normal"  # or "percentile"
    level: float = 0.95
    threads: int = 1

    def __post_init__(self):
        if self.n_boot < 2:
            raise ValueError("need at least two bootstrap replicates")
        if self.ci not in ("normal", "percentile"):
            raise ValueError(f"unknown CI type {self.ci!r}")


def resample_multiplicity(arm, gen: np.random.Generator) -> np.ndarray:
    """Multiplicities of one resample drawn with replacement within each arm."""
    arm = np.asarray(arm)
    counts = np.zeros(len(arm))
    for g in (0, 1):
        idx = np.flatnonzero(arm == g)
        if idx.size:
            counts[idx] = np.bincount(gen.integers(0, idx.size, idx.size), minlength=idx.size)
    return counts


def multiplicities(arm, seed, start: int, stop: int) -> np.ndarray:
    """Multiplicity rows for replicates ``start..stop-1`` (each on its own stream)."""
    return np.stack([resample_multiplicity(arm, rng_mod.stream(seed, k))
                     for k in range(start, stop)])


def _interval(point, reps, se, ci, level):
    if ci == "percentile":
        lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
        return float(min(lo, point)), float(max(hi, point))
    z = norm.ppf((1 + level) / 2)
    return float(point - z * se), float(point + z * se)


def run_replicates(ds: Dataset, config: BootstrapConfig,
                   options: AnalysisOptions = AnalysisOptions()):
    """Raw replicate estimates ``(B, J)`` with NaN marking failed replicates."""
    batch = EffectBatch(ds, config.strategy, config.effect_type, options)
    chunks = [(s, min(s + CHUNK, config.n_boot)) for s in range(0, config.n_boot, CHUNK)]

    def work(bounds):
        est, ok = batch(multiplicities(ds.arm, config.seed, *bounds))
        return np.where(ok, est, np.nan)

    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.vstack(parts)


def summarize(points, reps, config: BootstrapConfig) -> dict[int, BootstrapResult]:
    out = {}
    for j, point in enumerate(points):
        col = reps[:, j]
        good = col[np.isfinite(col)]
        n_failed = int(len(col) - len(good))
        if n_failed > MAX_FAILURE_FRACTION * len(col) or len(good) < 2:
            raise TooManyFailures(
                f"stratum {j + 1}: {n_failed} of {len(col)} bootstrap replicates failed")
        se = float(np.std(good, ddof=1))
        out[j + 1] = BootstrapResult(stratum=j + 1, estimates=good, se=se,
                                     ci=_interval(point, good, se, config.ci, config.level),
                                     n_failed=n_failed)
    return out


def bootstrap_estimate(ds: Dataset, config: BootstrapConfig = BootstrapConfig(),
                       options: AnalysisOptions = AnalysisOptions(),
                       points=None) -> dict[int, BootstrapResult]:
    """Bootstrap SE and CI for every stratum.

    ``points`` are the full-sample estimates the CI is centred on; they are
    computed when not given.
    """
    if points is None:
        points = [e.point for e in estimate_with_strategy(ds, config.strategy,
                                                          config.effect_type, options)]
    return summarize(np.asarray(points, dtype=float), run_replicates(ds, config, options), config)


def estimate_with_inference(ds: Dataset, config: BootstrapConfig = BootstrapConfig(),
                            options: AnalysisOptions = AnalysisOptions()) -> list[StratumEstimate]:
    """Point estimates plus bootstrap SE and CI, one record per stratum."""
    base = estimate_with_strategy(ds, config.strategy, config.effect_type, options)
    boot = bootstrap_estimate(ds, config, options, points=[e.point for e in base])
    out = []
    for e in base:
        b = boot[e.stratum]
        out.append(StratumEstimate(
            stratum=e.stratum, effect_type=e.effect_type, point=e.point, se=b.se,
            ci_low=b.ci[0], ci_high=b.ci[1], n_eff_treated=e.n_eff_treated,
            n_eff_control=e.n_eff_control, strategy=e.strategy,
            extra={"n_boot": b.n_boot, "n_failed": b.n_failed, "ci_type": config.ci}))
    return out
