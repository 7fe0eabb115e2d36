"""Simulation study: data generation, true effects and the replicate runner.

Data-generating process for one trial of ``n`` subjects (1:1 allocation):

* ``X = (x1, x2) ~ N(0, I)``, noise covariates ``z1..z3 ~ N(0, I)``;
* ``B | X ~ Bernoulli(expit(g0 + g1 x1 + g2 x2))``;
* ``A | X, B ~ Bernoulli(expit(a0 + a1 x1 + a2 x2 + a3 B))``;
* ``M | X ~ Bernoulli(expit(k0 + k1 x1 + k2 x2))``, applied to treated subjects;
* binary outcomes ``logit P(Y0=1) = b00 + b1 x1 + b2 x2`` and
  ``logit P(Y1=1) = b01 + b1 x1 + b2 x2 + b3 B``; time-to-event outcomes
  exponential with those linear predictors as log rates, censored
  administratively at a fixed cutoff.

Both potential outcomes are drawn for every subject and randomization
reveals one. Stratum level 1 is ``A = 1`` and level 2 is ``A = 0``. The
latent quantities (``A`` and ``B`` of controls, missing statuses, potential
outcomes) live in :class:`TruthChannel`, which estimators never receive.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq
from scipy.special import expit

from . import rng as rng_mod
from . import survival
from .bootstrap import BootstrapConfig, bootstrap_estimate
from .data_model import Dataset, Endpoint
from .estimators import AnalysisOptions, estimate_with_strategy
from .exceptions import FitError, PStrataError

COVARIATES = ("x1", "x2", "z1", "z2", "z3")
TRUTH_SEED = 8_675_309
PILOT_SEED = 31_415_926
PILOT_SIZE = 10**6
TRUTH_CHUNK = 10**6
REPLICATE_CHUNK = 10


class Scenario(str, Enum):
    PROPOSED = "proposed"
    NOISE_COVARIATES = "noise-covariates"
    NO_PRINCIPAL_IGNORABILITY = "no-principal-ignorability"
    WEIGHT_WITHOUT_B = "weight-without-b"


def analysis_options(scenario: Scenario) -> AnalysisOptions:
    """Weight-model specification used by each scenario."""
    scenario = Scenario(scenario)
    if scenario is Scenario.NOISE_COVARIATES:
        return AnalysisOptions(covariates=COVARIATES)
    if scenario is Scenario.NO_PRINCIPAL_IGNORABILITY:
        return AnalysisOptions(covariates=("x1",))
    if scenario is Scenario.WEIGHT_WITHOUT_B:
        return AnalysisOptions(covariates=("x1", "x2"), use_post_measure=False)
    return AnalysisOptions(covariates=("x1", "x2"))


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 600
    endpoint: Endpoint = Endpoint.BINARY
    seed: int = 0
    alpha: tuple[float, ...] = (-2.0, 1.0, -2.0, 2.0)
    gamma: tuple[float, ...] = (-1.0, 1.0, 1.0)
    xi: tuple[float, ...] = (-2.0, -1.0, -3.0)
    beta_binary: tuple[float, ...] = (-2.0, 2.0, 1.0, 2.0, -4.0)
    beta_tte: tuple[float, ...] = (-2.0, -3.5, 1.0, 3.0, 4.0)
    censoring_rate_target: float = 0.20
    scenario: Scenario = Scenario.PROPOSED
    reps: int = 500
    boot: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "endpoint", Endpoint(self.endpoint))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        for name, size in (("alpha", 4), ("gamma", 3), ("xi", 3), ("beta_binary", 5),
                           ("beta_tte", 5)):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != size:
                raise ValueError(f"{name} needs {size} coefficients")
            object.__setattr__(self, name, vals)
        if self.n < 4 or self.n % 2:
            raise ValueError("n must be an even number of at least 4")
        if not 0.0 < self.censoring_rate_target < 1.0:
            raise ValueError("censoring rate must lie in (0, 1)")
        if self.reps < 1 or self.boot < 2:
            raise ValueError("need reps >= 1 and boot >= 2")

    @property
    def beta(self):
        return self.beta_binary if self.endpoint is Endpoint.BINARY else self.beta_tte

    def to_json(self) -> dict:
        d = asdict(self)
        d["endpoint"] = self.endpoint.value
        d["scenario"] = self.scenario.value
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass(frozen=True)
class TruthChannel:
    """Latent variables of a simulated trial; for oracles only."""

    stratum: np.ndarray  # 1 (A=1) or 2 (A=0), every subject
    b: np.ndarray
    missing: np.ndarray  # drawn for every subject, effective in the treated arm
    y0: np.ndarray | None = None
    y1: np.ndarray | None = None
    t0: np.ndarray | None = None  # uncensored potential event times
    t1: np.ndarray | None = None
    cutoff: float | None = None


@dataclass(frozen=True)
class SimulatedTrial:
    dataset: Dataset
    truth: TruthChannel


# -- population draws ---------------------------------------------------------

def _linear(coef, *cols):
    out = np.full(len(cols[0]), coef[0])
    for c, col in zip(coef[1:], cols):
        out = out + c * col
    return out


def _draw_population(cfg: SimulationConfig, gen: np.random.Generator, n: int):
    X = gen.standard_normal((n, 2))
    Z = gen.standard_normal((n, 3))
    x1, x2 = X[:, 0], X[:, 1]
    b = (gen.random(n) < expit(_linear(cfg.gamma, x1, x2))).astype(np.int64)
    a = gen.random(n) < expit(_linear(cfg.alpha, x1, x2, b))
    m = gen.random(n) < expit(_linear(cfg.xi, x1, x2))
    b00, b01, b1, b2, b3 = cfg.beta
    eta0 = b00 + b1 * x1 + b2 * x2
    eta1 = b01 + b1 * x1 + b2 * x2 + b3 * b
    out = dict(X=X, Z=Z, b=b, stratum=np.where(a, 1, 2), missing=m)
    if cfg.endpoint is Endpoint.BINARY:
        out["y0"] = (gen.random(n) < expit(eta0)).astype(np.int8)
        out["y1"] = (gen.random(n) < expit(eta1)).astype(np.int8)
    else:
        out["t0"] = gen.standard_exponential(n) / np.exp(eta0)
        out["t1"] = gen.standard_exponential(n) / np.exp(eta1)
    return out


def _allocate(gen: np.random.Generator, n: int) -> np.ndarray:
    arm = np.zeros(n, dtype=np.int8)
    arm[gen.permutation(n)[: n // 2]] = 1
    return arm


def generate_replicate(cfg: SimulationConfig, replicate_seed, n: int | None = None) -> SimulatedTrial:
    """Draw one trial; ``replicate_seed`` is an int or a seed tuple from :func:`rng.child`."""
    n = cfg.n if n is None else n
    gen = rng_mod.stream(replicate_seed)
    pop = _draw_population(cfg, gen, n)
    arm = _allocate(gen, n)
    tr = arm == 1
    missing = tr & pop["missing"]
    stratum = np.where(tr & ~missing, pop["stratum"], 0)
    b = np.where(tr, pop["b"], 0)
    X = np.hstack([pop["X"], pop["Z"]])
    kw = {}
    cutoff = None
    if cfg.endpoint is Endpoint.BINARY:
        kw["y"] = np.where(tr, pop["y1"], pop["y0"])
    else:
        cutoff = calibrate_censoring(cfg)
        t = np.where(tr, pop["t1"], pop["t0"])
        kw["time"] = np.minimum(t, cutoff)
        kw["event"] = t <= cutoff
    ds = Dataset.from_arrays(arm=arm, stratum=stratum, missing=missing, b=b, X=X,
                             covariate_names=COVARIATES, num_strata=2, endpoint=cfg.endpoint,
                             **kw)
    truth = TruthChannel(stratum=pop["stratum"], b=pop["b"], missing=pop["missing"],
                         y0=pop.get("y0"), y1=pop.get("y1"), t0=pop.get("t0"),
                         t1=pop.get("t1"), cutoff=cutoff)
    return SimulatedTrial(dataset=ds, truth=truth)


# -- censoring ----------------------------------------------------------------

def cutoff_from_sample(times, censoring_rate: float) -> float:
    """Administrative cutoff leaving a fraction ``censoring_rate`` of ``times`` beyond it."""
    return float(np.quantile(np.asarray(times, dtype=float), 1.0 - censoring_rate))


@lru_cache(maxsize=32)
def _pilot_cutoff(beta, gamma, alpha, xi, rate):
    cfg = SimulationConfig(endpoint=Endpoint.TIME_TO_EVENT, beta_tte=beta, gamma=gamma,
                           alpha=alpha, xi=xi, censoring_rate_target=rate)
    gen = rng_mod.stream(PILOT_SEED)
    pop = _draw_population(cfg, gen, PILOT_SIZE)
    arm = _allocate(gen, PILOT_SIZE)
    return cutoff_from_sample(np.where(arm == 1, pop["t1"], pop["t0"]), rate)


def calibrate_censoring(cfg: SimulationConfig) -> float:
    """Cutoff giving the target administrative censoring rate on a fixed pilot sample."""
    if cfg.endpoint is not Endpoint.TIME_TO_EVENT:
        raise ValueError("censoring calibration needs a time-to-event endpoint")
    return _pilot_cutoff(cfg.beta_tte, cfg.gamma, cfg.alpha, cfg.xi, cfg.censoring_rate_target)


# -- true effects -------------------------------------------------------------

def _truth_key(cfg):
    return (cfg.endpoint, cfg.beta, cfg.gamma, cfg.alpha, cfg.xi,
            cfg.censoring_rate_target if cfg.endpoint is Endpoint.TIME_TO_EVENT else None)


@lru_cache(maxsize=16)
def _truth_monte_carlo(key, n_subjects, seed):
    endpoint, beta, gamma, alpha, xi, rate = key
    cfg = SimulationConfig(endpoint=endpoint, beta_binary=beta, beta_tte=beta, gamma=gamma,
                           alpha=alpha, xi=xi, censoring_rate_target=rate or 0.2)
    cutoff = calibrate_censoring(cfg) if endpoint is Endpoint.TIME_TO_EVENT else None
    diff = {1: [], 2: []}
    count = {1: 0, 2: 0}
    times = {1: [], 2: []}
    for c, start in enumerate(range(0, n_subjects, TRUTH_CHUNK)):
        m = min(TRUTH_CHUNK, n_subjects - start)
        pop = _draw_population(cfg, rng_mod.stream(seed, c), m)
        for a in (1, 2):
            sel = pop["stratum"] == a
            count[a] += int(sel.sum())
            if cutoff is None:
                diff[a].append(float(pop["y1"][sel].sum()) - float(pop["y0"][sel].sum()))
            else:
                times[a].append((pop["t1"][sel], pop["t0"][sel]))
    out = {}
    for a in (1, 2):
        if cutoff is None:
            out[a] = math.fsum(diff[a]) / count[a]
            continue
        t1 = np.concatenate([t for t, _ in times[a]])
        t0 = np.concatenate([t for _, t in times[a]])
        t = np.concatenate([t1, t0])
        z = np.r_[np.ones(len(t1)), np.zeros(len(t0))]
        fit = survival.weighted_cox_hr(np.minimum(t, cutoff), t <= cutoff, z)
        out[a] = fit.log_hazard_ratio
    return out


def _normal_nodes(k):
    x, w = np.polynomial.hermite_e.hermegauss(k)
    return x, w / w.sum()


@lru_cache(maxsize=16)
def _truth_quadrature(key, nodes=60, grid_step=0.004):
    endpoint, beta, gamma, alpha, xi, rate = key
    x, w = _normal_nodes(nodes)
    x1, x2 = (g.ravel() for g in np.meshgrid(x, x, indexing="ij"))
    wx = np.outer(w, w).ravel()
    pb1 = expit(_linear(gamma, x1, x2))
    x1, x2 = np.r_[x1, x1], np.r_[x2, x2]
    b = np.r_[np.zeros(len(wx)), np.ones(len(wx))]
    mass = np.r_[wx * (1 - pb1), wx * pb1]
    pa1 = expit(_linear(alpha, x1, x2, b))
    b00, b01, b1, b2, b3 = beta
    eta0 = b00 + b1 * x1 + b2 * x2
    eta1 = b01 + b1 * x1 + b2 * x2 + b3 * b
    out = {}
    for a, pa in ((1, pa1), (2, 1 - pa1)):
        pi = mass * pa
        pi = pi / pi.sum()
        if endpoint is Endpoint.BINARY:
            out[a] = float(pi @ (expit(eta1) - expit(eta0)))
            continue
        cfg = SimulationConfig(endpoint=endpoint, beta_tte=beta, gamma=gamma, alpha=alpha,
                               xi=xi, censoring_rate_target=rate)
        cutoff = calibrate_censoring(cfg)
        u = np.arange(np.log(cutoff) - 40.0, np.log(cutoff) + grid_step / 2, grid_step)
        t = np.exp(u)
        S = {0: np.empty(len(u)), 1: np.empty(len(u))}
        f = {0: np.empty(len(u)), 1: np.empty(len(u))}
        for g, eta in ((0, eta0), (1, eta1)):
            lam = np.exp(eta)
            for s in range(0, len(u), 500):
                e = np.exp(-np.outer(t[s:s + 500], lam))
                S[g][s:s + 500] = e @ pi
                f[g][s:s + 500] = e @ (pi * lam)

        def score(bt):
            r = np.exp(bt) * S[1]
            return simpson(t * (f[1] - (f[1] + f[0]) * r / (r + S[0])), x=u)

        out[a] = float(brentq(score, -10.0, 10.0, xtol=1e-12))
    return out


def true_values(cfg: SimulationConfig, method: str = "monte_carlo",
                n_subjects: int = 10**7, seed: int = TRUTH_SEED) -> dict[int, float]:
    """True stratum effects of the data-generating process.

    ``monte_carlo`` evaluates the effect on a large full-knowledge sample in
    which every subject contributes both potential outcomes (rate
    difference, or a Cox fit on treatment for time-to-event). ``quadrature``
    integrates the same population quantities numerically over X and B.
    """
    key = _truth_key(cfg)
    if method == "monte_carlo":
        return dict(_truth_monte_carlo(key, int(n_subjects), int(seed)))
    if method == "quadrature":
        return dict(_truth_quadrature(key))
    raise ValueError(f"unknown truth method {method!r}")


# -- replicate runner ---------------------------------------------------------

@dataclass(frozen=True)
class ReplicateOutcome:
    index: int
    point: tuple[float, ...] | None = None
    se: tuple[float, ...] | None = None
    n_boot_failed: tuple[int, ...] | None = None
    error: str | None = None


def run_replicate(cfg: SimulationConfig, index: int) -> ReplicateOutcome:
    trial = generate_replicate(cfg, rng_mod.child(cfg.seed, index, rng_mod.DATA))
    options = analysis_options(cfg.scenario)
    boot = BootstrapConfig(n_boot=cfg.boot, seed=rng_mod.child(cfg.seed, index, rng_mod.BOOTSTRAP))
    try:
        points = [e.point for e in estimate_with_strategy(trial.dataset, options=options)]
        res = bootstrap_estimate(trial.dataset, boot, options, points=points)
    except (PStrataError, FitError) as exc:
        return ReplicateOutcome(index=index, error=type(exc).__name__)
    return ReplicateOutcome(index=index, point=tuple(points),
                            se=tuple(res[a].se for a in sorted(res)),
                            n_boot_failed=tuple(res[a].n_failed for a in sorted(res)))


def _run_chunk(cfg, start, stop):
    return [run_replicate(cfg, r) for r in range(start, stop)]


@dataclass(frozen=True)
class StratumSummary:
    stratum: int
    truth: float
    mean: float
    se: float  # empirical SD of the estimates
    see: float  # average bootstrap SE
    cp: float  # coverage of the normal 95% interval
    n_ok: int

    def __post_init__(self):
        if not 0.0 <= self.cp <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")


@dataclass(frozen=True)
class ScenarioResult:
    config: SimulationConfig
    strata: tuple[StratumSummary, ...]
    n_failed: int
    failures: dict = field(default_factory=dict)
    truth_method: str = "monte_carlo"

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "truth_method": self.truth_method,
            "strata": [asdict(s) for s in self.strata],
            "n_failed": self.n_failed,
            "failures": dict(sorted(self.failures.items())),
        }

    def write_table_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "endpoint", "n", "stratum", "true", "mean", "se", "see",
                        "cp", "n_ok"])
            c = self.config
            for s in self.strata:
                w.writerow([c.scenario.value, c.endpoint.value, c.n, s.stratum, repr(s.truth),
                            repr(s.mean), repr(s.se), repr(s.see), repr(s.cp), s.n_ok])


def _sd(values):
    m = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - m) ** 2 for v in values) / (len(values) - 1))


def summarize_replicates(cfg: SimulationConfig, outcomes, truth: dict[int, float],
                         truth_method: str = "monte_carlo", z: float = 1.959963984540054
                         ) -> ScenarioResult:
    outcomes = sorted(outcomes, key=lambda o: o.index)
    good = [o for o in outcomes if o.error is None]
    failures = {}
    for o in outcomes:
        if o.error is not None:
            failures[o.error] = failures.get(o.error, 0) + 1
    strata = []
    for j, a in enumerate(sorted(truth)):
        pts = [o.point[j] for o in good]
        ses = [o.se[j] for o in good]
        if not pts:
            strata.append(StratumSummary(a, truth[a], math.nan, math.nan, math.nan, 0.0, 0))
            continue
        cover = sum(abs(p - truth[a]) <= z * s for p, s in zip(pts, ses))
        strata.append(StratumSummary(
            stratum=a, truth=truth[a], mean=math.fsum(pts) / len(pts),
            se=_sd(pts) if len(pts) > 1 else math.nan, see=math.fsum(ses) / len(ses),
            cp=cover / len(pts), n_ok=len(pts)))
    return ScenarioResult(config=cfg, strata=tuple(strata), n_failed=len(outcomes) - len(good),
                          failures=failures, truth_method=truth_method)


def run_scenario(cfg: SimulationConfig, threads: int = 1, truth_method: str = "monte_carlo",
                 progress=None) -> ScenarioResult:
    """Run ``cfg.reps`` replicates and summarize them against the true effects.

    Replicates are split into fixed chunks; with ``threads > 1`` the chunks
    run in worker processes. Every replicate draws from its own stream, so
    the result does not depend on ``threads``.
    """
    truth = true_values(cfg, truth_method)
    if cfg.endpoint is Endpoint.TIME_TO_EVENT:
        calibrate_censoring(cfg)  # warm the cache before forking
    chunks = [(s, min(s + REPLICATE_CHUNK, cfg.reps)) for s in range(0, cfg.reps, REPLICATE_CHUNK)]
    outcomes = []
    if threads > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(threads) as pool:
            futures = [pool.submit(_run_chunk, cfg, *c) for c in chunks]
            for fut in futures:
                outcomes.extend(fut.result())
                if progress:
                    progress(len(outcomes), cfg.reps)
    else:
        for c in chunks:
            outcomes.extend(_run_chunk(cfg, *c))
            if progress:
                progress(len(outcomes), cfg.reps)
    return summarize_replicates(cfg, outcomes, truth, truth_method)


def with_overrides(cfg: SimulationConfig, **changes) -> SimulationConfig:
    return replace(cfg, **changes)


# -- synthetic demo data --------------------------------------------------------

DEMO_COVARIATES = ("age", "male", "ecog1", "liver_mets", "never_smoker", "log_ldh")


def make_ada_demo(seed: int = 2024, n: int = 800, landmark: float = 4.0) -> Dataset:
    """Synthetic antibody-status trial resembling the motivating application.

    Times are in weeks. Treated subjects carry a landmark antibody status
    (stratum 1 positive, 2 negative; about a third positive), roughly 11%
    of them have a missing status, and a later status ``b`` is recorded for
    every treated subject. A few percent of subjects have an event or are
    censored before ``landmark``. Positive status is tied to a poorer
    prognostic profile while the treatment effect is similar across strata.
    """
    gen = rng_mod.stream(seed)
    age = gen.normal(0.0, 1.0, n)
    male = (gen.random(n) < 0.6).astype(float)
    ecog1 = (gen.random(n) < 0.55).astype(float)
    liver = (gen.random(n) < 0.15).astype(float)
    never = (gen.random(n) < 0.2).astype(float)
    ldh = gen.normal(0.0, 1.0, n)
    X = np.column_stack([age, male, ecog1, liver, never, ldh])
    prog = 0.15 * age + 0.1 * male + 0.35 * ecog1 + 0.45 * liver - 0.2 * never + 0.3 * ldh
    pos = gen.random(n) < expit(-0.75 + 0.9 * prog + 0.3 * ldh)
    later = np.where(pos, gen.random(n) < 0.85, gen.random(n) < 0.12)
    arm = _allocate(gen, n)
    tr = arm == 1
    log_rate = np.log(0.006) + prog + 0.25 * pos - 0.29 * tr
    t = gen.standard_exponential(n) / np.exp(log_rate)
    follow = gen.uniform(30.0, 110.0, n)
    early_drop = gen.random(n) < 0.002
    follow = np.where(early_drop, gen.uniform(0.5, landmark, n), follow)
    time = np.round(np.minimum(t, follow), 2).clip(0.01)
    event = t <= follow
    p_miss = expit(-2.35 + 0.4 * ecog1 + 0.3 * age)
    missing = tr & ((gen.random(n) < p_miss) | (time < landmark))
    stratum = np.where(tr & ~missing, np.where(pos, 1, 2), 0)
    b = np.where(tr, later.astype(int), 0)
    return Dataset.from_arrays(ids=[f"P{i:04d}" for i in range(1, n + 1)], arm=arm,
                               stratum=stratum, missing=missing, b=b, X=np.round(X, 4),
                               covariate_names=DEMO_COVARIATES, num_strata=2,
                               endpoint=Endpoint.TIME_TO_EVENT, time=time, event=event)
