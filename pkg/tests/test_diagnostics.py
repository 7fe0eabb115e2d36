import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import t as student

from pstrata.diagnostics import asmd, balance_report, expected_exceedances, kish_size
from pstrata.estimators import strategy_weights
from pstrata.exceptions import AllZeroWeights
from pstrata.simgen import COVARIATES, SimulationConfig, generate_replicate
from pstrata.weights import WeightedDataset

from conftest import random_trial


def null_rct_mean_exceedance(n, k, thresholds, reps, seed, known_sd=False):
    """Mean count of covariates with ASMD above each threshold in a null 1:1 trial.

    With ``known_sd`` the mean difference is standardized by the true unit SD
    instead of the pooled sample SD.
    """
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(thresholds))
    done = 0
    while done < reps:
        b = min(1000, reps - done)
        x1 = rng.standard_normal((b, k, n))
        x0 = rng.standard_normal((b, k, n))
        d = np.abs(x1.mean(-1) - x0.mean(-1))
        if not known_sd:
            d = d / np.sqrt((x1.var(-1) + x0.var(-1)) / 2)
        counts += [(d > t).sum() for t in thresholds]
        done += b
    return counts / reps


def test_expected_exceedance_worked_example():
    want = 15 * 2 * (1 - 0.5 * (1 + math.erf(0.1 / math.sqrt(0.02) / math.sqrt(2))))
    assert expected_exceedances(100, 100, 15, 0.1) == pytest.approx(want, rel=1e-12)
    assert expected_exceedances(100, 100, 15, 0.1) == pytest.approx(7.19, abs=0.01)


def test_expected_exceedance_matches_known_sd_monte_carlo():
    thresholds = (0.1, 0.25)
    mc = null_rct_mean_exceedance(100, 15, thresholds, 10_000, seed=1, known_sd=True)
    for t, m in zip(thresholds, mc):
        assert abs(expected_exceedances(100, 100, 15, t) / m - 1) < 0.02


def test_sample_asmd_exceedance_follows_t_distribution():
    # the benchmark is a normal approximation; with an estimated SD the
    # ASMD is a scaled t variable, whose heavier tail matters at 0.25
    thresholds = (0.1, 0.25)
    mc = null_rct_mean_exceedance(100, 15, thresholds, 10_000, seed=2)
    assert abs(expected_exceedances(100, 100, 15, 0.1) / mc[0] - 1) < 0.02
    exact = 15 * 2 * student.sf(0.25 / math.sqrt(0.02) * math.sqrt(99 / 100), 198)
    per_rep_sd = math.sqrt(15 * (exact / 15) * (1 - exact / 15))
    assert abs(mc[1] - exact) < 3 * per_rep_sd / math.sqrt(10_000)


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(2, 2000), st.integers(2, 2000))
def test_expected_exceedance_monotone(t1, t2, n, m):
    lo, hi = sorted((t1, t2))
    assert expected_exceedances(n, n, 5, hi) <= expected_exceedances(n, n, 5, lo)
    a, b = sorted((n, m))
    assert expected_exceedances(b, b, 5, 0.1) <= expected_exceedances(a, a, 5, 0.1)


def test_asmd_hand_values():
    assert asmd([1.0, 3.0], None, [0.0, 2.0], None) == pytest.approx(1.0)
    assert asmd([2.0, 2.0], None, [1.0, 1.0], None) == math.inf
    assert asmd([2.0, 2.0], None, [2.0, 2.0], None) == 0.0
    # weights (3, 1) on (0, 4): mean 1, variance 3
    assert asmd([0.0, 4.0], [3.0, 1.0], [1.0, 1.0], None) == 0.0
    with pytest.raises(AllZeroWeights):
        asmd([1.0], [0.0], [1.0], None)


@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(0.1, 10))
def test_asmd_symmetry_and_affine_invariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    v1, v0 = rng.standard_normal(20), rng.standard_normal(25) + 0.3
    w1, w0 = rng.uniform(0.1, 2, 20), rng.uniform(0.1, 2, 25)
    d = asmd(v1, w1, v0, w0)
    assert asmd(v0, w0, v1, w1) == pytest.approx(d, rel=1e-12)
    assert asmd(scale * v1 + shift, w1, scale * v0 + shift, w0) == pytest.approx(d, rel=1e-9)
    assert asmd(-v1, w1, -v0, w0) == pytest.approx(d, rel=1e-12)


def test_integer_weights_equal_duplication():
    rng = np.random.default_rng(3)
    v1, v0 = rng.standard_normal(15), rng.standard_normal(12)
    w1 = rng.integers(1, 4, 15)
    assert asmd(v1, w1.astype(float), v0, None) == pytest.approx(
        asmd(np.repeat(v1, w1), None, v0, None), rel=1e-12)


def test_kish_size():
    assert kish_size(np.ones(10)) == pytest.approx(10.0)
    assert kish_size([1.0, 0.0, 0.0]) == pytest.approx(1.0)
    assert kish_size(np.zeros(3)) == 0.0


def test_adjusted_balance_better_than_unadjusted():
    ds = generate_replicate(SimulationConfig(n=2000), 77).dataset
    _, wd, _ = strategy_weights(ds)
    rep = balance_report(ds, wd, covariates=("x1", "x2"))
    for s in rep.strata:
        assert s.observed_adjusted[0.1] <= s.observed_unadjusted[0.1]
        assert max(s.unadjusted) > 0.25  # selection into strata shifts x1 and x2


def test_report_schema_and_csv(tmp_path):
    ds = random_trial(40, n=200, k=3)
    _, wd, _ = strategy_weights(ds)
    rep = balance_report(ds, wd, thresholds=(0.1, 0.25, 9.9))
    js = json.loads(json.dumps(rep.to_json()))
    assert js["thresholds"] == [0.1, 0.25, 9.9]
    s = js["strata"][0]
    assert [r["covariate"] for r in s["asmd"]] == ["x1", "x2", "x3"]
    assert s["observed_exceedances"]["adjusted"]["9.9"] == 0
    assert set(s["expected_exceedances"]) == {"effective_size", "randomized_1to1"}
    p = tmp_path / "b.csv"
    rep.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "stratum,covariate,adjusted,unadjusted" and len(lines) == 1 + 2 * 3


def test_unit_weights_reproduce_raw_asmd():
    ds = random_trial(41, n=200)
    W = np.ones((len(ds), 2))
    W[ds.treated] = 0.0
    for a in (1, 2):
        W[ds.observed & (ds.stratum == a), a - 1] = 1.0
    rep = balance_report(ds, WeightedDataset(ds.ids, W, 2))
    for s in rep.strata:
        assert s.adjusted == pytest.approx(s.unadjusted, rel=1e-12)


def test_simulation_covariates_are_reported_when_requested():
    ds = generate_replicate(SimulationConfig(n=300), 1).dataset
    _, wd, _ = strategy_weights(ds)
    assert balance_report(ds, wd).strata[0].covariates == COVARIATES
