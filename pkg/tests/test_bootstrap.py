import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pstrata import rng as rng_mod
from pstrata.bootstrap import (
    BootstrapConfig,
    bootstrap_estimate,
    estimate_with_inference,
    multiplicities,
    resample_multiplicity,
    run_replicates,
    summarize,
)
from pstrata.estimators import Strategy, estimate_with_strategy
from pstrata.exceptions import TooManyFailures

from conftest import random_trial


@given(st.integers(0, 10_000))
def test_multiplicities_preserve_arm_sizes(seed):
    arm = np.random.default_rng(seed).integers(0, 2, 50)
    m = resample_multiplicity(arm, rng_mod.stream(seed))
    assert m.sum() == len(arm)
    assert m[arm == 1].sum() == (arm == 1).sum()
    assert (m >= 0).all() and np.array_equal(m, np.round(m))


@pytest.mark.parametrize("endpoint", ["binary", "tte"])
def test_multiplicity_equals_physical_resample(endpoint):
    ds = random_trial(30, n=150, endpoint=endpoint)
    cfg = BootstrapConfig(n_boot=5, seed=3)
    reps = run_replicates(ds, cfg)
    M = multiplicities(ds.arm, cfg.seed, 0, 5)
    for k in range(5):
        idx = np.repeat(np.arange(len(ds)), M[k].astype(int))
        physical = [e.point for e in estimate_with_strategy(ds.take(idx))]
        assert np.allclose(reps[k], physical, rtol=0, atol=1e-8)


def test_same_seed_is_bit_identical_and_thread_invariant():
    ds = random_trial(31, n=150, endpoint="tte")
    a = run_replicates(ds, BootstrapConfig(n_boot=250, seed=7))
    b = run_replicates(ds, BootstrapConfig(n_boot=250, seed=7))
    c = run_replicates(ds, BootstrapConfig(n_boot=250, seed=7, threads=3))
    assert np.array_equal(a, b, equal_nan=True)
    assert np.array_equal(a, c, equal_nan=True)
    d = run_replicates(ds, BootstrapConfig(n_boot=250, seed=8))
    assert not np.array_equal(a, d, equal_nan=True)


def test_replicate_streams_do_not_depend_on_n_boot():
    ds = random_trial(32)
    a = run_replicates(ds, BootstrapConfig(n_boot=120, seed=(4, 1)))
    b = run_replicates(ds, BootstrapConfig(n_boot=250, seed=(4, 1)))
    assert np.array_equal(a, b[:120], equal_nan=True)


def test_constant_estimate_has_zero_se():
    cfg = BootstrapConfig(n_boot=50)
    out = summarize(np.array([0.3]), np.full((50, 1), 0.3), cfg)
    assert out[1].se == pytest.approx(0.0, abs=1e-15)
    assert out[1].ci == pytest.approx((0.3, 0.3))


def test_failure_accounting():
    cfg = BootstrapConfig(n_boot=100)
    reps = np.random.default_rng(0).normal(size=(100, 2))
    reps[:7, 0] = np.nan
    out = summarize(np.zeros(2), reps, cfg)
    assert out[1].n_failed == 7 and len(out[1].estimates) == 93 and out[1].n_boot == 100
    reps[:11, 1] = np.nan
    with pytest.raises(TooManyFailures):
        summarize(np.zeros(2), reps, cfg)


def test_normal_and_percentile_intervals():
    reps = np.random.default_rng(1).normal(0.0, 2.0, (4000, 1))
    n = summarize(np.zeros(1), reps, BootstrapConfig(n_boot=4000))[1]
    p = summarize(np.zeros(1), reps, BootstrapConfig(n_boot=4000, ci="percentile"))[1]
    assert n.se == pytest.approx(2.0, rel=0.05)
    assert n.ci[1] == pytest.approx(1.959964 * n.se, rel=1e-6)
    assert p.ci[0] == pytest.approx(-3.92, rel=0.08) and p.ci[1] == pytest.approx(3.92, rel=0.08)


def test_se_shrinks_with_sample_size():
    se = {}
    for n in (200, 1600):
        ds = random_trial(33, n=n)
        se[n] = bootstrap_estimate(ds, BootstrapConfig(n_boot=200, seed=2))[1].se
    assert 2.0 < se[200] / se[1600] < 4.0  # sqrt(8) = 2.83


@pytest.mark.parametrize("strategy", [Strategy(), Strategy("complete_case")],
                         ids=lambda s: s.label)
def test_estimate_with_inference_records(strategy):
    ds = random_trial(34, n=200)
    out = estimate_with_inference(ds, BootstrapConfig(n_boot=100, seed=5, strategy=strategy))
    assert [e.stratum for e in out] == [1, 2]
    for e in out:
        assert e.ci_low <= e.point <= e.ci_high and e.se > 0
        assert e.extra["n_boot"] == 100 and e.strategy == strategy.label


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(n_boot=1)
    with pytest.raises(ValueError):
        BootstrapConfig(ci="bca")
