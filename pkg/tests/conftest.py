import sys

import numpy as np
import pytest
from hypothesis import settings

from pstrata.data_model import Dataset, Endpoint

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_trial(seed, n=120, endpoint="binary", missing_rate=0.3, num_strata=2, b_levels=2,
                 k=2):
    """Small random trial with every stratum and B level present among treated."""
    rng = np.random.default_rng(seed)
    for _ in range(100):
        X = rng.standard_normal((n, k))
        arm = np.zeros(n, dtype=int)
        arm[rng.permutation(n)[: n // 2]] = 1
        tr = arm == 1
        true_a = rng.integers(1, num_strata + 1, n)
        b = np.where(tr, rng.integers(0, b_levels, n), 0)
        miss = tr & (rng.random(n) < missing_rate)
        stratum = np.where(tr & ~miss, true_a, 0)
        obs = tr & ~miss
        if len(set(stratum[obs])) == num_strata and len(set(b[tr])) == b_levels:
            break
    kw = {}
    if endpoint == "binary":
        kw["y"] = (rng.random(n) < 0.4 + 0.1 * tr).astype(int)
    else:
        t = rng.exponential(1.0, n) / np.exp(0.3 * X[:, 0] - 0.2 * tr)
        c = rng.uniform(0.5, 3.0, n)
        kw["time"] = np.minimum(t, c)
        kw["event"] = t <= c
    return Dataset.from_arrays(arm=arm, stratum=stratum, missing=miss, b=b, X=X,
                               covariate_names=[f"x{i + 1}" for i in range(k)],
                               num_strata=num_strata, endpoint=Endpoint(endpoint), **kw)


@pytest.fixture
def trial():
    return random_trial


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
