import math

import numpy as np
import pytest

from cookiewalk.branching import nu_exact
from cookiewalk.coins import CoinCapExceeded, CoinField, StubExhausted
from cookiewalk.env import EnvironmentLaw
from cookiewalk.stats import ks_two_sample


def test_forced_tosses():
    assert CoinField(EnvironmentLaw.single([1.0]), 1).toss(0) == 1
    assert CoinField(EnvironmentLaw.single([0.0]), 1).toss(0) == -1


def test_fair_site_success_fraction():
    f = CoinField(EnvironmentLaw.single([0.5]), 2)
    ys = np.array([f.y(0, i) for i in range(1, 100_001)])
    frac = (ys == 1).mean()
    assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / ys.size)


def test_stub_successes_consume():
    f = CoinField.from_stub({0: [1, -1, 1, 1, -1]})
    assert f.successes_before_mth_failure(0, 1) == 1
    assert f.successes_before_mth_failure(0, 1) == 2
    assert f.successes_before_mth_failure(0, 0) == 0
    assert f.consumed[0] == 5


def test_stub_failures():
    f = CoinField.from_stub({0: [1, -1, 1]})
    assert f.F(0, 1) == 0
    assert f.F(0, 2) == 1
    assert f.failures_before_mth_success(0, 0) == 0


def test_stub_exhaustion_and_validation():
    f = CoinField.from_stub({0: [1]})
    f.toss(0)
    with pytest.raises(StubExhausted):
        f.toss(0)
    with pytest.raises(ValueError):
        CoinField.from_stub({0: [2]})


def test_cap_raises():
    f = CoinField.from_stub({0: [1] * 2000}, cap=1000)
    with pytest.raises(CoinCapExceeded):
        f.successes_before_mth_failure(0, 1)


def test_counting_identity():
    f = CoinField(EnvironmentLaw.single([0.8, 0.3, 0.6]), 9)
    for site in range(20):
        s = f.successes_before_mth_failure(site, 3)
        assert f.consumed[site] == s + 3
        t = f.consumed[site]
        fl = f.failures_before_mth_success(site, 2)
        assert f.consumed[site] - t == fl + 2


def test_pure_reads_match_consuming_reads():
    law = EnvironmentLaw.single([0.7, 0.4])
    a = CoinField(law, 5)
    b = CoinField(law, 5)
    for site in range(-5, 5):
        assert a.S(site, 4) == b.successes_before_mth_failure(site, 4)
        assert a.S(site, 4) == a.S(site, 4)


def test_prob_beyond_pile_is_fair():
    f = CoinField(EnvironmentLaw.single([0.9]), 1)
    assert f.prob(3, 1) == 0.9
    assert f.prob(3, 2) == 0.5


def test_mean_SM_equals_M_plus_delta():
    law = EnvironmentLaw.single([0.5, 0.5, 0.5])
    f = CoinField(law, 12)
    s = np.array([f.S(z, 3) for z in range(100_000)])
    assert abs(s.mean() - 3) < 4 * s.std(ddof=1) / math.sqrt(s.size)


def test_mean_F1_backward():
    f = CoinField(EnvironmentLaw.single([0.75]), 13)
    x = np.array([f.F(z, 1) for z in range(100_000)])
    assert abs(x.mean() - 0.5) < 4 * x.std(ddof=1) / math.sqrt(x.size)


def test_empirical_SM_law_matches_exact_nu():
    law = EnvironmentLaw.single([0.9, 0.2, 0.7])
    f = CoinField(law, 21)
    emp = np.array([f.S(z, 3) - 3 for z in range(100_000)])
    nu = nu_exact(law)
    draws = nu.lo + np.searchsorted(nu.cdf, np.random.default_rng(0).random(100_000), side="right")
    ks = ks_two_sample(emp, draws)
    assert ks.passes(0.01)


def test_same_seed_same_streams():
    law = EnvironmentLaw(((0.5, (0.9,)), (0.5, (0.1,))))
    a, b = CoinField(law, 77), CoinField(law, 77)
    assert [a.S(z, 2) for z in range(200)] == [b.S(z, 2) for z in range(200)]
