import io
import math

import numpy as np
import pytest

from cookiewalk import rng
from cookiewalk.branching import (GEOM_HALF, MigrationLaw, backward_chains,
                                  backward_progeny_samples, exact_survival, forward_chains,
                                  forward_z_samples, munu_batch, munu_raw_samples, munu_run,
                                  munu_step, nu_exact, survival_progeny_curves, theta)
from cookiewalk.coins import CoinField
from cookiewalk.env import EnvironmentLaw, delta, permute
from cookiewalk.stats import chi_square, ks_two_sample

from conftest import law_delta3, random_law


def test_nu_placebo():
    nu = nu_exact(EnvironmentLaw.single([0.5]))
    assert nu.lo == -1
    ks = np.arange(-1, 20)
    assert np.allclose([nu[k] for k in ks], 2.0 ** -(ks + 2.0), rtol=0, atol=1e-15)


def test_nu_pile75_forward_and_backward():
    law = EnvironmentLaw.single([0.75])
    fw = nu_exact(law, "forward")
    assert (fw[-1], fw[0], fw[1]) == pytest.approx((0.25, 0.375, 0.1875), abs=1e-15)
    assert theta(fw) == pytest.approx(0.5, abs=1e-9)
    bw = nu_exact(law, "backward")
    assert bw[0] == pytest.approx(0.75, abs=1e-15)
    for k in range(1, 15):
        assert bw[k] == pytest.approx(0.25 * 2.0**-k, abs=1e-15)
    assert theta(bw) == pytest.approx(0.5, abs=1e-9)


def test_point_mass():
    nu = MigrationLaw.point_mass(0)
    assert theta(nu) == 0
    tr = munu_run(nu, 50, seed=1)
    assert not tr.values.any()
    assert tr.lifetime == 1


def test_empty_sum_rule():
    assert munu_step(2, -3, lambda n: 1 / 0) == 0
    assert munu_step(2, -2, lambda n: 1 / 0) == 0
    assert munu_step(2, 1, lambda n: n) == 3


def test_migration_law_validation():
    with pytest.raises(ValueError):
        MigrationLaw(0, np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        nu_exact(EnvironmentLaw.single([0.5]), tail_cut=1e-3)


def test_theta_identities_random_laws():
    g = np.random.default_rng(3)
    for _ in range(20):
        law = random_law(g)
        fw = nu_exact(law, "forward")
        bw = nu_exact(law, "backward")
        d = delta(law)
        assert abs(theta(fw) - d) <= 1e-9 + fw.tail_mass * 10
        assert abs(theta(bw) - (1 - d)) <= 1e-9 + bw.tail_mass * 10
        assert fw.lo >= -law.depth and fw.satisfies_assumptions(law.depth)


def test_permutation_invariance_exact():
    g = np.random.default_rng(4)
    for _ in range(20):
        law = random_law(g, max_components=2, max_depth=5)
        perm = g.permutation(law.depth)
        for d in ("forward", "backward"):
            a, b = nu_exact(law, d), nu_exact(permute(law, perm), d)
            assert a.lo == b.lo and np.array_equal(a.pmf, b.pmf)


def test_exact_survival_small_cases():
    ex = exact_survival(MigrationLaw.point_mass(0), 5)
    assert ex.u.tolist() == [1.0, 0, 0, 0, 0, 0]
    ex = exact_survival(nu_exact(EnvironmentLaw.single([0.75])), 10)
    assert ex.u[0] == 1.0 and np.all(np.diff(ex.u) <= 0)
    assert ex.leak[-1] < 1e-11


def test_batch_follows_single_runs():
    nu = nu_exact(EnvironmentLaw.single([0.6, 0.7]))
    b = munu_batch(nu, 40, 50, seed=9)
    for r in range(50):
        tr = munu_run(nu, 40, 9, r)
        assert (tr.lifetime or 41) == b.lifetimes[r]
        assert tr.progeny == b.progeny[r]


def test_stopped_trace_is_zero_after_death():
    nu = nu_exact(EnvironmentLaw.single([0.75]))
    for r in range(100):
        tr = munu_run(nu, 60, 2, r)
        if tr.lifetime is not None:
            assert not tr.stopped[tr.lifetime:].any()
            assert tr.stopped[1:tr.lifetime].all()


@pytest.mark.parametrize("p", [0.5, 0.75])
def test_survival_matches_exact_oracle(p):
    nu = nu_exact(EnvironmentLaw.single([p]))
    ex = exact_survival(nu, 10)
    b = munu_batch(nu, 10, 100_000, seed=17)
    u = b.alive[1:] / b.replicates
    se = np.sqrt(ex.u[1:] * (1 - ex.u[1:]) / b.replicates)
    assert np.all(np.abs(u - ex.u[1:]) <= 4 * se)


def test_geometric_offspring_sampler():
    key = np.uint64(rng.derive_key(1, rng.OFFSPRING))
    draws = np.array([rng.fair_negbin(key, np.uint64(i), 0, 1)[0] for i in range(1_000_000)])
    counts = np.bincount(draws)
    res = chi_square(counts, GEOM_HALF.pmf(np.arange(counts.size)))
    assert res.p_value > 0.01


def test_curves_point_mass_and_csv():
    c = survival_progeny_curves(MigrationLaw.point_mass(0), 5, 1000, seed=1)
    assert not c.u.any() and not c.v.any()
    buf = io.StringIO()
    c.to_csv(buf, "hdr")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# hdr" and lines[1] == "n,u_n,u_lo,u_hi,v_n,v_lo,v_hi"
    with pytest.raises(ValueError):
        survival_progeny_curves(MigrationLaw.point_mass(0), 5, 999, seed=1)


def test_supercritical_survival_plateaus():
    nu = nu_exact(EnvironmentLaw.single([0.875, 0.875]))
    assert theta(nu) == pytest.approx(1.5, abs=1e-9)
    c = survival_progeny_curves(nu, 400, 20_000, seed=3)
    assert c.u_lo[-1] > 0
    assert abs(c.u[199] - c.u[-1]) < 0.02


def test_forward_chain_stub_absorbed():
    f = CoinField.from_stub({1: [-1], 0: [], 2: []})
    fc = forward_chains(f, 0, walk_horizon=1)
    assert fc.finite and fc.U == [1, 0]
    assert fc.V[:3] == [1, 0, 0]


@pytest.mark.parametrize("probs", [[0.5], [0.75]])
def test_forward_coupling(probs):
    law = EnvironmentLaw.single(probs)
    for r in range(500):
        fc = forward_chains(CoinField(law, 8, r), 0, walk_horizon=5000)
        if fc.finite:
            assert fc.U == fc.V[: len(fc.U)]
            assert not any(fc.V[len(fc.U):])
        else:
            assert all(u <= v for u, v in zip(fc.U, fc.V))


def test_forward_decomposition_law():
    law = EnvironmentLaw.single([0.9, 0.2, 0.6])
    a = forward_z_samples(law, 10, 100_000, seed=5)
    b = munu_raw_samples(nu_exact(law), 10, 100_000, seed=6)
    assert ks_two_sample(a, b).passes(0.01)


def test_forward_W_Z_on_field():
    law = EnvironmentLaw.single([0.8, 0.3])
    fc = forward_chains(CoinField(law, 3), 6, walk_horizon=100)
    assert fc.W[0] == 0 and fc.Z[0] == 0
    assert fc.Z[5] == forward_z_samples(law, 5, 1, seed=3)[0]


def test_backward_stub_immediate_success():
    f = CoinField.from_stub({k: [1, 1, 1] for k in range(6)})
    bc = backward_chains(f, 5)
    assert bc.V == [0] * 6
    assert bc.lifetime == 1


def test_backward_stopped_copy():
    law = EnvironmentLaw.single([0.6])
    for r in range(50):
        bc = backward_chains(CoinField(law, 4, r), 40)
        if bc.lifetime is not None:
            assert not any(bc.V_stopped[bc.lifetime:])


def test_backward_progeny_matches_chain():
    law = law_delta3()
    s = backward_progeny_samples(law, 20, seed=7)
    for r in range(20):
        bc = backward_chains(CoinField(law, 7, r), 200)
        assert bc.lifetime is not None
        assert sum(bc.V_stopped) == s[r]


def test_backward_progeny_mean_stabilizes():
    s = backward_progeny_samples(law_delta3(), 20_000, seed=2)
    assert (s >= 0).all()
    a, b = s[:10_000].mean(), s[10_000:].mean()
    se = s.std() / math.sqrt(10_000)
    assert abs(a - b) < 5 * se
