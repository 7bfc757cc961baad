import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cookiewalk.env import (CookiePile, EnvironmentError_, EnvironmentLaw, SiteSampler,
                            check_ellipticity, delta, permute, reflect, sample_sites, transform)

probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6)


def mix(*parts):
    return EnvironmentLaw(tuple((w, tuple(p)) for w, p in parts))


def test_delta_examples():
    assert delta(EnvironmentLaw.single([0.5, 0.5])) == 0.0
    assert math.isclose(delta(EnvironmentLaw.single([0.9, 0.9, 0.9])), 2.4, rel_tol=1e-15)
    assert delta(mix((0.5, [0.9, 0.9]), (0.5, [0.1, 0.1]))) == pytest.approx(0.0, abs=1e-15)


def test_ellipticity_examples():
    assert check_ellipticity(EnvironmentLaw.single([0.5, 0.5]))
    assert not check_ellipticity(EnvironmentLaw.single([1.0, 0.5]))
    assert check_ellipticity(mix((0.5, [1.0, 1.0]), (0.5, [0.0, 0.0])))


def test_transform_examples():
    law = EnvironmentLaw.single([0.9, 0.1])
    assert reflect(law).components[0][1].probs == pytest.approx((0.1, 0.9))
    assert delta(reflect(law)) == -delta(law)
    swapped = transform(law, "permute", [1, 0])
    assert swapped.components[0][1].probs == (0.1, 0.9)
    assert delta(swapped) == delta(law)
    assert permute(law, [0, 1]) == law


def test_permute_rejects_non_bijection():
    law = EnvironmentLaw.single([0.9, 0.1])
    with pytest.raises(EnvironmentError_):
        permute(law, [0, 0])
    with pytest.raises(EnvironmentError_):
        transform(law, "shuffle")


def test_weights_must_sum_to_one():
    with pytest.raises(EnvironmentError_):
        mix((0.5, [0.5]), (0.4, [0.5]))
    with pytest.raises(EnvironmentError_):
        mix((1.0, [0.5]), (0.0, [0.5]))
    with pytest.raises(EnvironmentError_):
        EnvironmentLaw(())
    with pytest.raises(EnvironmentError_):
        CookiePile((1.2,))


def test_short_piles_padded_with_placebo():
    law = mix((0.5, [0.9]), (0.5, [0.2, 0.3, 0.4]))
    assert law.depth == 3
    assert law.components[0][1].probs == (0.9, 0.5, 0.5)


def test_entries_roundtrip():
    law = mix((0.25, [0.9, 0.2]), (0.75, [0.6]))
    assert EnvironmentLaw.from_entries(law.to_entries()) == law


@settings(max_examples=200, deadline=None)
@given(probs, st.randoms())
def test_delta_symmetries(ps, rnd):
    law = EnvironmentLaw.single(ps)
    assert delta(reflect(law)) == -delta(law)
    perm = list(range(law.depth))
    rnd.shuffle(perm)
    assert delta(permute(law, perm)) == delta(law)
    assert check_ellipticity(permute(law, perm)) == check_ellipticity(law)


def test_single_component_sampling():
    law = EnvironmentLaw.single([0.7, 0.2])
    piles = sample_sites(law, range(-50, 50), seed=3)
    assert set(piles.values()) == {law.components[0][1]}


def test_two_component_frequency():
    law = mix((0.5, [0.9]), (0.5, [0.1]))
    comps = SiteSampler(law, seed=8).components(0, 100_000)
    f = comps.mean()
    assert abs(f - 0.5) < 4 * math.sqrt(0.25 / comps.size)


def test_sampling_is_keyed_by_site():
    law = mix((0.3, [0.9]), (0.7, [0.1]))
    full = SiteSampler(law, seed=4).components(-100, 100)
    sub = SiteSampler(law, seed=4).components(-10, 10)
    assert np.array_equal(full[90:110], sub)
    s = SiteSampler(law, seed=4)
    assert s[17] is s[17]
    assert sample_sites(law, range(5, 6), 4)[5] == s[5]
