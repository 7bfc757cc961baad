"""Cookie piles and i.i.d. environment laws.

An environment law is a finite mixture of deterministic cookie piles: each
site independently draws pile ``j`` with probability ``weight_j``.  Piles
shorter than the common depth are padded with placebo cookies (1/2).

Piles keep their probabilities as exact rationals next to the float copies
used for sampling, so reflection is an involution and ``delta`` and the
ellipticity products are computed without rounding until the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numba as nb
import numpy as np

from . import rng

WEIGHT_TOL = 1e-12


class EnvironmentError_(ValueError):
    """Invalid cookie pile or environment law."""


@dataclass(frozen=True)
class CookiePile:
    """Right-step probabilities consumed on visits 1..M to a site."""

    probs: tuple[float, ...] = field(compare=False)
    exact: tuple[Fraction, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.probs) == 0:
            raise EnvironmentError_("a cookie pile needs at least one cookie")
        exact = []
        for p in self.probs:
            if not isinstance(p, Fraction):
                p = float(p)
                if math.isnan(p):
                    raise EnvironmentError_("cookie probability is NaN")
                p = Fraction(p)
            if not 0 <= p <= 1:
                raise EnvironmentError_(f"cookie probability {float(p)} outside [0, 1]")
            exact.append(p)
        object.__setattr__(self, "exact", tuple(exact))
        object.__setattr__(self, "probs", tuple(float(p) for p in exact))

    @property
    def M(self) -> int:
        return len(self.probs)

    def prob(self, i: int) -> float:
        """Probability of a right step on the ``i``-th visit (1-based)."""
        return self.probs[i - 1] if i <= len(self.probs) else 0.5

    def padded(self, depth: int) -> "CookiePile":
        if depth < self.M:
            raise EnvironmentError_("cannot pad a pile to a smaller depth")
        return CookiePile(self.exact + (Fraction(1, 2),) * (depth - self.M))


@dataclass(frozen=True)
class EnvironmentLaw:
    """Finite mixture ``[(weight, pile), ...]`` of cookie piles."""

    components: tuple[tuple[float, CookiePile], ...]

    def __post_init__(self):
        comps = tuple((float(w), p if isinstance(p, CookiePile) else CookiePile(p))
                      for w, p in self.components)
        if not comps:
            raise EnvironmentError_("environment law needs at least one component")
        if any(not (w > 0.0) for w, _ in comps):
            raise EnvironmentError_("mixture weights must be strictly positive")
        total = math.fsum(w for w, _ in comps)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise EnvironmentError_(f"mixture weights sum to {total!r}, not 1")
        depth = max(p.M for _, p in comps)
        comps = tuple((w, p.padded(depth)) for w, p in comps)
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, probs: Sequence[float]) -> "EnvironmentLaw":
        return cls(((1.0, CookiePile(tuple(probs))),))

    @classmethod
    def from_entries(cls, entries) -> "EnvironmentLaw":
        """Build from ``[{"weight": w, "probs": [...]}, ...]`` config entries."""
        try:
            return cls(tuple((e["weight"], CookiePile(tuple(e["probs"]))) for e in entries))
        except (KeyError, TypeError) as exc:
            raise EnvironmentError_(f"malformed environment entry: {exc}") from exc

    def to_entries(self) -> list[dict]:
        return [{"weight": w, "probs": list(p.probs)} for w, p in self.components]

    @property
    def depth(self) -> int:
        return self.components[0][1].M

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def prob_matrix(self) -> np.ndarray:
        """Array of shape ``(n_components, depth)``."""
        return np.array([p.probs for _, p in self.components], dtype=np.float64)

    @property
    def cum_weights(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c


def delta(law: EnvironmentLaw) -> float:
    """Average total drift per site, ``E sum_i (2 p_i - 1)``, rounded once."""
    return float(sum(Fraction(w) * sum(2 * p - 1 for p in pile.exact)
                     for w, pile in law.components))


def check_ellipticity(law: EnvironmentLaw) -> bool:
    right = sum(Fraction(w) * math.prod(pile.exact) for w, pile in law.components)
    left = sum(Fraction(w) * math.prod(1 - p for p in pile.exact) for w, pile in law.components)
    return right > 0 and left > 0


def reflect(law: EnvironmentLaw) -> EnvironmentLaw:
    return EnvironmentLaw(tuple((w, CookiePile(tuple(1 - p for p in pile.exact)))
                                for w, pile in law.components))


def permute(law: EnvironmentLaw, perm: Sequence[int]) -> EnvironmentLaw:
    """Reorder every pile: new cookie ``i`` is old cookie ``perm[i]`` (0-based)."""
    perm = [int(i) for i in perm]
    if sorted(perm) != list(range(law.depth)):
        raise EnvironmentError_(f"{perm} is not a permutation of 0..{law.depth - 1}")
    return EnvironmentLaw(tuple((w, CookiePile(tuple(pile.exact[i] for i in perm)))
                                for w, pile in law.components))


def transform(law: EnvironmentLaw, kind: str, perm: Sequence[int] | None = None) -> EnvironmentLaw:
    if kind == "reflect":
        return reflect(law)
    if kind == "permute":
        if perm is None:
            raise EnvironmentError_("permute needs a permutation")
        return permute(law, perm)
    raise EnvironmentError_(f"unknown transform {kind!r}")


@nb.njit(cache=True)
def site_component(env_key, cum_weights, site):
    """Mixture component of ``site``; a pure function of ``(env_key, site)``."""
    if cum_weights.shape[0] == 1:
        return 0
    u = rng.uniform(env_key, np.uint64(site), 0)
    return np.searchsorted(cum_weights, u, side="right")


@nb.njit(cache=True)
def _components(env_key, cum_weights, lo, hi):
    out = np.empty(hi - lo, dtype=np.int64)
    for i in range(hi - lo):
        out[i] = site_component(env_key, cum_weights, lo + i)
    return out


class SiteSampler:
    """Lazily materialised i.i.d. pile assignment keyed by ``(seed, site)``.

    ``sampler[z]`` returns the pile at site ``z``; the answer depends only on
    the seed and ``z``, so sub-ranges agree with full ranges.
    """

    def __init__(self, law: EnvironmentLaw, seed: int, replicate: int = 0):
        self.law = law
        self.key = np.uint64(rng.derive_key(seed, rng.ENV, replicate))
        self._cum = law.cum_weights
        self._cache: dict[int, int] = {}

    def component(self, site: int) -> int:
        c = self._cache.get(site)
        if c is None:
            c = int(site_component(self.key, self._cum, site))
            self._cache[site] = c
        return c

    def __getitem__(self, site: int) -> CookiePile:
        return self.law.components[self.component(site)][1]

    def components(self, lo: int, hi: int) -> np.ndarray:
        """Component indices for sites ``lo <= z < hi``."""
        if hi <= lo:
            raise EnvironmentError_("empty site range")
        return _components(self.key, self._cum, lo, hi)


def sample_sites(law: EnvironmentLaw, sites: range, seed: int, replicate: int = 0) -> dict[int, CookiePile]:
    if len(sites) == 0:
        raise EnvironmentError_("empty site range")
    sampler = SiteSampler(law, seed, replicate)
    return {z: sampler[z] for z in sites}
