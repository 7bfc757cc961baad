"""Per-site coin streams and their success/failure counting functionals.

The ``i``-th coin at site ``z`` is a success (+1) with the probability of
the ``i``-th cookie at ``z`` and 1/2 beyond the pile.  A :class:`CoinField`
exposes the streams two ways:

* consuming reads (:meth:`CoinField.toss` and the ``*_before_*`` counters),
  which advance a per-site cursor, and
* pure reads from the start of a stream (:meth:`CoinField.S`,
  :meth:`CoinField.F`), used by the branching chains so they see exactly the
  coins the walk sees.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Mapping, Sequence

import numba as nb
import numpy as np

from . import rng
from .env import EnvironmentLaw, site_component

DEFAULT_CAP = 10**9


class CoinCapExceeded(RuntimeError):
    """A counting functional needed more tosses than the hard cap allows."""


class StubExhausted(IndexError):
    """A stub stream ran out of scripted tosses."""


@nb.njit(cache=True)
def coin(env_key, coin_key, cum, P, site, i):
    """The coin ``Y_{i+1}`` at ``site`` (``i`` is 0-based): +1 or -1."""
    c = site_component(env_key, cum, site)
    p = P[c, i] if i < P.shape[1] else 0.5
    return 1 if rng.uniform(coin_key, np.uint64(site), i) < p else -1


@nb.njit(cache=True)
def count_until(env_key, coin_key, cum, P, site, start, m, stop_on, cap):
    """Count tosses opposite to ``stop_on`` before the ``m``-th ``stop_on`` toss.

    Reads indices ``start, start+1, ...``.  Returns ``(count, next_index)``;
    ``count == -1`` signals that ``cap`` tosses were used without finishing.
    """
    c = site_component(env_key, cum, site)
    M = P.shape[1]
    s = np.uint64(site)
    i = start
    count = 0
    while m > 0:
        if i - start >= cap:
            return -1, i
        p = P[c, i] if i < M else 0.5
        y = 1 if rng.uniform(coin_key, s, i) < p else -1
        i += 1
        if y == stop_on:
            m -= 1
        else:
            count += 1
    return count, i


class CoinField:
    """Coin streams ``Y_i^(k)`` over all sites, keyed by ``(seed, site, index)``.

    Build with ``CoinField(law, seed, replicate)`` or, for hand-checked unit
    tests, ``CoinField.from_stub({site: [+1, -1, ...]})``.
    """

    def __init__(self, law: EnvironmentLaw, seed: int, replicate: int = 0, cap: int = DEFAULT_CAP):
        self.law = law
        self.seed = seed
        self.replicate = replicate
        self.cap = cap
        self.env_key = np.uint64(rng.derive_key(seed, rng.ENV, replicate))
        self.coin_key = np.uint64(rng.derive_key(seed, rng.COINS, replicate))
        self._cum = law.cum_weights
        self._P = law.prob_matrix
        self._stub: dict[int, list[int]] | None = None
        self.consumed: defaultdict[int, int] = defaultdict(int)

    @classmethod
    def from_stub(cls, streams: Mapping[int, Sequence[int]], cap: int = DEFAULT_CAP) -> "CoinField":
        field = cls.__new__(cls)
        field.law = None
        field.seed = None
        field.replicate = None
        field.cap = cap
        field._stub = {}
        for site, ys in streams.items():
            ys = [int(y) for y in ys]
            if any(y not in (1, -1) for y in ys):
                raise ValueError("stub tosses must be +1 or -1")
            field._stub[int(site)] = ys
        field.consumed = defaultdict(int)
        return field

    @property
    def is_stub(self) -> bool:
        return self._stub is not None

    @property
    def depth(self) -> int:
        return 0 if self.is_stub else self.law.depth

    def prob(self, site: int, i: int) -> float:
        """Success probability of the ``i``-th (1-based) toss at ``site``."""
        if self.is_stub:
            raise TypeError("stub fields have no probabilities")
        c = site_component(self.env_key, self._cum, site)
        return float(self._P[c, i - 1]) if i <= self._P.shape[1] else 0.5

    def y(self, site: int, i: int) -> int:
        """``Y_i`` at ``site`` (1-based ``i``), without consuming it."""
        if self.is_stub:
            ys = self._stub.get(site, ())
            if i > len(ys):
                raise StubExhausted(f"stub stream at site {site} has only {len(ys)} tosses")
            return ys[i - 1]
        return int(coin(self.env_key, self.coin_key, self._cum, self._P, site, i - 1))

    def toss(self, site: int) -> int:
        self.consumed[site] += 1
        return self.y(site, self.consumed[site])

    def _count(self, site: int, start: int, m: int, stop_on: int) -> tuple[int, int]:
        if m < 0:
            raise ValueError("m must be nonnegative")
        if m == 0:
            return 0, start
        if self.is_stub:
            i, count = start, 0
            while m > 0:
                if i - start >= self.cap:
                    raise CoinCapExceeded(f"more than {self.cap} tosses at site {site}")
                i += 1
                if self.y(site, i) == stop_on:
                    m -= 1
                else:
                    count += 1
            return count, i
        count, nxt = count_until(self.env_key, self.coin_key, self._cum, self._P,
                                 site, start, m, stop_on, self.cap)
        if count < 0:
            raise CoinCapExceeded(f"more than {self.cap} tosses at site {site}")
        return int(count), int(nxt)

    def successes_before_mth_failure(self, site: int, m: int) -> int:
        """Successes before the ``m``-th failure, consuming from the cursor."""
        count, nxt = self._count(site, self.consumed[site], m, -1)
        self.consumed[site] = nxt
        return count

    def failures_before_mth_success(self, site: int, m: int) -> int:
        count, nxt = self._count(site, self.consumed[site], m, 1)
        self.consumed[site] = nxt
        return count

    def S(self, site: int, m: int) -> int:
        """``S_m`` at ``site`` counted from the first toss (non-consuming)."""
        return self._count(site, 0, m, -1)[0]

    def F(self, site: int, m: int) -> int:
        """``F_m`` at ``site`` counted from the first toss (non-consuming)."""
        return self._count(site, 0, m, 1)[0]
