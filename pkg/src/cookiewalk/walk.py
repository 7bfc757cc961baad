"""Excited random walk paths realised from a coin field.

Step ``n`` at site ``x`` uses coin number ``#{i <= n : X_i = x}`` of site
``x``, so the first visit to a site eats its first cookie.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numba as nb
import numpy as np

from . import rng
from .coins import CoinField
from .env import site_component


class NotAnExcursion(ValueError):
    pass


@dataclass(frozen=True)
class WalkPath:
    start: int
    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.ndim != 1 or pos.size == 0:
            raise ValueError("a path needs at least X_0")
        if pos[0] != self.start:
            raise ValueError("X_0 must equal start")
        if pos.size > 1 and not np.all(np.abs(np.diff(pos)) == 1):
            raise ValueError("a nearest-neighbour path moves by +-1 each step")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @classmethod
    def of(cls, xs: Iterable[int]) -> "WalkPath":
        xs = np.asarray(list(xs), dtype=np.int64)
        return cls(int(xs[0]), xs)

    @property
    def horizon(self) -> int:
        return self.positions.size - 1

    def __len__(self):
        return self.positions.size

    def __eq__(self, other):
        if not isinstance(other, WalkPath):
            return NotImplemented
        return self.start == other.start and np.array_equal(self.positions, other.positions)

    def __hash__(self):
        return hash((self.start, self.positions.tobytes()))

    def reflected(self) -> "WalkPath":
        """Mirror image about the starting point."""
        return WalkPath(self.start, 2 * self.start - self.positions)

    def to_csv(self, fh, header: str | None = None) -> None:
        """Write ``n, X_n`` rows; ``header`` becomes a leading ``#`` line."""
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "X_n"])
        for n, x in enumerate(self.positions.tolist()):
            w.writerow([n, x])


@nb.njit(cache=True)
def walk_into(env_key, coin_key, cum, P, start, out, visits):
    """Fill ``out`` with a fresh-field walk from ``start``.

    ``visits`` is scratch of length ``2 * (len(out) - 1) + 1`` and is zeroed
    on exit.  The site window is centred at ``start``.
    """
    H = out.shape[0] - 1
    M = P.shape[1]
    x = start
    out[0] = x
    for n in range(H):
        j = x - start + H
        i = visits[j]
        visits[j] = i + 1
        c = site_component(env_key, cum, x)
        p = P[c, i] if i < M else 0.5
        if rng.uniform(coin_key, np.uint64(x), i) < p:
            x += 1
        else:
            x -= 1
        out[n + 1] = x
    for n in range(H):
        visits[out[n] - start + H] = 0


def run_walk(field: CoinField, start: int, horizon: int) -> WalkPath:
    """Realise ``X_0 .. X_horizon`` on ``field``, consuming its coins."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if field.is_stub or any(field.consumed.values()):
        xs = [start]
        x = start
        for _ in range(horizon):
            x += field.toss(x)
            xs.append(x)
        return WalkPath(start, np.array(xs, dtype=np.int64))
    out = np.empty(horizon + 1, dtype=np.int64)
    visits = np.zeros(2 * horizon + 1, dtype=np.int64)
    walk_into(field.env_key, field.coin_key, field._cum, field._P, start, out, visits)
    sites, counts = np.unique(out[:-1], return_counts=True)
    for z, c in zip(sites.tolist(), counts.tolist()):
        field.consumed[z] += c
    return WalkPath(start, out)


@dataclass(frozen=True)
class Passage:
    """Hitting times; ``None`` means not observed by ``horizon`` (censored)."""

    T: dict
    D: int | None
    horizon: int

    def censored(self, k=None) -> bool:
        return (self.D if k is None else self.T[k]) is None


def first_passage(path: WalkPath, ks: Iterable[int] = ()) -> Passage:
    """``T_k = inf{n >= 1: X_n = k}`` and ``D = inf{n >= 1: X_n < X_0}``."""
    x = path.positions
    T = {}
    for k in ks:
        hits = np.flatnonzero(x[1:] == k)
        T[k] = int(hits[0]) + 1 if hits.size else None
    below = np.flatnonzero(x[1:] < x[0])
    D = int(below[0]) + 1 if below.size else None
    return Passage(T, D, path.horizon)


def _check_excursion(path: WalkPath) -> int:
    x = path.positions
    if x[0] != 0 or x.size < 2 or x[1] != 1:
        raise NotAnExcursion("a right excursion starts 0, 1, ...")
    back = np.flatnonzero(x[1:] == 0)
    if back.size == 0:
        raise NotAnExcursion("no return to 0 within the horizon")
    return int(back[0]) + 1


def upcrossings(path: WalkPath) -> list[int]:
    """Upcrossing counts ``U_0 = 1, U_1, ...`` of a finite right excursion.

    ``U_k`` counts steps ``k -> k+1`` before the first return to 0; the list
    ends at the first zero.
    """
    T0 = _check_excursion(path)
    return upcrossing_counts(path.positions[: T0 + 1])


def upcrossing_counts(xs: np.ndarray) -> list[int]:
    """Per-level up-step counts of a path starting at 0, ended by a zero.

    Works on partial (censored) excursions too, where counts are lower
    bounds for the full excursion.
    """
    xs = np.asarray(xs)
    ups = xs[:-1][np.diff(xs) == 1]
    ups = ups[ups >= 0]
    counts = np.bincount(ups) if ups.size else np.zeros(1, dtype=np.int64)
    out = counts.tolist() + [0]
    return out[: out.index(0) + 1]


@nb.njit(cache=True, nogil=True)
def return_batch(master, rep0, R, cum, P, H):
    """First return times to 0 of walks from 0, or -1 if none by ``H``,
    together with ``X_H`` (the position at the return for returning paths)."""
    T0 = np.empty(R, dtype=np.int64)
    last = np.empty(R, dtype=np.int64)
    M = P.shape[1]
    visits = np.zeros(2 * H + 1, dtype=np.int64)
    touched = np.empty(H, dtype=np.int64)
    for r in range(R):
        ek = rng.derive_key_nb(master, rng.ENV, rep0 + r)
        ck = rng.derive_key_nb(master, rng.COINS, rep0 + r)
        x = 0
        t0 = -1
        n = 0
        for n in range(H):
            j = x + H
            i = visits[j]
            visits[j] = i + 1
            touched[n] = j
            c = site_component(ek, cum, x)
            p = P[c, i] if i < M else 0.5
            x += 1 if rng.uniform(ck, np.uint64(x), i) < p else -1
            if x == 0:
                t0 = n + 1
                break
        for t in range(n + 1):
            visits[touched[t]] = 0
        T0[r] = t0
        last[r] = x
    return T0, last
