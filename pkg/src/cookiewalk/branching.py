"""Branching processes with migration and the chains built from coin fields.

A (Geom(1/2), nu)-branching process evolves as

    Z_0 = 0,   Z_{k+1} = xi_1 + ... + xi_{Z_k + eta_k}

with ``eta_k ~ nu`` and the empty sum equal to 0 whenever
``Z_k + eta_k <= 0``.  ``nu`` is kept as an exact truncated pmf with the
truncated mass and its first moment tracked, so mean identities can be
checked to 1e-9.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import stats as sps

from . import rng
from .coins import CoinField, count_until
from .env import EnvironmentLaw, site_component
from .walk import run_walk, upcrossing_counts


@dataclass(frozen=True)
class OffspringLaw:
    """Geom(1/2) on {0, 1, ...}: ``pmf(k) = 2**-(k+1)``.

    Generating function ``f(s) = 1 / (2 - s)``: ``f(0) = 1/2 > 0``,
    ``f'(1) = 1`` and ``b = f''(1)/2 = 1``; ``sum k^2 ln k pmf(k) < inf``.
    """

    mean: float = 1.0
    b: float = 1.0

    @staticmethod
    def pmf(k):
        k = np.asarray(k)
        return np.where(k >= 0, 0.5 ** (k + 1.0), 0.0)


GEOM_HALF = OffspringLaw()


@dataclass(frozen=True)
class MigrationLaw:
    """pmf of ``eta`` on ``lo, lo+1, ..., lo+len(pmf)-1``.

    ``tail_mass`` is the mass above the last index and ``tail_mean`` its
    contribution ``sum_{k > last} k nu(k)`` to the mean.
    """

    lo: int
    pmf: np.ndarray
    tail_mass: float = 0.0
    tail_mean: float = 0.0

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.ndim != 1 or pmf.size == 0 or np.any(pmf < 0):
            raise ValueError("pmf must be a nonempty nonnegative vector")
        total = pmf.sum() + self.tail_mass
        if not (1 - 1e-9 <= total <= 1 + 1e-12):
            raise ValueError(f"total mass {total} outside [1 - 1e-9, 1]")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def point_mass(cls, k: int) -> "MigrationLaw":
        return cls(int(k), np.array([1.0]))

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.lo, self.lo + self.pmf.size)

    @property
    def mean(self) -> float:
        """Mean of the truncated pmf (the exact mean adds ``tail_mean``)."""
        return math.fsum(self.support * self.pmf)

    def __getitem__(self, k: int) -> float:
        i = k - self.lo
        return float(self.pmf[i]) if 0 <= i < self.pmf.size else 0.0

    @property
    def immigration_mass(self) -> float:
        return float(self.pmf[self.support >= 1].sum() + self.tail_mass)

    def satisfies_assumptions(self, M: int) -> bool:
        """Positive immigration chance and emigration bounded by ``M``."""
        return self.immigration_mass > 0 and self.lo >= -M

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0  # the certified tail is lumped into the last atom when sampling
        return c

    def to_csv(self, fh, header: str | None = None) -> None:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "pmf"])
        for k, p in zip(self.support.tolist(), self.pmf.tolist()):
            w.writerow([k, repr(p)])


def _success_count_pmf(probs) -> np.ndarray:
    """pmf of the number of successes among independent tosses ``probs``."""
    d = np.array([1.0])
    # canonical order: the law depends only on the multiset of probabilities
    for p in sorted(probs):
        nxt = np.zeros(d.size + 1)
        nxt[:-1] += d * (1.0 - p)
        nxt[1:] += d * p
        d = nxt
    return d


def _negbin_pmf(r: int, j: np.ndarray) -> np.ndarray:
    """Fair-coin successes before the ``r``-th failure (``r = 0`` -> 0)."""
    if r == 0:
        return (j == 0).astype(np.float64)
    return np.where(j >= 0, sps.nbinom.pmf(np.maximum(j, 0), r, 0.5), 0.0)


def _negbin_sf(r: int, j: int) -> float:
    if r == 0:
        return 1.0 if j < 0 else 0.0
    return float(sps.nbinom.sf(j, r, 0.5)) if j >= 0 else 1.0


def nu_exact(law: EnvironmentLaw, direction: str = "forward", tail_cut: float = 1e-12) -> MigrationLaw:
    """Exact law of the migration variable of a cookie site.

    ``forward``: ``S_M - M`` (successes before the M-th failure).
    ``backward``: ``F_M - M + 1`` (failures before the M-th success).

    The first ``M`` tosses use the pile; after them every toss is fair, so
    given ``s`` successes among the first ``M`` the remainder is negative
    binomial.  The pmf is cut where the remaining mass drops below
    ``tail_cut``.
    """
    if not (0.0 < tail_cut <= 1e-6):
        raise ValueError("tail_cut must lie in (0, 1e-6]")
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    M = law.depth
    # (weight, r, shift): eta = NB(r) - shift
    parts: dict[tuple[int, int], float] = {}
    for w, pile in law.components:
        d = _success_count_pmf(pile.probs)
        for s in range(M + 1):
            if d[s] == 0.0:
                continue
            f = M - s
            key = (s, f) if direction == "forward" else (f, s - 1)
            parts[key] = parts.get(key, 0.0) + w * d[s]
    lo = -M if direction == "forward" else 1 - M

    def tail(K):
        return math.fsum(w * _negbin_sf(r, K + sh) for (r, sh), w in parts.items())

    K = 8
    while tail(K) >= tail_cut:
        K *= 2
    a, b = K // 2, K
    while b - a > 1:
        mid = (a + b) // 2
        a, b = (a, mid) if tail(mid) < tail_cut else (mid, b)
    K = b if tail(b) < tail_cut else a
    ks = np.arange(lo, K + 1)
    pmf = np.zeros(ks.size)
    tail_mass = 0.0
    tail_mean = 0.0
    for (r, sh), w in sorted(parts.items()):
        pmf += w * _negbin_pmf(r, ks + sh)
        tail_mass += w * _negbin_sf(r, K + sh)
        if r > 0:
            J = K + sh  # sum_{j > J} (j - sh) NB_r(j), using j NB_r(j) = r NB_{r+1}(j-1)
            tail_mean += w * (r * _negbin_sf(r + 1, J - 1) - sh * _negbin_sf(r, J))
    nz = np.flatnonzero(pmf)
    first = int(nz[0]) if nz.size else 0
    return MigrationLaw(int(ks[first]), pmf[first:], tail_mass, tail_mean)


def theta(nu: MigrationLaw) -> float:
    """Migration mean over ``b`` (``b = 1`` for Geom(1/2))."""
    return float((nu.mean + nu.tail_mean) / GEOM_HALF.b)


# ---------------------------------------------------------------- exact oracle

@dataclass(frozen=True)
class ExactSurvival:
    """``u[n] = P[N > n]`` restricted to populations ``<= cap``; the true
    value lies in ``[u, u + leak]``."""

    u: np.ndarray
    leak: np.ndarray
    cap: int


def exact_survival(nu: MigrationLaw, n_max: int, cap: int = 300) -> ExactSurvival:
    """Propagate the stopped chain's pmf over states ``0..cap``.

    ``u[n] = P[N > n]`` for ``n = 0..n_max``; ``leak[n]`` is the mass pushed
    above ``cap`` by step ``n``, a bound on the truncation error of ``u[n]``.
    """
    ks = nu.support
    y_max = cap + int(ks[-1])
    ys = np.arange(y_max + 1)
    zs = np.arange(cap + 1)
    NB = np.zeros((y_max + 1, cap + 1))
    NB[0, 0] = 1.0
    NB[1:] = sps.nbinom.pmf(zs[None, :], ys[1:, None], 0.5)
    T = np.zeros((cap + 1, cap + 1))
    for z in range(cap + 1):
        y = np.maximum(z + ks, 0)
        T[z] = (nu.pmf[:, None] * NB[y]).sum(axis=0)
    dist = np.zeros(cap + 1)
    dist[0] = 1.0
    u = np.empty(n_max + 1)
    leak = np.zeros(n_max + 1)
    u[0] = 1.0
    lost = 0.0
    for n in range(1, n_max + 1):
        mass = dist.sum()
        dist = dist @ T
        lost += mass - dist.sum()
        dist[0] = 0.0
        u[n] = dist.sum()
        leak[n] = lost
    return ExactSurvival(u, leak, cap)


# ------------------------------------------------------------ Monte Carlo runs

@nb.njit(cache=True)
def _draw_eta(key, k, lo, cdf):
    u = rng.uniform(key, np.uint64(k), 0)
    return lo + np.searchsorted(cdf, u, side="right")


@nb.njit(cache=True)
def _munu_trace(mig_key, off_key, lo, cdf, horizon, out):
    out[0] = 0
    for k in range(horizon):
        y = out[k] + _draw_eta(mig_key, k, lo, cdf)
        if y > 0:
            out[k + 1] = rng.fair_negbin(off_key, np.uint64(k + 1), 0, y)[0]
        else:
            out[k + 1] = 0


@dataclass(frozen=True)
class BranchTrace:
    """Raw values ``Z_0..Z_n``, the stopped copy, lifetime and progeny."""

    values: np.ndarray
    stopped: np.ndarray
    lifetime: int | None
    progeny: int

    @classmethod
    def from_values(cls, values) -> "BranchTrace":
        z = np.asarray(values, dtype=np.int64)
        zeros = np.flatnonzero(z[1:] == 0)
        N = int(zeros[0]) + 1 if zeros.size else None
        st = z.copy()
        if N is not None:
            st[N:] = 0
        return cls(z, st, N, int(st.sum()))

    @property
    def censored(self) -> bool:
        return self.lifetime is None


def munu_step(z: int, eta: int, offspring) -> int:
    """One transition; ``offspring(n)`` returns the sum of ``n`` draws."""
    n = z + eta
    return offspring(n) if n > 0 else 0


def munu_run(nu: MigrationLaw, horizon: int, seed: int, replicate: int = 0) -> BranchTrace:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    out = np.empty(horizon + 1, dtype=np.int64)
    _munu_trace(np.uint64(rng.derive_key(seed, rng.MIGRATION, replicate)),
                np.uint64(rng.derive_key(seed, rng.OFFSPRING, replicate)),
                nu.lo, nu.cdf, horizon, out)
    return BranchTrace.from_values(out)


@nb.njit(cache=True)
def _munu_batch(master, rep0, R, lo, cdf, n_max):
    """Stopped runs ``rep0 .. rep0+R-1`` up to ``n_max``.

    Returns lifetimes (``n_max + 1`` when alive at ``n_max``), stopped
    progeny ``sum_{m <= n_max}`` and per-``n`` accumulators for ``u_n`` and
    ``v_n``.
    """
    life = np.empty(R, dtype=np.int64)
    prog = np.empty(R, dtype=np.float64)
    alive = np.zeros(n_max + 1, dtype=np.int64)
    vs = np.zeros(n_max + 1)
    vq = np.zeros(n_max + 1)
    ds = np.zeros(n_max + 2)
    dq = np.zeros(n_max + 2)
    for r in range(R):
        mk = rng.derive_key_nb(master, rng.MIGRATION, rep0 + r)
        ok = rng.derive_key_nb(master, rng.OFFSPRING, rep0 + r)
        z = 0
        cum = 0.0
        N = n_max + 1
        for k in range(n_max):
            y = z + _draw_eta(mk, k, lo, cdf)
            z = rng.fair_negbin(ok, np.uint64(k + 1), 0, y)[0] if y > 0 else 0
            if z == 0:
                N = k + 1
                break
            cum += z
            alive[k + 1] += 1
            vs[k + 1] += cum
            vq[k + 1] += cum * cum
        life[r] = N
        prog[r] = cum
        if N <= n_max:
            ds[N] += cum
            dq[N] += cum * cum
    run_s = 0.0
    run_q = 0.0
    for n in range(n_max + 1):
        run_s += ds[n]
        run_q += dq[n]
        vs[n] += run_s
        vq[n] += run_q
    return life, prog, alive, vs, vq


@dataclass(frozen=True)
class MunuBatch:
    lifetimes: np.ndarray   # n_max + 1 means alive at n_max
    progeny: np.ndarray
    alive: np.ndarray
    v_sum: np.ndarray
    v_sq: np.ndarray
    n_max: int

    @property
    def replicates(self) -> int:
        return self.lifetimes.size


def munu_batch(nu: MigrationLaw, n_max: int, replicates: int, seed: int,
               first_replicate: int = 0) -> MunuBatch:
    """Independent stopped runs; replicate ``r`` uses the streams of
    ``munu_run(nu, n_max, seed, r)`` and so follows the same trajectory."""
    out = _munu_batch(np.uint64(seed), first_replicate, replicates, nu.lo, nu.cdf, n_max)
    return MunuBatch(*out, n_max=n_max)


@nb.njit(cache=True)
def _munu_raw_batch(master, rep0, R, lo, cdf, k):
    out = np.empty(R, dtype=np.int64)
    buf = np.empty(k + 1, dtype=np.int64)
    for r in range(R):
        _munu_trace(rng.derive_key_nb(master, rng.MIGRATION, rep0 + r),
                    rng.derive_key_nb(master, rng.OFFSPRING, rep0 + r), lo, cdf, k, buf)
        out[r] = buf[k]
    return out


def munu_raw_samples(nu: MigrationLaw, k: int, replicates: int, seed: int) -> np.ndarray:
    """Unstopped ``Z_k`` of independent runs (``Z_0 = 0``)."""
    return _munu_raw_batch(np.uint64(seed), 0, replicates, nu.lo, nu.cdf, k)


def merge_batches(batches: list[MunuBatch]) -> MunuBatch:
    """Concatenate batches of consecutive replicates (order-independent sums)."""
    return MunuBatch(np.concatenate([b.lifetimes for b in batches]),
                     np.concatenate([b.progeny for b in batches]),
                     sum(b.alive for b in batches), sum(b.v_sum for b in batches),
                     sum(b.v_sq for b in batches), batches[0].n_max)


@dataclass(frozen=True)
class Curves:
    n: np.ndarray
    u: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    v: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    replicates: int

    COLUMNS = ("n", "u_n", "u_lo", "u_hi", "v_n", "v_lo", "v_hi")

    def to_csv(self, fh, header: str | None = None) -> None:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(self.n.tolist(), *(a.tolist() for a in
                                         (self.u, self.u_lo, self.u_hi, self.v, self.v_lo, self.v_hi))):
            w.writerow([row[0]] + [repr(x) for x in row[1:]])


def curves_from_batch(b: MunuBatch, level: float = 0.95) -> Curves:
    R = b.replicates
    z = float(sps.norm.ppf(0.5 + level / 2))
    n = np.arange(1, b.n_max + 1)
    u = b.alive[1:] / R
    du = z * np.sqrt(u * (1 - u) / R)
    v = b.v_sum[1:] / R
    var = np.maximum(b.v_sq[1:] / R - v**2, 0.0) * R / max(R - 1, 1)
    dv = z * np.sqrt(var / R)
    return Curves(n, u, np.clip(u - du, 0, 1), np.clip(u + du, 0, 1), v, v - dv, v + dv, R)


def survival_progeny_curves(nu: MigrationLaw, n_max: int, replicates: int, seed: int,
                            level: float = 0.95) -> Curves:
    """Monte Carlo ``u_n = P[N > n]`` and ``v_n = E sum_{m<=n} Z~_m`` with bands."""
    if replicates < 1000:
        raise ValueError("need at least 1000 replicates")
    return curves_from_batch(munu_batch(nu, n_max, replicates, seed), level)


# --------------------------------------------------------- chains on coin fields

@dataclass(frozen=True)
class ForwardChains:
    """Chains on one field.  ``U`` comes from the walk started at 1 (with
    ``X_0 = 0`` prepended); when the excursion is censored it holds partial
    counts, which are lower bounds."""

    U: list[int]
    finite: bool
    V: list[int]
    W: list[int]
    Z: list[int]


def forward_chains(field: CoinField, horizon: int, walk_horizon: int = 10**5) -> ForwardChains:
    """``V_{k+1} = S^(k+1)_{V_k}``, ``W_{k+1} = S^(k)_{max(W_k, M)}``,
    ``Z_k = W_{k+1} - S^(k)_M``, all read from the start of each stream."""
    path = run_walk(field, 1, walk_horizon)
    xs = np.concatenate(([0], path.positions))
    back = np.flatnonzero(xs[1:] == 0)
    finite = back.size > 0
    U = upcrossing_counts(xs[: back[0] + 2] if finite else xs)
    M = field.depth
    n = max(horizon, len(U))
    V = [1]
    for k in range(n):
        V.append(field.S(k + 1, V[-1]) if V[-1] > 0 else 0)
    W = [0]
    Z = []
    for k in range(horizon):
        W.append(field.S(k, max(W[-1], M)))
        Z.append(W[-1] - field.S(k, M))
    return ForwardChains(U, finite, V, W, Z)


@dataclass(frozen=True)
class BackwardChains:
    V: list[int]
    V_stopped: list[int]
    lifetime: int | None
    W: list[int]
    Z: list[int]


def backward_chains(field: CoinField, horizon: int) -> BackwardChains:
    """``V_{k+1} = F^(k)_{V_k+1}``, its stopped copy, ``W_{k+1} =
    F^(k)_{max(W_k+1, M)}`` and ``Z'_k = W_{k+1} - F^(k)_M``."""
    M = field.depth
    V = [0]
    W = [0]
    Z = []
    for k in range(horizon):
        V.append(field.F(k, V[-1] + 1))
        W.append(field.F(k, max(W[-1] + 1, M)))
        Z.append(W[-1] - field.F(k, M))
    tr = BranchTrace.from_values(V)
    return BackwardChains(V, tr.stopped.tolist(), tr.lifetime, W, Z)


@nb.njit(cache=True)
def _forward_z_batch(master, rep0, R, cum, P, K):
    """``Z_K`` of the forward decomposition for fields ``rep0..rep0+R-1``."""
    M = P.shape[1]
    out = np.empty(R, dtype=np.int64)
    for r in range(R):
        ek = rng.derive_key_nb(master, rng.ENV, rep0 + r)
        ck = rng.derive_key_nb(master, rng.COINS, rep0 + r)
        w = 0
        for k in range(K + 1):
            w = count_until(ek, ck, cum, P, k, 0, max(w, M), -1, 1 << 40)[0]
        out[r] = w - count_until(ek, ck, cum, P, K, 0, M, -1, 1 << 40)[0]
    return out


def forward_z_samples(law: EnvironmentLaw, k: int, replicates: int, seed: int) -> np.ndarray:
    """``Z_k = W_{k+1} - S^(k)_M`` on independent fields ``(seed, r)``."""
    return _forward_z_batch(np.uint64(seed), 0, replicates, law.cum_weights, law.prob_matrix, k)


@nb.njit(cache=True)
def _backward_progeny_batch(master, rep0, R, cum, P, cap):
    """Total stopped progeny ``sum_k V~_k`` of the backward chain per field;
    -1 when the chain is still alive after ``cap`` generations."""
    out = np.empty(R, dtype=np.int64)
    for r in range(R):
        ek = rng.derive_key_nb(master, rng.ENV, rep0 + r)
        ck = rng.derive_key_nb(master, rng.COINS, rep0 + r)
        v = 0
        total = 0
        done = False
        for k in range(cap):
            v = count_until(ek, ck, cum, P, k, 0, v + 1, 1, 1 << 40)[0]
            if v == 0:
                done = True
                break
            total += v
        out[r] = total if done else -1
    return out


def backward_progeny_samples(law: EnvironmentLaw, replicates: int, seed: int,
                             cap: int = 10**6, first_replicate: int = 0) -> np.ndarray:
    return _backward_progeny_batch(np.uint64(seed), first_replicate, replicates,
                                   law.cum_weights, law.prob_matrix, cap)
