"""Regeneration structure of right-transient walks.

A time ``n >= 1`` is a renewal when the path is at a strict running maximum
and never goes below ``X_n`` afterwards.  On a finite path the second
condition is only checked up to the horizon, so a renewal is *confirmed*
only if at least ``margin`` steps follow it; later candidates are reported
as censored.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass

import numba as nb
import numpy as np
from scipy import stats as sps

from . import rng
from .env import EnvironmentLaw, site_component
from .walk import WalkPath, walk_into

DEFAULT_MARGIN = 1000
DEFAULT_GUARD = 50


class RenewalError(ValueError):
    pass


@nb.njit(cache=True)
def renewal_candidates(xs):
    """Boolean mask of times satisfying both renewal conditions up to the end."""
    H = xs.shape[0] - 1
    ok = np.zeros(H + 1, dtype=np.bool_)
    suffix_min = xs[H]
    for n in range(H, 0, -1):
        if n < H:
            suffix_min = min(suffix_min, xs[n + 1])
        ok[n] = n == H or suffix_min >= xs[n]
    running_max = xs[0]
    for n in range(1, H + 1):
        if xs[n] > running_max:
            running_max = xs[n]
        else:
            ok[n] = False
    return ok


@nb.njit(cache=True)
def _cycle_table(xs, taus):
    """Per consecutive pair: space, time, sum of D_k, identity and sandwich flags."""
    m = taus.shape[0] - 1
    space = np.empty(m, dtype=np.int64)
    time = np.empty(m, dtype=np.int64)
    sumd = np.empty(m, dtype=np.int64)
    ident = np.empty(m, dtype=np.bool_)
    sandwich = np.empty(m, dtype=np.bool_)
    for c in range(m):
        a = taus[c]
        b = taus[c + 1]
        top = xs[b]
        d = 0
        for n in range(a + 1, b):
            if xs[n + 1] == xs[n] - 1 and top - xs[n] >= 0:
                d += 1
        space[c] = xs[b] - xs[a]
        time[c] = b - a
        sumd[c] = d
        ident[c] = time[c] == space[c] + 2 * d
        sandwich[c] = 2 * d <= time[c] and time[c] <= 1 + 3 * d
    return space, time, sumd, ident, sandwich


@dataclass(frozen=True)
class Renewals:
    taus: list[int]
    censored: list[int]

    @property
    def any_censored(self) -> bool:
        return bool(self.censored)


def find_renewals(path: WalkPath, margin: int = DEFAULT_MARGIN) -> Renewals:
    if margin < 0:
        raise RenewalError("margin must be nonnegative")
    cand = np.flatnonzero(renewal_candidates(path.positions))
    H = path.horizon
    return Renewals([int(n) for n in cand if H - n >= margin],
                    [int(n) for n in cand if H - n < margin])


@dataclass(frozen=True)
class CycleStats:
    space: int
    time: int
    D: list[int]
    identity_ok: bool

    @property
    def sum_D(self) -> int:
        return sum(self.D)


def cycle_stats(path: WalkPath, tau_a: int, tau_b: int) -> CycleStats:
    """Increments and downcrossing counts ``D_k`` of edge ``(top-k, top-k-1)``
    between two renewals, with the check ``time = space + 2 sum D``."""
    xs = path.positions
    if not (1 <= tau_a < tau_b <= path.horizon):
        raise RenewalError("need 1 <= tau_a < tau_b <= horizon")
    ok = renewal_candidates(xs)
    if not (ok[tau_a] and ok[tau_b]):
        raise RenewalError(f"({tau_a}, {tau_b}) is not a pair of renewal times")
    top = int(xs[tau_b])
    seg = xs[tau_a + 1: tau_b + 1]
    downs = top - seg[:-1][np.diff(seg) == -1]
    D = np.bincount(downs).tolist() if downs.size else [0]
    space = top - int(xs[tau_a])
    time = tau_b - tau_a
    return CycleStats(space, time, D, time == space + 2 * sum(D))


@dataclass
class RenewalReport:
    """Cycles of one path.  ``space``/``time``/``sum_D`` hold every cycle,
    the first one included; estimators drop it."""

    path_id: int
    taus: np.ndarray
    space: np.ndarray
    time: np.ndarray
    sum_D: np.ndarray
    identity_ok: np.ndarray
    sandwich_ok: np.ndarray
    censored_tail: int
    endpoint: int
    horizon: int

    @property
    def n_cycles(self) -> int:
        return self.space.size

    def post_first(self):
        return self.space[1:], self.time[1:], self.sum_D[1:]


def analyze(xs: np.ndarray, margin: int = DEFAULT_MARGIN, path_id: int = 0) -> RenewalReport:
    H = xs.shape[0] - 1
    cand = np.flatnonzero(renewal_candidates(xs))
    taus = cand[H - cand >= margin]
    if taus.size >= 2:
        space, time, sumd, ident, sand = _cycle_table(xs, taus)
    else:
        space = time = sumd = np.zeros(0, dtype=np.int64)
        ident = sand = np.zeros(0, dtype=bool)
    return RenewalReport(path_id, taus, space, time, sumd, ident, sand,
                         int(cand.size - taus.size), int(xs[-1]), H)


def analyze_path(path: WalkPath, margin: int = DEFAULT_MARGIN, path_id: int = 0) -> RenewalReport:
    return analyze(path.positions, margin, path_id)


class PathSimulator:
    """Walks from 0 on fields ``(seed, replicate)`` with reused buffers.

    ``quenched=True`` fixes the environment of replicate 0 and only renews
    the coins, i.e. samples under a fixed environment rather than the
    averaged measure.
    """

    def __init__(self, law: EnvironmentLaw, seed: int, horizon: int, quenched: bool = False):
        self.law = law
        self.seed = seed
        self.horizon = horizon
        self.quenched = quenched
        self._cum = law.cum_weights
        self._P = law.prob_matrix
        self._buf = np.empty(horizon + 1, dtype=np.int64)
        self._visits = np.zeros(2 * horizon + 1, dtype=np.int64)

    def path(self, replicate: int) -> np.ndarray:
        """Positions of replicate ``replicate`` (a view into a reused buffer)."""
        env_rep = 0 if self.quenched else replicate
        walk_into(np.uint64(rng.derive_key(self.seed, rng.ENV, env_rep)),
                  np.uint64(rng.derive_key(self.seed, rng.COINS, replicate)),
                  self._cum, self._P, 0, self._buf, self._visits)
        return self._buf


def collect_cycles(law: EnvironmentLaw, seed: int, min_cycles: int, horizon: int,
                   margin: int = DEFAULT_MARGIN, max_paths: int = 100_000) -> list[RenewalReport]:
    """Analyse paths ``0, 1, ...`` until ``min_cycles`` post-first cycles exist."""
    sim = PathSimulator(law, seed, horizon)
    reports = []
    total = 0
    for r in range(max_paths):
        rep = analyze(sim.path(r), margin, r)
        reports.append(rep)
        total += max(rep.n_cycles - 1, 0)
        if total >= min_cycles:
            return reports
    raise RenewalError(f"only {total} cycles after {max_paths} paths")


def pooled_cycles(reports: list[RenewalReport]):
    """Post-first cycles of all reports as ``(space, time, sum_D)`` arrays."""
    parts = [r.post_first() for r in reports]
    if not parts:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def write_cycle_table(reports: list[RenewalReport], fh, header: str | None = None) -> None:
    if header:
        fh.write(f"# {header}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_id", "k", "space", "time", "sum_D", "identity_ok"])
    for rep in reports:
        for k in range(rep.n_cycles):
            w.writerow([rep.path_id, k + 1, int(rep.space[k]), int(rep.time[k]),
                        int(rep.sum_D[k]), int(bool(rep.identity_ok[k]))])


def write_bt_samples(paths: list[tuple[int, np.ndarray]], v: float, n: int, ts, fh,
                     header: str | None = None) -> None:
    """``B_t^n = (X_[tn] - [tn] v) / sqrt(n)`` at the grid ``ts``."""
    if header:
        fh.write(f"# {header}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "value", "path_id"])
    for pid, xs in paths:
        for t in ts:
            m = int(math.floor(t * n))
            w.writerow([repr(float(t)), repr((float(xs[m]) - m * v) / math.sqrt(n)), pid])


# ------------------------------------------------------------------ backtracking

@nb.njit(cache=True)
def _backtrack_batch(master, rep0, R, cum, P, H, guard, visits):
    """Per path: 1 no backtrack by ``H`` and ``X_H >= guard``, 0 backtracked,
    -1 censored (no backtrack but below the guard level)."""
    out = np.empty(R, dtype=np.int64)
    M = P.shape[1]
    touched = np.empty(H, dtype=np.int64)
    for r in range(R):
        ek = rng.derive_key_nb(master, rng.ENV, rep0 + r)
        ck = rng.derive_key_nb(master, rng.COINS, rep0 + r)
        x = 0
        res = 1
        n = 0
        for n in range(H):
            j = x + H
            i = visits[j]
            visits[j] = i + 1
            touched[n] = j
            c = site_component(ek, cum, x)
            p = P[c, i] if i < M else 0.5
            x += 1 if rng.uniform(ck, np.uint64(x), i) < p else -1
            if x < 0:
                res = 0
                break
        for t in range(n + 1):
            visits[touched[t]] = 0
        if res == 1 and x < guard:
            res = -1
        out[r] = res
    return out


@dataclass(frozen=True)
class NoBacktrack:
    p_hat: float
    se: float
    n_escape: int
    n_back: int
    n_censored: int


def estimate_no_backtrack(law: EnvironmentLaw, seed: int, paths: int, horizon: int,
                          guard: int = DEFAULT_GUARD) -> NoBacktrack:
    """Estimate ``P[D = infinity]`` with horizon censoring and a guard level."""
    visits = np.zeros(2 * horizon + 1, dtype=np.int64)
    out = _backtrack_batch(np.uint64(seed), 0, paths, law.cum_weights, law.prob_matrix,
                           horizon, guard, visits)
    esc = int((out == 1).sum())
    back = int((out == 0).sum())
    n = esc + back
    p = esc / n if n else float("nan")
    return NoBacktrack(p, math.sqrt(p * (1 - p) / n) if n else float("nan"), esc, back,
                       int((out == -1).sum()))


# -------------------------------------------------------------------- estimators

@dataclass(frozen=True)
class CycleMoments:
    """Integer power sums of post-first cycles; merging is exact and associative."""

    n: int = 0
    s: int = 0
    t: int = 0
    ss: int = 0
    tt: int = 0
    st: int = 0

    @classmethod
    def of(cls, space: np.ndarray, time: np.ndarray) -> "CycleMoments":
        s = space.astype(np.int64)
        t = time.astype(np.int64)
        return cls(int(s.size), int(s.sum()), int(t.sum()), int((s * s).sum()),
                   int((t * t).sum()), int((s * t).sum()))

    def __add__(self, other: "CycleMoments") -> "CycleMoments":
        return CycleMoments(*(a + b for a, b in zip(astuple(self), astuple(other))))

    def resid_sq(self, v: float) -> float:
        """``sum (space - v time)^2``."""
        return self.ss - 2 * v * self.st + v * v * self.tt


def moments_of(reports: list[RenewalReport]) -> CycleMoments:
    total = CycleMoments()
    for r in reports:
        sp, ti, _ = r.post_first()
        total = total + CycleMoments.of(sp, ti)
    return total


@nb.njit(cache=True, nogil=True)
def _path_batch(master, rep0, R, cum, P, H, margin):
    """Walk ``R`` replicates from 0; per path return ``X_H`` and the post-first
    cycle power sums ``n, s, t, ss, tt, st``."""
    ends = np.empty(R, dtype=np.int64)
    sums = np.zeros((R, 6), dtype=np.int64)
    buf = np.empty(H + 1, dtype=np.int64)
    visits = np.zeros(2 * H + 1, dtype=np.int64)
    for r in range(R):
        ek = rng.derive_key_nb(master, rng.ENV, rep0 + r)
        ck = rng.derive_key_nb(master, rng.COINS, rep0 + r)
        walk_into(ek, ck, cum, P, 0, buf, visits)
        ends[r] = buf[H]
        ok = renewal_candidates(buf)
        cnt = 0
        for n in range(1, H - margin + 1):
            if ok[n]:
                cnt += 1
        taus = np.empty(cnt, dtype=np.int64)
        j = 0
        for n in range(1, H - margin + 1):
            if ok[n]:
                taus[j] = n
                j += 1
        for c in range(1, cnt - 1):
            s = buf[taus[c + 1]] - buf[taus[c]]
            t = taus[c + 1] - taus[c]
            sums[r, 0] += 1
            sums[r, 1] += s
            sums[r, 2] += t
            sums[r, 3] += s * s
            sums[r, 4] += t * t
            sums[r, 5] += s * t
    return ends, sums


@dataclass(frozen=True)
class PathBatch:
    endpoints: np.ndarray
    moments: CycleMoments
    horizon: int


def simulate_paths(law: EnvironmentLaw, seed: int, paths: int, horizon: int,
                   margin: int = DEFAULT_MARGIN, workers: int = 1, chunk: int = 256) -> PathBatch:
    """Endpoints and pooled cycle moments of replicates ``0 .. paths-1``.

    Replicates are split into fixed chunks; results depend only on the seed,
    never on ``workers``.
    """
    starts = list(range(0, paths, chunk))

    def run(a):
        return _path_batch(np.uint64(seed), a, min(chunk, paths - a), law.cum_weights,
                           law.prob_matrix, horizon, margin)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(a) for a in starts]
    ends = np.concatenate([p[0] for p in parts])
    sums = np.concatenate([p[1] for p in parts])
    mom = CycleMoments(*(int(x) for x in sums.sum(axis=0, dtype=np.int64)))
    return PathBatch(ends, mom, horizon)


@dataclass(frozen=True)
class SpeedEstimate:
    v_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    n_cycles: int
    mean_space: float
    mean_time: float
    direct: float | None = None        # mean of X_H / H over paths
    inv_p_escape: float | None = None  # 1 / P[D = infinity]

    @property
    def excludes_zero(self) -> bool:
        return self.ci_lo > 0 or self.ci_hi < 0

    @property
    def renewal_mean_gap(self) -> float | None:
        """Relative gap between mean space increment and ``1 / P[D = infinity]``."""
        if self.inv_p_escape is None:
            return None
        return abs(self.mean_space - self.inv_p_escape) / self.inv_p_escape


def speed_from_moments(m: CycleMoments, level: float = 0.95, min_cycles: int = 100,
                       direct: float | None = None,
                       no_backtrack: NoBacktrack | None = None) -> SpeedEstimate:
    """Ratio of mean space to mean time increments, with a delta-method interval."""
    if m.n < min_cycles:
        raise RenewalError(f"{m.n} cycles, need at least {min_cycles}")
    v = m.s / m.t
    mean_t = m.t / m.n
    # sample variance of space - v * time (its mean is zero by construction)
    var = max(m.resid_sq(v), 0.0) / (m.n - 1)
    se = math.sqrt(var / m.n) / mean_t
    z = float(sps.norm.ppf(0.5 + level / 2))
    inv = 1.0 / no_backtrack.p_hat if no_backtrack and no_backtrack.p_hat > 0 else None
    return SpeedEstimate(v, se, v - z * se, v + z * se, m.n, m.s / m.n, mean_t, direct, inv)


def estimate_speed(source, level: float = 0.95, no_backtrack: NoBacktrack | None = None,
                   min_cycles: int = 100) -> SpeedEstimate:
    """Speed from a list of :class:`RenewalReport` or a :class:`PathBatch`.

    The first cycle of each path is excluded.  Cross-checks: mean ``X_H / H``
    and, if ``no_backtrack`` is given, ``1 / P[D = infinity]``.
    """
    if isinstance(source, PathBatch):
        m = source.moments
        direct = float(source.endpoints.mean() / source.horizon)
    else:
        m = moments_of(source)
        direct = float(np.mean([r.endpoint / r.horizon for r in source])) if source else None
    return speed_from_moments(m, level, min_cycles, direct, no_backtrack)


@dataclass(frozen=True)
class CLTSummary:
    sigma2_cycles: float
    sigma2_paths: float
    v_hat: float
    ks_stat: float       # lattice-corrected, see stats.ks_lattice_normal
    ks_crit_1pct: float
    n_cycles: int
    n_paths: int
    degenerate: bool
    ks_raw: float = float("nan")

    @property
    def rel_diff(self) -> float:
        return abs(self.sigma2_cycles - self.sigma2_paths) / self.sigma2_paths

    @property
    def normal_ok(self) -> bool:
        return self.ks_stat < self.ks_crit_1pct


def sigma2_from_moments(m: CycleMoments, v: float) -> float:
    """``E[(space - v time)^2] / E[time]`` over cycles."""
    return max(m.resid_sq(v), 0.0) / m.t


def estimate_sigma2_clt(batch: PathBatch, v_hat: float | None = None,
                        min_samples: int = 1000) -> CLTSummary:
    """Diffusivity from cycles and, independently, from endpoint spread.

    ``v_hat`` defaults to the batch's own ratio estimate.  The endpoints
    ``(X_H - H v) / sqrt(H sigma2)``, with the cycle-based ``sigma2``, are
    compared with the standard normal by a one-sample KS statistic.  ``X_H``
    has the parity of ``H``, so the reported statistic uses the lattice
    continuity correction; the uncorrected one is kept as ``ks_raw``.
    """
    from .stats import ks_lattice_normal

    m = batch.moments
    ends = batch.endpoints
    H = batch.horizon
    if m.n < min_samples or ends.size < min_samples:
        raise RenewalError(f"need at least {min_samples} cycles and paths")
    v = m.s / m.t if v_hat is None else v_hat
    s2c = sigma2_from_moments(m, v)
    scaled = (ends.astype(np.float64) - H * v) / math.sqrt(H)
    s2p = float(scaled.var(ddof=1))
    crit = float(sps.kstwo.ppf(0.99, ends.size))
    if s2c == 0.0:
        return CLTSummary(0.0, s2p, v, float("nan"), crit, m.n, ends.size, True)
    raw = sps.kstest(scaled / math.sqrt(s2c), "norm").statistic
    ks = ks_lattice_normal(ends, H * v, math.sqrt(H * s2c), step=2.0)
    return CLTSummary(s2c, s2p, v, ks, crit, m.n, ends.size, False, float(raw))
