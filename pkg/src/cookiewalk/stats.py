"""Statistical primitives and the regime verdict engine.

Verdicts compare what the drift parameter predicts (recurrence for
``|delta| <= 1``, zero speed for ``|delta| <= 2``, a diffusive limit for
``|delta| > 4``) with what simulated paths show.  Recurrence and zero speed
are not decidable from finite paths, so each observed facet is a documented
heuristic whose knobs live in :class:`RegimeBudget`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, stats as sps

from .env import EnvironmentLaw, check_ellipticity, delta as drift, reflect
from .renewal import estimate_sigma2_clt, estimate_speed, simulate_paths
from .walk import return_batch


class EllipticityRefused(ValueError):
    """The classification thresholds do not apply without ellipticity."""


# c(alpha) = sqrt(-ln(alpha / 2) / 2) for the asymptotic two-sample KS test
KS_C = {0.01: 1.6276, 0.05: 1.3581}


@dataclass(frozen=True)
class EstimatorSummary:
    n: int
    mean: float
    stderr: float
    ci_lo: float
    ci_hi: float
    level: float


def mean_ci(samples, level: float = 0.95) -> EstimatorSummary:
    """Normal-approximation interval ``mean +- z * s / sqrt(n)``.

    For small ``n`` this undercovers (no Student correction is applied).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty input")
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size))
    z = float(sps.norm.ppf(0.5 + level / 2))
    return EstimatorSummary(int(x.size), m, se, m - z * se, m + z * se, level)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    crit_1pct: float
    crit_5pct: float

    def passes(self, alpha: float = 0.01) -> bool:
        return self.statistic < (self.crit_1pct if alpha == 0.01 else self.crit_5pct)


def ks_two_sample(a, b) -> KSResult:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    d = float(sps.ks_2samp(a, b).statistic)
    scale = math.sqrt((a.size + b.size) / (a.size * b.size))
    return KSResult(d, KS_C[0.01] * scale, KS_C[0.05] * scale)


def ks_lattice_normal(x, loc: float, scale: float, step: float = 2.0) -> float:
    """KS distance between a sample on a lattice of spacing ``step`` and a
    normal law, with the normal CDF read at the midpoints between lattice
    points (continuity correction).

    Without the correction a step ECDF against a continuous CDF carries a
    bias of about ``0.4 * step / scale`` however large the sample.
    """
    x = np.sort(np.asarray(x, dtype=np.float64))
    n = x.size
    u, first = np.unique(x, return_index=True)
    right = np.append(first[1:], n) / n
    left = first / n
    hi = sps.norm.cdf((u + step / 2 - loc) / scale)
    lo = sps.norm.cdf((u - step / 2 - loc) / scale)
    return float(max(np.abs(right - hi).max(), np.abs(left - lo).max()))


@dataclass(frozen=True)
class ChiSquare:
    statistic: float
    dof: int
    p_value: float


def chi_square(observed, probs, min_expected: float = 5.0) -> ChiSquare:
    """Goodness of fit of counts to cell probabilities.

    Cells are merged from the right until every expected count reaches
    ``min_expected``; leftover probability joins the last cell.
    """
    obs = np.asarray(observed, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    n = obs.sum()
    p = np.append(p[: obs.size - 1], max(1.0 - p[: obs.size - 1].sum(), 0.0))
    o_cells, e_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(obs, p * n):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            o_cells.append(o_acc)
            e_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        o_cells[-1] += o_acc
        e_cells[-1] += e_acc
    res = sps.chisquare(o_cells, e_cells)
    return ChiSquare(float(res.statistic), len(o_cells) - 1, float(res.pvalue))


@dataclass(frozen=True)
class TailFit:
    slope: float   # d log P[N > n] / d log n, i.e. -alpha
    se: float
    n_tail: int
    n_censored: int


def tail_exponent_mle(lifetimes, lo: int, hi: int) -> TailFit:
    """Maximum likelihood power-law slope of ``P[N > n]`` on ``[lo, hi]``.

    Uses lifetimes ``N > lo`` under ``P[N > n | N > lo] = (n / lo)^(-alpha)``
    with the exact discrete cell probabilities; ``N > hi`` is censored.
    """
    N = np.asarray(lifetimes)
    tail = N[N > lo]
    obs = tail[tail <= hi].astype(np.float64)
    k_cens = int((tail > hi).sum())
    if obs.size == 0:
        raise ValueError(f"no lifetimes in ({lo}, {hi}]")
    a_obs = np.log((obs - 1) / lo)
    b_obs = np.log(obs / lo)
    c = math.log(hi / lo)

    def nll(alpha):
        cell = np.exp(-alpha * a_obs) - np.exp(-alpha * b_obs)
        return -(np.log(cell).sum() - alpha * c * k_cens)

    res = optimize.minimize_scalar(nll, bounds=(1e-3, 50.0), method="bounded",
                                   options={"xatol": 1e-10})
    a = float(res.x)
    h = 1e-4 * max(a, 1.0)
    info = (nll(a + h) - 2 * nll(a) + nll(a - h)) / h**2
    se = 1 / math.sqrt(info) if info > 0 else float("inf")
    return TailFit(-a, se, int(tail.size), k_cens)


# --------------------------------------------------------------------- verdicts

RECURRENT, RIGHT, LEFT = "recurrent", "transient_right", "transient_left"
V_NEG, V_ZERO, V_POS = "v<0", "v=0", "v>0"
CLT_YES, CLT_NO = "CLT expected", "not claimed"
INCONCLUSIVE = "inconclusive"

_MIRROR = {RIGHT: LEFT, LEFT: RIGHT, V_NEG: V_POS, V_POS: V_NEG}


def _mirror(label: str) -> str:
    return _MIRROR.get(label, label)


@dataclass(frozen=True)
class Regime:
    recurrence: str
    speed: str
    clt: str

    def mirrored(self) -> "Regime":
        return Regime(_mirror(self.recurrence), _mirror(self.speed), self.clt)


def predict_regime(delta: float) -> Regime:
    """Closed thresholds at 1 and 2, open at 4."""
    a = abs(delta)
    rec = RECURRENT if a <= 1 else (RIGHT if delta > 0 else LEFT)
    speed = V_ZERO if a <= 2 else (V_POS if delta > 0 else V_NEG)
    return Regime(rec, speed, CLT_YES if a > 4 else CLT_NO)


@dataclass(frozen=True)
class RegimeBudget:
    seed: int = 1
    return_horizons: tuple[int, ...] = (10**3, 10**4, 10**5)
    return_paths: int = 10**4
    recurrent_level: float = 0.99
    decay_slope: float = -0.1
    guard_level: int = 50
    speed_horizon: int = 10**6
    speed_paths: int = 400
    speed_tol: float = 0.05
    margin: int = 1000
    clt_horizon: int = 10**4
    clt_paths: int = 10**4
    level: float = 0.95
    near: float = 0.25
    workers: int = 1

    def validate(self) -> None:
        hs = self.return_horizons
        if len(hs) < 2 or any(b <= a for a, b in zip(hs, hs[1:])):
            raise ValueError("need at least two increasing return horizons")
        if self.return_paths < 100 or self.speed_paths < 10 or self.clt_paths < 1000:
            raise ValueError("insufficient budget")


@dataclass(frozen=True)
class RegimeVerdict:
    delta: float
    predicted: Regime
    observed: Regime
    agree: dict          # facet -> True / False / None (inconclusive or untested)
    evidence: dict

    @property
    def all_agree(self) -> bool:
        """No facet contradicts the prediction (inconclusive facets pass)."""
        return all(v is not False for v in self.agree.values())

    def report(self) -> str:
        lines = [f"delta={self.delta!r}"]
        for facet in ("recurrence", "speed", "clt"):
            lines.append(f"{facet}.predicted={getattr(self.predicted, facet)}")
            lines.append(f"{facet}.observed={getattr(self.observed, facet)}")
            lines.append(f"{facet}.agree={self.agree[facet]}")
        for k, v in self.evidence.items():
            lines.append(f"evidence.{k}={v}")
        lines.append(f"agree={self.all_agree}")
        lines.append("note=recurrence and zero-speed facets are finite-horizon heuristics")
        return "\n".join(lines) + "\n"


def _facet_agree(pred: str, obs: str) -> bool | None:
    return None if obs == INCONCLUSIVE else pred == obs


def _return_curve(law: EnvironmentLaw, b: RegimeBudget):
    H = b.return_horizons[-1]
    T0, last = return_batch(np.uint64(b.seed), 0, b.return_paths, law.cum_weights,
                            law.prob_matrix, H)
    freq = [float(np.mean((T0 > 0) & (T0 <= h))) for h in b.return_horizons]
    # never returned and cleared the guard on the right: no backtrack by H
    escape = float(np.mean((T0 < 0) & (last >= b.guard_level)))
    return freq, escape


def _observe_recurrence(freq, escape, b: RegimeBudget, n: int) -> tuple[str, dict]:
    miss = np.maximum(1.0 - np.asarray(freq), 0.5 / n)
    slope = float(np.polyfit(np.log10(b.return_horizons), np.log10(miss), 1)[0])
    monotone = all(y >= x for x, y in zip(freq, freq[1:]))
    ev = {"return_freq": freq, "miss_decay_slope": slope, "p_no_backtrack": escape}
    if monotone and (freq[-1] >= b.recurrent_level or slope <= b.decay_slope):
        return RECURRENT, ev
    esc_se = math.sqrt(max(escape * (1 - escape), 1e-12) / n)
    if freq[-1] < b.recurrent_level and slope > b.decay_slope and escape > 3 * esc_se:
        return RIGHT, ev
    return INCONCLUSIVE, ev


def _observe_speed(law: EnvironmentLaw, b: RegimeBudget) -> tuple[str, dict]:
    batch = simulate_paths(law, b.seed, b.speed_paths, b.speed_horizon, b.margin,
                           b.workers, chunk=16)
    direct = float(batch.endpoints.mean() / b.speed_horizon)
    ev = {"mean_XH_over_H": direct, "speed_horizon": b.speed_horizon}
    if abs(direct) < b.speed_tol:
        return V_ZERO, ev
    try:
        est = estimate_speed(batch, b.level)
    except ValueError:
        return INCONCLUSIVE, ev
    ev.update(v_hat=est.v_hat, v_ci=(est.ci_lo, est.ci_hi))
    if est.ci_lo > 0:
        return V_POS, ev
    if est.ci_hi < 0:
        return V_NEG, ev
    return INCONCLUSIVE, ev


def _observe_clt(law: EnvironmentLaw, b: RegimeBudget) -> tuple[str, dict]:
    batch = simulate_paths(law, b.seed, b.clt_paths, b.clt_horizon, b.margin, b.workers)
    s = estimate_sigma2_clt(batch)
    ev = {"sigma2_cycles": s.sigma2_cycles, "sigma2_paths": s.sigma2_paths,
          "ks": s.ks_stat, "ks_crit_1pct": s.ks_crit_1pct}
    return (CLT_YES if s.normal_ok and not s.degenerate else CLT_NO), ev


def verify_regime(law: EnvironmentLaw, budget: RegimeBudget | None = None) -> RegimeVerdict:
    """Run the battery and compare observed behaviour with the prediction.

    Laws with negative drift are simulated through their reflection and the
    observations mirrored, so a law and its reflection get mirrored verdicts.
    Facets within ``budget.near`` of the recurrence (1) or speed (2)
    thresholds are reported inconclusive without simulating.
    """
    b = budget or RegimeBudget()
    b.validate()
    if not check_ellipticity(law):
        raise EllipticityRefused("environment law is not elliptic; refusing to classify")
    d = drift(law)
    flip = d < 0
    sim_law = reflect(law) if flip else law
    a = abs(d)
    pred = predict_regime(d)
    ev: dict = {}

    if abs(a - 1) < b.near:
        rec = INCONCLUSIVE
    else:
        freq, escape = _return_curve(sim_law, b)
        rec, e = _observe_recurrence(freq, escape, b, b.return_paths)
        ev.update(e)
    if abs(a - 2) < b.near:
        speed = INCONCLUSIVE
    else:
        speed, e = _observe_speed(sim_law, b)
        ev.update(e)
    if pred.clt == CLT_YES:
        clt, e = _observe_clt(sim_law, b)
        ev.update(e)
    else:
        clt = CLT_NO

    obs = Regime(rec, speed, clt)
    if flip:
        obs = obs.mirrored()
        for k in ("mean_XH_over_H", "v_hat"):
            if k in ev:
                ev[k] = -ev[k]
        if "v_ci" in ev:
            ev["v_ci"] = (-ev["v_ci"][1], -ev["v_ci"][0])
    agree = {"recurrence": _facet_agree(pred.recurrence, obs.recurrence),
             "speed": _facet_agree(pred.speed, obs.speed),
             "clt": _facet_agree(pred.clt, obs.clt) if pred.clt == CLT_YES else None}
    ev["budget"] = asdict(b)
    return RegimeVerdict(d, pred, obs, agree, ev)


def run_parallel(fn, items, workers: int = 1) -> list:
    """Map ``fn`` over ``items`` in order; ``workers`` only changes scheduling."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))
