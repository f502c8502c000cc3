"""Detection-probability and damage bounds, plus a balls-into-bins oracle.

All logarithms are natural.  Rates are in bytes/second, times in seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


WINDOW_LIMIT = 2_000_000
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _stirlerr(n: float) -> float:
    """log(n!) - log(sqrt(2 pi n) (n/e)^n)."""
    n = float(n)
    if n < 16:
        return math.lgamma(n + 1) - (n + 0.5) * math.log(n) + n - _HALF_LOG_2PI
    n2 = n * n
    return (1 / 12 - (1 / 360 - (1 / 1260 - 1 / (1680 * n2)) / n2) / n2) / n


def _bd0(x: float, lam: float) -> float:
    """x log(x/lam) + lam - x without cancellation."""
    if abs(x - lam) < 0.1 * (x + lam):
        v = (x - lam) / (x + lam)
        s = (x - lam) * v
        ej = 2 * x * v
        v2 = v * v
        for j in range(3, 200, 2):
            ej *= v2
            s1 = s + ej / j
            if s1 == s:
                return s
            s = s1
        return s
    return x * math.log(x / lam) + lam - x


def log_pmf(x: int, lam: float) -> float:
    if x == 0:
        return -lam
    x = float(x)
    return -_stirlerr(x) - _bd0(x, lam) - _HALF_LOG_2PI - 0.5 * math.log(x)


def _log_sum(logt: np.ndarray) -> float:
    top = logt.max()
    return top + math.log(np.exp(logt - top).sum())


def poisson_cdf(k: int, lam: float) -> float:
    """Q(k, lam) = P[Pois(lam) <= k], summed in log space.

    Terms are generated outward from term k, which is evaluated in the
    saddle-point form so no large logs cancel.  Below the mean the lower
    tail is summed; above it Q is one minus the upper tail, so values near
    1 keep full precision.  Only terms within 60 standard deviations of the
    mean contribute; wider windows go to scipy's incomplete-gamma routine.
    """
    if lam <= 0:
        raise DomainError("lambda must be positive")
    if k < 0:
        return 0.0
    spread = 60 * math.sqrt(lam) + 200
    lo, hi = max(0, math.floor(lam - spread)), math.ceil(lam + spread)
    if k >= hi:
        return 1.0
    if k < lo:
        return 0.0
    if hi - lo > WINDOW_LIMIT:
        from scipy.special import pdtr
        return float(pdtr(k, lam))
    k = int(k)
    ll = math.log(lam)
    if k < lam:
        i = np.arange(k, lo, -1, dtype=np.float64)
        down = np.concatenate(([0.0], np.cumsum(np.log(i) - ll)))
        return min(1.0, math.exp(log_pmf(k, lam) + _log_sum(down)))
    i = np.arange(k + 2, hi + 1, dtype=np.float64)
    up = np.concatenate(([0.0], np.cumsum(ll - np.log(i))))
    tail = math.exp(log_pmf(k + 1, lam) + _log_sum(up))
    return min(1.0, max(0.0, 1.0 - tail))


def k_value(m: int, n: float, alpha: float) -> int:
    lam = n / m
    return math.floor(lam + math.sqrt(2 * lam * math.log(n)) - alpha)


def single_level_bound(m: int, n: float, alpha: float) -> float:
    """1 - Q(K, n/m): chance a flat flow at alpha*gamma wins one level."""
    if not n > m >= 2:
        raise DomainError("need n > m >= 2")
    return min(1.0, max(0.0, 1.0 - poisson_cdf(k_value(m, n, alpha), n / m)))


def alpha_half(m: int, n: float) -> float:
    if not n > m:
        raise DomainError("need n > m")
    return math.sqrt(2 * (n / m) * math.log(n))


def alpha_one(m: int, n: float) -> float:
    return 2 * alpha_half(m, n)


def level_exponent(m: int, n: float, n_gamma: float) -> int:
    """floor(log_m(n / n_gamma)) + 1, computed without float log error."""
    e = 0
    scale = n_gamma * m
    while scale <= n:
        e += 1
        scale *= m
    return e + 1


def total_detection_bound(m: int, n: float, n_gamma: float, alpha: float) -> float:
    if n >= n_gamma:
        p = single_level_bound(m, n_gamma, alpha)
        return p ** level_exponent(m, n, n_gamma)
    return single_level_bound(m, n, alpha)


@dataclass(frozen=True)
class BoundInputs:
    m: int
    n: float
    n_gamma: float
    alpha: float
    theta: float
    T_b: float
    d: int
    T_c1: float
    T_c2: float
    gamma: float
    gamma_h: float
    rho: float

    def __post_init__(self):
        for name in ("m", "n", "n_gamma", "alpha", "T_b", "d", "T_c1", "T_c2", "gamma",
                     "gamma_h", "rho"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not 0 < self.theta <= 1:
            raise DomainError("theta must lie in (0, 1]")


def twin_damage_bound(b: BoundInputs) -> float:
    """Upper bound on expected overuse damage (bytes) of a flow EARDet misses."""
    if not b.alpha * b.gamma < b.theta * b.gamma_h:
        raise DomainError("alpha*gamma < theta*gamma_h violated")
    long_burst = b.theta * b.T_b >= 2 * b.T_c1
    a = b.alpha / b.theta if long_burst else b.alpha
    pr = total_detection_bound(b.m, b.n, b.n_gamma, a)
    if pr <= 0:
        return math.inf
    if long_burst:
        return b.T_c1 * b.gamma * b.alpha / (b.theta * pr)
    return b.T_c1 * 2 * b.d * b.gamma_h / (b.theta * pr)


def fm_min_rate(beta: float, s_pkt: float, rate: float, m: int) -> float:
    return beta / s_pkt * rate / m


def fm_expected_track_time(m: int, t_pkt: float) -> float:
    return m * t_pkt


def amf_collision_free_prob(m: int, stages: int, n: int, approx: bool = False) -> float:
    w = m / stages
    if w < 1 or n < 1:
        raise DomainError("need m/stages >= 1 and n >= 1")
    hit = 1 - math.exp(-(n - 1) / w) if approx else 1 - (1 - 1 / w) ** (n - 1)
    return 1 - hit ** stages


def rlfd_bottom_collision_free(m: int, n_d: int, approx: bool = False) -> float:
    if m < 2:
        raise DomainError("need m >= 2")
    if approx:
        return math.exp(-(n_d - 1) / m)
    return ((m - 1) / m) ** (n_d - 1)


CUCKOO_LOAD_FACTOR = 0.91


def r_min_curves(m: int, n_gamma: float, theta: float, rho: float) -> dict[str, float]:
    clef = 4 * theta * math.sqrt(m * math.log(n_gamma) / n_gamma) * rho / m
    return {
        "clef": clef,
        "twin_rlfd": clef,
        "eardet": theta * rho / (m + 1),
        "fm": theta * rho / m,
        "amf_fm": theta * rho / m,
    }


def monte_carlo_single_level(m: int, n: int, alpha: float, rate: float = 1.0,
                             trials: int = 1000, rng: np.random.Generator | None = None,
                             batch: int = 500) -> tuple[float, float]:
    """Estimate P[attack counter strictly beats every other counter].

    Legit load is ``n / rate`` flows of weight ``rate`` (in units of
    gamma*T), so the aggregate stays n; the attacker adds ``alpha``.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    flows = int(round(n / rate))
    p = np.full(m, 1.0 / m)
    # compare in units of one legit flow so integer loads stay exact
    lead = round(alpha / rate, 9)
    wins = 0
    done = 0
    while done < trials:
        k = min(batch, trials - done)
        loads = rng.multinomial(flows, p, size=k).astype(np.float64)
        at = rng.integers(0, m, size=k)
        rows = np.arange(k)
        mine = loads[rows, at] + lead
        loads[rows, at] = -np.inf
        wins += int(np.count_nonzero(mine > loads.max(axis=1)))
        done += k
    est = wins / trials
    return est, math.sqrt(est * (1 - est) / trials)
