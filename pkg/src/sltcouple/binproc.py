"""Binomial point processes on a finite ground set.

A binomial point process with base law ``p`` and ``n`` points is identified
with its count vector, which is Multinomial(n, p). Total variation is computed
exactly by enumerating compositions of ``n``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

DEFAULT_CAP = 2_000_000


class EnumerationInfeasible(RuntimeError):
    """Raised when a composition enumeration would exceed its cap."""


@dataclass(frozen=True)
class BinomialProcessSpec:
    base: np.ndarray
    count: int

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        if abs(base.sum() - 1.0) > 1e-12 or np.any(base < 0):
            raise ValueError("base must be a probability vector")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        object.__setattr__(self, "base", base)


def n_compositions(n: int, d: int) -> int:
    return math.comb(n + d - 1, d - 1)


@lru_cache(maxsize=64)
def _compositions(n: int, d: int) -> np.ndarray:
    if d == 1:
        return np.array([[n]], dtype=np.int64)
    if d == 2:
        k = np.arange(n, -1, -1, dtype=np.int64)
        return np.column_stack([k, n - k])
    # stars and bars: bar positions among n + d - 1 slots
    bars = np.array(list(itertools.combinations(range(n + d - 1), d - 1)), dtype=np.int64)
    bars = bars.reshape(-1, d - 1)
    edges = np.column_stack([np.full(len(bars), -1), bars, np.full(len(bars), n + d - 1)])
    return np.diff(edges, axis=1) - 1


def compositions(n: int, d: int, cap: int = DEFAULT_CAP) -> np.ndarray:
    """All count vectors of length ``d`` summing to ``n`` (read-only, cached)."""
    k = n_compositions(n, d)
    if k > cap:
        raise EnumerationInfeasible(f"{k} compositions of {n} into {d} parts exceed cap {cap}")
    out = _compositions(n, d)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=64)
def _log_coef(n: int, d: int) -> np.ndarray:
    comps = _compositions(n, d)
    return gammaln(n + 1) - gammaln(comps + 1).sum(axis=1)


def _log_terms(comps: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """``sum_x c_x log p_x`` with the convention ``0 log 0 = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(comps > 0, comps * np.log(probs), 0.0)
    return terms.sum(axis=1)


def multinomial_logpmf(comps: np.ndarray, probs) -> np.ndarray:
    """Log multinomial pmf at every row of ``comps`` (``-inf`` off the support)."""
    comps = np.asarray(comps)
    probs = np.asarray(probs, dtype=float)
    n = int(comps[0].sum())
    coef = gammaln(n + 1) - gammaln(comps + 1).sum(axis=1)
    return coef + _log_terms(comps, probs)


def multinomial_pmf_table(n: int, probs, cap: int = DEFAULT_CAP):
    """``(compositions, pmf)`` for Multinomial(n, probs) over its full support."""
    probs = np.asarray(probs, dtype=float)
    comps = compositions(n, probs.size, cap)
    logpmf = _log_coef(n, probs.size) + _log_terms(comps, probs)
    # masses below 1e-300 contribute nothing at double precision
    pmf = np.where(logpmf > -690.0, np.exp(logpmf), 0.0)
    return comps, pmf


def rn_product(points, p, q) -> float:
    """Radon-Nikodym derivative of the q-process w.r.t. the p-process at ``points``.

    ``points`` is a sequence of site indices (a multiset); the result is
    ``prod q(x) / p(x)`` over the points.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = 1.0
    for x in points:
        if p[x] <= 0:
            raise ZeroDivisionError(f"base mass at site {x} is zero")
        out *= q[x] / p[x]
    return out


def exact_tv_binomial(p, q, n: int, cap: int = DEFAULT_CAP) -> float:
    """Total variation between the n-point binomial processes with bases p and q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("bases must live on the same ground set")
    if np.array_equal(p, q):
        return 0.0
    _, fp = multinomial_pmf_table(n, p, cap)
    _, fq = multinomial_pmf_table(n, q, cap)
    return float(min(1.0, 0.5 * np.abs(fp - fq).sum()))


def c1_constant(delta0: float) -> float:
    """``exp(d0^2) sinh(d0^2) / d0 + sqrt(2 pi) exp(5 d0^2 / 2)``."""
    if not 0 < delta0 <= 1:
        raise ValueError("delta0 must lie in (0, 1]")
    d2 = delta0 * delta0
    return math.exp(d2) * math.sinh(d2) / delta0 + math.sqrt(2 * math.pi) * math.exp(2.5 * d2)


def prop51_bound(delta: float, delta0: float = 1.0) -> float:
    """Upper bound ``C1(delta0) * delta`` on binomial-process TV.

    Valid when the likelihood ratio of the bases stays within
    ``delta / sqrt(n)`` of 1.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta >= delta0:
        raise ValueError("delta must be strictly below delta0")
    return c1_constant(delta0) * delta
