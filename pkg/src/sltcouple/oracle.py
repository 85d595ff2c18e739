"""Exact brute-force references for small chains.

Local-time laws come from a dynamic programme over (last state, counts of
all but the last site); trajectory quantities come from full enumeration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .binproc import EnumerationInfeasible, multinomial_pmf_table
from .model import ModelError, TransitionModel

DP_CAP = 10_000_000
TRAJ_CAP = 1_000_000


@dataclass
class CountDistribution:
    """Exact law of a count vector: ``support[k]`` has mass ``probs[k]``."""

    support: np.ndarray
    probs: np.ndarray

    def as_dict(self) -> dict:
        return {tuple(int(c) for c in row): float(p) for row, p in zip(self.support, self.probs)}

    def marginal_mean(self) -> np.ndarray:
        return self.probs @ self.support

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        d = self.support.shape[1]
        w.writerow([f"count_{x}" for x in range(d)] + ["prob"])
        for row, p in zip(self.support, self.probs):
            w.writerow([int(c) for c in row] + [repr(float(p))])


def _check_dp_cap(n: int, d: int, cap: int):
    states = math.comb(n + d - 1, d - 1) * d
    if states > cap:
        raise EnumerationInfeasible(f"{states} DP states exceed cap {cap}")


def _shift(a: np.ndarray, axis: int) -> np.ndarray:
    """Move mass one step up along ``axis`` (count of that site +1)."""
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    src[axis] = slice(0, -1)
    dst[axis] = slice(1, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _localtime_table(P: np.ndarray, init: np.ndarray, n: int) -> np.ndarray:
    """Dense table ``A[last, c_0, ..., c_{d-2}]`` after ``n`` steps."""
    d = P.shape[0]
    shape = (d,) + (n + 1,) * (d - 1)
    A = np.zeros(shape)
    for x in range(d):
        idx = [x] + [0] * (d - 1)
        if x < d - 1:
            idx[1 + x] = 1
        A[tuple(idx)] = init[x]
    for _ in range(n - 1):
        B = np.zeros(shape)
        for y in range(d):
            mass = np.tensordot(P[:, y], A, axes=(0, 0))
            B[y] = _shift(mass, y) if y < d - 1 else mass
        A = B
    return A


def chain_localtime_dist(model: TransitionModel, n: int, cap: int = DP_CAP) -> CountDistribution:
    """Exact law of the visit counts of ``X_1..X_n`` (``X_1 ~ nu d pi``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = model.size
    _check_dp_cap(n, d, cap)
    init = model.nu * model.pi
    if d == 1:
        return CountDistribution(np.array([[n]]), np.array([1.0]))
    A = _localtime_table(model.P, init, n).sum(axis=0)
    grids = np.indices(A.shape).reshape(d - 1, -1).T
    last = n - grids.sum(axis=1)
    keep = last >= 0
    support = np.column_stack([grids[keep], last[keep]])
    probs = A.reshape(-1)[keep]
    return CountDistribution(support.astype(np.int64), probs)


def iid_localtime_dist(pi, n: int, cap: int = DP_CAP) -> CountDistribution:
    comps, pmf = multinomial_pmf_table(n, pi, cap)
    return CountDistribution(np.array(comps), pmf)


def _align(dist: CountDistribution, support: np.ndarray) -> np.ndarray:
    lookup = dist.as_dict()
    return np.array([lookup.get(tuple(int(c) for c in row), 0.0) for row in support])


def exact_tv_localtimes(model: TransitionModel, n: int, cap: int = DP_CAP) -> float:
    """Total variation between the chain's local-time field and Multinomial(n, pi)."""
    chain = chain_localtime_dist(model, n, cap)
    if model.epsilon == 0.0:
        # p and nu are identically 1, so both laws are Multinomial(n, pi)
        return 0.0
    d = model.size
    if d == 2:
        # support is ordered by count of site 0 ascending
        k = chain.support[:, 0]
        iid = stats.binom.pmf(k, n, model.pi[0])
    else:
        iid_dist = iid_localtime_dist(model.pi, n, max(cap, chain.support.shape[0]))
        iid = _align(iid_dist, chain.support)
    return float(min(1.0, 0.5 * np.abs(chain.probs - iid).sum()))


def _trajectory_probs(P: np.ndarray, init: np.ndarray, n: int) -> np.ndarray:
    """Probabilities of all ``d**n`` trajectories (lexicographic order)."""
    probs = init.copy()
    d = P.shape[0]
    for _ in range(n - 1):
        last_block = probs.reshape(-1, d)
        probs = (last_block[:, :, None] * P[None, :, :]).reshape(-1)
    return probs


def trajectory_tv(model: TransitionModel, n: int, cap: int = TRAJ_CAP) -> float:
    """Total variation between the laws of ``(X_1..X_n)`` and ``(Y_1..Y_n)``."""
    d = model.size
    if d ** n > cap:
        raise EnumerationInfeasible(f"{d}**{n} trajectories exceed cap {cap}")
    if model.epsilon == 0.0:
        return 0.0
    chain = _trajectory_probs(model.P, model.nu * model.pi, n)
    iid_P = np.tile(model.pi, (d, 1))
    iid = _trajectory_probs(iid_P, model.pi.copy(), n)
    return float(min(1.0, 0.5 * np.abs(chain - iid).sum()))


def trajectory_localtime_dist(model: TransitionModel, n: int, cap: int = TRAJ_CAP) -> CountDistribution:
    """Local-time law by summing over every trajectory (independent of the DP)."""
    d = model.size
    if d ** n > cap:
        raise EnumerationInfeasible(f"{d}**{n} trajectories exceed cap {cap}")
    probs = _trajectory_probs(model.P, model.nu * model.pi, n)
    paths = np.indices((d,) * n).reshape(n, -1).T
    counts = np.stack([(paths == x).sum(axis=1) for x in range(d)], axis=1)
    keys, inv = np.unique(counts, axis=0, return_inverse=True)
    agg = np.bincount(inv.reshape(-1), weights=probs, minlength=len(keys))
    return CountDistribution(keys, agg)


def _repeat_count_dist(P: np.ndarray, init: np.ndarray, n: int) -> np.ndarray:
    """Law of ``#{j < n : Z_j = Z_{j+1}}`` for a two-state chain."""
    # A[s, r]: last state s, r repeats so far
    A = np.zeros((2, n))
    A[:, 0] = init
    for _ in range(n - 1):
        B = np.zeros_like(A)
        for s in range(2):
            B[s, 1:] += A[s, :-1] * P[s, s]
            B[1 - s] += A[s] * P[s, 1 - s]
        A = B
    return A.sum(axis=0)


def xi_event_probs(model: TransitionModel, n: int, threshold: float | None = None,
                   cap: int = DP_CAP):
    """Exact probabilities that the repeat frequency exceeds ``threshold``.

    The event is ``(1/n) * #{j <= n-1 : Z_j = Z_{j+1}} > threshold``. The
    default threshold is ``1/2 + eps'/2`` with ``eps' = eps/2``, the excess
    stay probability of a symmetric two-state chain.

    Returns
    -------
    (P[event for X], P[event for Y])
    """
    if model.size != 2:
        raise ModelError("xi_event_probs needs a two-state model")
    if 2 * n > cap:
        raise EnumerationInfeasible(f"repeat-count DP for n={n} exceeds cap {cap}")
    if threshold is None:
        threshold = 0.5 + model.epsilon / 4.0
    # R / n > threshold  <=>  R > floor(n * threshold), guarding exact integers
    cut = math.floor(n * threshold + 1e-9)
    rx = _repeat_count_dist(model.P, model.nu * model.pi, n)
    px = float(rx[cut + 1 :].sum()) if cut + 1 < n else 0.0
    pi = model.pi
    if np.allclose(pi, 0.5, rtol=0, atol=1e-15):
        py = float(stats.binom.sf(cut, n - 1, 0.5))
    else:
        ry = _repeat_count_dist(np.tile(pi, (2, 1)), pi.copy(), n)
        py = float(ry[cut + 1 :].sum()) if cut + 1 < n else 0.0
    return px, py


def visit_expectations(model: TransitionModel, n: int) -> np.ndarray:
    """``sum_j P[X_j = x]`` by matrix powers."""
    law = model.nu * model.pi
    total = np.zeros(model.size)
    for _ in range(n):
        total += law
        law = law @ model.P
    return total
