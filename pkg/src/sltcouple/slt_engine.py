"""Soft-local-time constructions driven by lazily generated Poisson marks.

Every construction walks the same loop: given the current curve ``G`` and a
step density ``g``, raise the curve by the smallest ``xi`` that makes it touch
an unconsumed mark, record that mark, and continue. Only the lowest pending
mark per site is materialised, since everything under the curve has already
been consumed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import TransitionModel

__all__ = [
    "MarkStream",
    "SltTrace",
    "RegenSchedule",
    "next_pick",
    "run_classical",
    "run_regen",
    "run_permuted",
    "run_iid",
    "build_schedule",
    "schedule_from_flags",
]


class MarkStream:
    """Poisson marks on ``sites x [0, inf)`` with intensity ``pi (x) Lebesgue``.

    Heights at site ``x`` are cumulative sums of Exponential(rate ``pi[x]``)
    gaps. Gaps are pre-drawn in per-site buffers of ``chunk`` standard
    exponentials; a site that runs dry refills its own buffer.
    """

    def __init__(self, pi, rng: np.random.Generator, chunk: int = 256, log: bool = False):
        self.pi = [float(v) for v in pi]
        self.rng = rng
        self.chunk = max(1, int(chunk))
        d = len(self.pi)
        block = rng.standard_exponential((d, self.chunk))
        self._buf = [row.tolist() for row in block]
        self._pos = [1] * d
        self.heights = [self._buf[x][0] / self.pi[x] for x in range(d)]
        self.log: Optional[list] = [] if log else None

    def _gap(self, x: int) -> float:
        pos = self._pos[x]
        if pos == self.chunk:
            self._buf[x] = self.rng.standard_exponential(self.chunk).tolist()
            pos = 0
        self._pos[x] = pos + 1
        return self._buf[x][pos] / self.pi[x]

    def consume(self, x: int) -> float:
        """Remove the lowest pending mark at ``x`` and return its height."""
        t = self.heights[x]
        self.heights[x] = t + self._gap(x)
        if self.log is not None:
            self.log.append((x, t))
        return t


def next_pick(curve: list, density, streams: MarkStream):
    """Advance ``curve`` along ``density`` until it meets the next mark.

    ``curve`` is updated in place to ``curve + xi * density``; the touched mark
    is consumed. Ties go to the lowest site index.

    Returns
    -------
    (xi, site, height)
    """
    heights = streams.heights
    best = None
    site = -1
    for z, g in enumerate(density):
        if g > 0.0:
            r = (heights[z] - curve[z]) / g
            if best is None or r < best:
                best = r
                site = z
    if best is None:
        raise ValueError("step density is identically zero")
    for z, g in enumerate(density):
        if g != 0.0:
            curve[z] += best * g
    t = streams.consume(site)
    return best, site, t


@dataclass
class SltTrace:
    """Record of one soft-local-time run.

    ``curves`` holds every intermediate curve (row ``i`` is ``G_{i+1}``) only
    when the run was asked to keep them.
    """

    n: int
    xi: list
    sites: list
    heights: list
    curve: np.ndarray
    curve_at_split: Optional[np.ndarray] = None
    split: Optional[int] = None
    curves: Optional[np.ndarray] = None
    densities: Optional[np.ndarray] = None

    def counts(self, size: int) -> np.ndarray:
        return np.bincount(np.asarray(self.sites, dtype=np.int64), minlength=size)

    def to_csv(self, fh, states=None):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "site", "xi", "height"])
        for i, (s, x, t) in enumerate(zip(self.sites, self.xi, self.heights), start=1):
            w.writerow([i, s if states is None else states[s], repr(x), repr(t)])

    def curve_to_csv(self, fh, states=None):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "G"])
        for s, g in enumerate(self.curve):
            w.writerow([s if states is None else states[s], repr(float(g))])


@dataclass
class RegenSchedule:
    """Regeneration flags and the block bookkeeping derived from them.

    Indices follow the 1-based convention: ``I[0]`` is the flag of step 1.
    ``S`` maps step ``j`` (1-based, stored at ``S[j-1]``) to its position in
    the permuted construction; ``S_inv`` is the inverse on the same footing.
    """

    I: np.ndarray
    rho: list
    T: list
    H: list
    S: np.ndarray
    S_inv: np.ndarray
    sigma_n: int
    n: int = field(default=0)

    @property
    def h_size(self) -> int:
        return len(self.H)

    @property
    def split(self) -> int:
        return self.n - len(self.H)


def schedule_from_flags(I, next_regen: Optional[int] = None) -> RegenSchedule:
    """Derive the split set and its permutation from explicit flags ``I_1..I_n``.

    ``next_regen`` is the first regeneration time after ``n`` (if known); it
    closes the last block for ``rho``/``T``.
    """
    I = np.asarray(I, dtype=np.int8)
    n = I.size
    if n < 1 or I[0] != 1:
        raise ValueError("need n >= 1 and I_1 = 1")
    pair = np.zeros(n + 1, dtype=np.int64)  # pair[j] = I_j I_{j+1} for 2 <= j <= n-1
    if n >= 3:
        pair[2:n] = I[1 : n - 1] * I[2:n]
    H = [j for j in range(2, n) if pair[j]]
    if n >= 2 and I[n - 1] == 1:
        H.append(n)
    in_H = np.zeros(n + 1, dtype=bool)
    in_H[H] = True
    cum = np.concatenate([[0], np.cumsum(pair)])  # cum[k] = sum_{i <= k-1} pair[i]
    n_comp = n - len(H)
    S = np.empty(n, dtype=np.int64)
    rank_h = 0
    for j in range(1, n + 1):
        if in_H[j]:
            rank_h += 1
            S[j - 1] = n_comp + rank_h
        else:
            # j - sum_{i=2}^{j-1} I_i I_{i+1}
            S[j - 1] = j - cum[j]
    S_inv = np.empty(n, dtype=np.int64)
    S_inv[S - 1] = np.arange(1, n + 1)
    rho = [int(j) for j in np.flatnonzero(I) + 1]
    if next_regen is not None:
        rho.append(int(next_regen))
    T = [b - a for a, b in zip(rho[:-1], rho[1:])]
    sigma_n = next((k for k, r in enumerate(rho) if r > n), len(rho))
    return RegenSchedule(I=I, rho=rho, T=T, H=H, S=S, S_inv=S_inv, sigma_n=sigma_n, n=n)


def build_schedule(n: int, q: float, rng: np.random.Generator) -> RegenSchedule:
    """Draw ``I_1 = 1, I_j ~ Bernoulli(q)`` and the first regeneration after ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    I = np.ones(n, dtype=np.int8)
    if n > 1:
        I[1:] = rng.random(n - 1) < q
    next_regen = n + int(rng.geometric(q)) if q > 0 else None
    return schedule_from_flags(I, next_regen)


def _run(densities_for_step, n, d, mark_rng, keep_curves, split=None, pi=None):
    streams = MarkStream(pi, mark_rng, chunk=min(n + 1, 1024))
    curve = [0.0] * d
    xi, sites, heights = [], [], []
    at_split = None
    curves = [] if keep_curves else None
    dens_log = [] if keep_curves else None
    prev = -1
    for i in range(1, n + 1):
        g = densities_for_step(i, prev)
        e, s, t = next_pick(curve, g, streams)
        xi.append(e)
        sites.append(s)
        heights.append(t)
        prev = s
        if keep_curves:
            curves.append(list(curve))
            dens_log.append(list(g))
        if split is not None and i == split:
            at_split = np.array(curve)
    return SltTrace(
        n=n, xi=xi, sites=sites, heights=heights, curve=np.array(curve),
        curve_at_split=at_split, split=split,
        curves=np.array(curves) if keep_curves else None,
        densities=np.array(dens_log) if keep_curves else None,
    )


def run_classical(model: TransitionModel, n: int, rng: np.random.Generator,
                  keep_curves: bool = False) -> SltTrace:
    """Chain construction: density ``nu`` first, then ``p(x_{i-1}, .)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    nu = model.nu.tolist()
    rows = model.density.tolist()

    def dens(i, prev):
        return nu if i == 1 else rows[prev]

    return _run(dens, n, model.size, rng, keep_curves, pi=model.pi)


def run_regen(model: TransitionModel, n: int, rng: np.random.Generator,
              keep_curves: bool = False):
    """Chain construction through the split ``p = q + (1 - q) mu``.

    Returns
    -------
    (SltTrace, RegenSchedule)
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mark_rng, flag_rng = rng.spawn(2)
    sched = build_schedule(n, model.q, flag_rng)
    nu = model.nu.tolist()
    ones = [1.0] * model.size
    mu = model.mu.tolist()
    I = sched.I.tolist()

    def dens(i, prev):
        if i == 1:
            return nu
        return ones if I[i - 1] else mu[prev]

    return _run(dens, n, model.size, mark_rng, keep_curves, pi=model.pi), sched


def run_permuted(model: TransitionModel, n: int, rng: np.random.Generator,
                 keep_curves: bool = False, schedule: Optional[RegenSchedule] = None):
    """Blocks of length > 1 first, then the length-one blocks in ``H``.

    The trace records ``split = |H^c|`` and the curve after that step.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mark_rng, flag_rng = rng.spawn(2)
    sched = schedule if schedule is not None else build_schedule(n, model.q, flag_rng)
    nu = model.nu.tolist()
    ones = [1.0] * model.size
    mu = model.mu.tolist()
    I = sched.I.tolist()
    S_inv = sched.S_inv.tolist()
    split = sched.split

    def dens(i, prev):
        if i == 1:
            return nu
        flag = I[S_inv[i - 1] - 1]
        if i > split and not flag:
            raise RuntimeError(f"tail step {i} has I = 0; split set is inconsistent")
        return ones if flag else mu[prev]

    trace = _run(dens, n, model.size, mark_rng, keep_curves, split=split, pi=model.pi)
    return trace, sched


def run_iid(model: TransitionModel, n: int, rng: np.random.Generator,
            keep_curves: bool = False) -> SltTrace:
    """i.i.d. ``pi`` construction: a flat density at every step."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ones = [1.0] * model.size
    return _run(lambda i, prev: ones, n, model.size, rng, keep_curves, pi=model.pi)
