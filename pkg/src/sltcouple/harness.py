"""Seeded replicate runner, goodness-of-fit tests and block diagnostics."""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .bounds import BoundInputs, f_value
from .model import TransitionModel
from .oracle import CountDistribution
from .slt_engine import run_classical

# ---------------------------------------------------------------------------
# RNG derivation and replicate execution
# ---------------------------------------------------------------------------


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_rng(seed: int, tag: str, rep: int) -> np.random.Generator:
    """Generator for replicate ``rep`` of the experiment ``tag``.

    Streams depend only on ``(seed, tag, rep)``, never on execution order.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tag_id(tag), rep)))


def _run_chunk(fn, seed, tag, reps, args):
    return [fn(derive_rng(seed, tag, r), *args) for r in reps]


def run_replicates(fn: Callable, reps: int, seed: int, tag: str, args: tuple = (),
                   threads: int = 1) -> list:
    """Evaluate ``fn(rng, *args)`` for ``reps`` replicates, results in replicate order.

    With ``threads > 1`` chunks go to a process pool; ``fn`` must then be a
    module-level callable. Output is identical for any ``threads``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if threads <= 1 or reps < 2 * threads:
        return _run_chunk(fn, seed, tag, range(reps), args)
    bounds = np.linspace(0, reps, 4 * threads + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(_run_chunk, *zip(*[(fn, seed, tag, c, args) for c in chunks]))
        out = []
        for part in parts:
            out.extend(part)
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ReplicateReport:
    reps: int
    estimate: float
    stderr: float
    ci95: tuple
    test_stats: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return json.dumps(d, sort_keys=True)


def proportion_report(successes: int, reps: int, **test_stats) -> ReplicateReport:
    """Proportion with a Wilson 95% interval."""
    p = successes / reps
    ci = stats.binomtest(int(successes), int(reps)).proportion_ci(0.95, method="wilson")
    return ReplicateReport(reps, p, math.sqrt(p * (1 - p) / reps), (float(ci.low), float(ci.high)), dict(test_stats))


def mean_report(values, **test_stats) -> ReplicateReport:
    """Sample mean with a normal 95% interval."""
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return ReplicateReport(int(v.size), m, se, (m - 1.96 * se, m + 1.96 * se), dict(test_stats))


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------


def ks_exponential(samples):
    """One-sample KS test against Exp(1) with the asymptotic p-value."""
    x = np.asarray(samples, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 samples")
    res = stats.kstest(x, "expon", method="asymp")
    return float(res.statistic), float(res.pvalue)


def tally(observed) -> dict:
    """Count occurrences of each observed vector (rows of a 2-D array)."""
    arr = np.asarray(observed)
    if arr.ndim == 1:
        arr = arr[:, None]
    keys, counts = np.unique(arr, axis=0, return_counts=True)
    return {tuple(int(c) for c in k): int(n) for k, n in zip(keys, counts)}


def chi_square_vs_dist(observed, exact: CountDistribution, min_expected: float = 5.0):
    """Pearson test of observed count vectors against an exact law.

    Cells with expected count below ``min_expected`` are pooled (and the pool
    is topped up with the next smallest cell until it qualifies).

    Parameters
    ----------
    observed : dict or (R, d) array_like
        Either a tally ``{count_vector: frequency}`` or the raw vectors.
    exact : CountDistribution

    Returns
    -------
    (statistic, p_value)
    """
    obs = observed if isinstance(observed, dict) else tally(observed)
    total = sum(obs.values())
    law = exact.as_dict()
    if any(k not in law or law[k] <= 0 for k in obs):
        return math.inf, 0.0
    keys = list(law)
    expected = np.array([law[k] * total for k in keys])
    counts = np.array([obs.get(k, 0) for k in keys], dtype=float)
    order = np.argsort(expected, kind="stable")
    expected, counts = expected[order], counts[order]
    small = expected < min_expected
    k = int(small.sum())
    pool_e, pool_o = expected[:k].sum(), counts[:k].sum()
    while k < expected.size and 0 < pool_e < min_expected:
        pool_e += expected[k]
        pool_o += counts[k]
        k += 1
    cells_e = list(expected[k:])
    cells_o = list(counts[k:])
    if pool_e > 0:
        cells_e.append(pool_e)
        cells_o.append(pool_o)
    if len(cells_e) < 2:
        raise ValueError("fewer than two cells remain after pooling")
    e = np.array(cells_e)
    o = np.array(cells_o)
    stat = float(((o - e) ** 2 / e).sum())
    return stat, float(stats.chi2.sf(stat, len(e) - 1))


# ---------------------------------------------------------------------------
# Block functionals
# ---------------------------------------------------------------------------


@dataclass
class WhatBlock:
    length: int
    values: np.ndarray
    exp_total: float


@dataclass
class WhatBlocks:
    """A batch of i.i.d. blocks stored column-wise; indexing yields :class:`WhatBlock`."""

    lengths: np.ndarray
    values: np.ndarray
    exp_totals: np.ndarray

    def __len__(self):
        return self.lengths.size

    def __getitem__(self, i) -> WhatBlock:
        return WhatBlock(int(self.lengths[i]), self.values[i], float(self.exp_totals[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def _next_states(cdf_rows: np.ndarray, states: np.ndarray, rng) -> np.ndarray:
    u = rng.random(states.size)
    return (u[:, None] > cdf_rows[states]).sum(axis=1)


def simulate_what_blocks(model: TransitionModel, m: int, rng: np.random.Generator) -> WhatBlocks:
    """Draw ``m`` i.i.d. copies of ``sum_{k<=T} e_k (1 - p(M_{k-1}, .))``.

    ``T ~ Geometric(q)`` on {1, 2, ...}, ``M`` a stationary path of the chain
    and ``e_k`` i.i.d. Exp(1).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    d = model.size
    one_minus = 1.0 - model.density
    cdf_rows = np.cumsum(model.P, axis=1)
    cdf_rows[:, -1] = np.inf
    lengths = rng.geometric(model.q, m) if model.q < 1 else np.ones(m, dtype=np.int64)
    pi_cdf = np.cumsum(model.pi)
    state = np.minimum(np.searchsorted(pi_cdf, rng.random(m) * pi_cdf[-1], side="right"), d - 1)
    values = np.zeros((m, d))
    totals = np.zeros(m)
    idx = np.arange(m)
    k = 1
    while idx.size:
        e = rng.standard_exponential(idx.size)
        values[idx] += e[:, None] * one_minus[state]
        totals[idx] += e
        more = lengths[idx] > k
        idx = idx[more]
        if idx.size:
            state = _next_states(cdf_rows, state[more], rng)
        k += 1
    return WhatBlocks(lengths, values, totals)


@dataclass
class EpeResult:
    n_values: list
    reports: list
    F_unit: float | None
    fitted_c4: float | None

    def as_dict(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "mean": [r.estimate for r in self.reports],
            "stderr": [r.stderr for r in self.reports],
            "ci95": [list(r.ci95) for r in self.reports],
            "F_unit": self.F_unit,
            "fitted_C4": self.fitted_c4,
        }


def estimate_epe(model: TransitionModel, n_values: Sequence[int], reps: int,
                 rng: np.random.Generator, chunk_blocks: int = 2_000_000) -> EpeResult:
    """Monte Carlo of ``E[sup_x |sum_{k<=n} W_k(x)|] / sqrt(n)`` for each n.

    The fitted C4 is the smallest constant whose F dominates every upper
    confidence limit.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    reports = []
    for n in n_values:
        per = max(1, chunk_blocks // n)
        vals = []
        done = 0
        while done < reps:
            r = min(per, reps - done)
            blocks = simulate_what_blocks(model, r * n, rng)
            sums = blocks.values.reshape(r, n, model.size).sum(axis=1)
            vals.append(np.abs(sums).max(axis=1) / math.sqrt(n))
            done += r
        reports.append(mean_report(np.concatenate(vals), n=int(n)))
    F_unit = None
    fitted = None
    if model.epsilon > 0:
        F_unit = f_value(BoundInputs.from_model(model, C4=1.0))
        fitted = max(r.ci95[1] for r in reports) / F_unit
    return EpeResult(list(n_values), reports, F_unit, fitted)


def _rn_one(rng, model, n):
    tr = run_classical(model, n, rng)
    total = 0.0
    for v in tr.xi:
        total += v
    return float(np.max(np.abs(total - tr.curve))), total


def measure_rn(model: TransitionModel, n: int, reps: int, seed: int,
               quantiles=(0.1, 0.25, 0.5, 0.75, 0.9, 0.99), threads: int = 1) -> dict:
    """Quantiles of ``R_n = sup_x |sum xi - G_n(x)|`` over classical-construction runs."""
    res = run_replicates(_rn_one, reps, seed, f"rn:{n}", (model, n), threads)
    R = np.array([r for r, _ in res])
    totals = np.array([t for _, t in res])
    return {
        "n": n,
        "reps": reps,
        "quantiles": {str(q): float(np.quantile(R, q)) for q in quantiles},
        "median_over_sqrt_n": float(np.median(R) / math.sqrt(n)),
        "max_pathwise_excess": float(np.max(R - model.epsilon * totals)),
        "samples": R,
    }
