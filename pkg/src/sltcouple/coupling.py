"""Coupling of the chain's local-time field with the i.i.d. field.

The chain is built by the permuted soft-local-time construction. Everything
above the "dependent" curve at the split step is erased and rebuilt: the chain
side with i.i.d. ``pi`` sites ``V`` on its own tail curves, the i.i.d. side
with sites ``V'`` drawn from the compensating density ``Psi d pi`` and
maximally coupled with ``V`` at the level of count vectors.

Two variants of the i.i.d. side are available. ``"literal"`` draws all tail
sites from ``Psi d pi`` on G and a fresh ``Multinomial(n, pi)`` field off G.
``"exact"`` (the default) conditions correctly given the head of the chain:
the topmost tail mark lies on the flat curve, so its site follows ``pi``; and
off G the Poisson process above the split curve is resampled conditionally on
the head. Only ``"exact"`` has the i.i.d. field as its marginal law.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .binproc import DEFAULT_CAP, EnumerationInfeasible, multinomial_pmf_table, n_compositions
from .model import TransitionModel
from .slt_engine import RegenSchedule, SltTrace, run_permuted

OUTCOME_FIELDS = ["rep", "n", "eps", "F", "b_index", "in_G", "h_size", "success", "fallback"]
VARIANTS = ("exact", "literal")


class NoRegenerationTail(ValueError):
    """The split set is empty, so the tail denominator of Psi vanishes."""


@dataclass
class PsiDensity:
    values: np.ndarray
    sup_dev: float
    denominator: float

    def normalization(self, pi) -> float:
        return float(self.values @ np.asarray(pi))


@dataclass
class CouplingOutcome:
    """One realisation of the coupling.

    ``b_index`` is 0 and ``degenerate`` is set when the split set is empty;
    such runs count as failures. ``branch`` is one of ``"G"``,
    ``"psi_nonneg"`` (outside G with ``Psi >= 0``), ``"psi_negative"`` or
    ``"degenerate"``.
    """

    L_tilde: np.ndarray
    L_prime: np.ndarray
    b_index: int
    in_G: bool
    success: bool
    h_size: int
    degenerate: bool = False
    branch: str = "G"
    met: Optional[bool] = None
    fallback: bool = False
    psi: Optional[PsiDensity] = None
    eta_x: list = field(default_factory=list, repr=False)
    eta_y: list = field(default_factory=list, repr=False)


def compute_psi(trace: SltTrace) -> PsiDensity:
    """Compensating density from a permuted-construction trace.

    ``Psi(x) = 1 + (sum_{i <= split} xi_i - G_split(x)) / sum_{i > split} xi_i``
    """
    split = trace.split
    if split is None or trace.curve_at_split is None:
        raise ValueError("trace does not come from the permuted construction")
    if split >= trace.n:
        raise NoRegenerationTail("no regeneration tail (split set is empty)")
    # same summation order as the curve, so flat densities give Psi == 1 exactly
    head = 0.0
    for v in trace.xi[:split]:
        head += v
    tail = math.fsum(trace.xi[split:])
    values = 1.0 + (head - trace.curve_at_split) / tail
    return PsiDensity(values=values, sup_dev=float(np.max(np.abs(values - 1.0))), denominator=tail)


def classify_event(psi: PsiDensity, F: float, n: int):
    """Smallest ``i >= 1`` with ``sup|Psi - 1| <= (1 + i) F / sqrt(n)``, and G-membership."""
    if F <= 0:
        raise ValueError("F must be positive")
    scale = F / math.sqrt(n)
    i = max(1, math.ceil(psi.sup_dev / scale - 1.0))
    while i > 1 and psi.sup_dev <= i * scale:
        i -= 1
    while psi.sup_dev > (1 + i) * scale:
        i += 1
    return i, (1 + i) * F <= 1.0


def maximal_coupling_counts(m: int, base, tilted, v_counts, cap: int, rng: np.random.Generator):
    """Draw V' counts given V counts so the pair is maximally coupled.

    ``v_counts ~ Multinomial(m, base)`` is kept with probability
    ``min(1, Q(v) / P(v))``; otherwise V' comes from the normalised positive
    part of ``Q - P``. The meeting probability is ``1 - TV(P, Q)``.

    Returns
    -------
    (v_prime_counts, met)

    Raises
    ------
    EnumerationInfeasible
        When the number of compositions of ``m`` exceeds ``cap``.
    """
    base = np.asarray(base, dtype=float)
    tilted = np.asarray(tilted, dtype=float)
    v_counts = np.asarray(v_counts, dtype=np.int64)
    if int(v_counts.sum()) != m:
        raise ValueError("v_counts must sum to m")
    if np.array_equal(base, tilted):
        return v_counts.copy(), True
    d = base.size
    if n_compositions(m, d) > cap:
        raise EnumerationInfeasible(f"compositions of {m} into {d} parts exceed cap {cap}")
    comps, fp = multinomial_pmf_table(m, base, cap)
    _, fq = multinomial_pmf_table(m, tilted, cap)
    return _couple_tables(comps, fp, fq, v_counts, rng)


def top_pi_pmf(comps: np.ndarray, psi_values, pi) -> np.ndarray:
    """Count law of ``m - 1`` sites from ``Psi pi`` plus one site from ``pi``.

    Uses ``Mult(m-1, t)(c - e_x) = Mult(m, t)(c) c_x / (m t_x)`` with
    ``t = Psi pi``, so ``Q(c) = Mult(m, t)(c) sum_x c_x / (m Psi(x))``.
    ``Psi`` must be strictly positive.
    """
    psi_values = np.asarray(psi_values, dtype=float)
    m = int(comps[0].sum())
    _, fq = multinomial_pmf_table(m, psi_values * np.asarray(pi), comps.shape[0])
    return fq * (comps @ (1.0 / psi_values)) / m


def maximal_coupling_top_pi(m: int, pi, psi_values, v_counts, cap: int,
                            rng: np.random.Generator):
    """As :func:`maximal_coupling_counts`, with target :func:`top_pi_pmf`."""
    pi = np.asarray(pi, dtype=float)
    psi_values = np.asarray(psi_values, dtype=float)
    v_counts = np.asarray(v_counts, dtype=np.int64)
    if int(v_counts.sum()) != m:
        raise ValueError("v_counts must sum to m")
    if np.all(psi_values == 1.0):
        return v_counts.copy(), True
    if n_compositions(m, pi.size) > cap:
        raise EnumerationInfeasible(f"compositions of {m} into {pi.size} parts exceed cap {cap}")
    comps, fp = multinomial_pmf_table(m, pi, cap)
    return _couple_tables(comps, fp, top_pi_pmf(comps, psi_values, pi), v_counts, rng)


def _couple_tables(comps, fp, fq, v_counts, rng):
    k = _composition_index(comps, v_counts)
    u = rng.random()
    if u * fp[k] <= fq[k]:
        return v_counts.copy(), True
    resid = np.clip(fq - fp, 0.0, None)
    resid[k] = 0.0
    total = resid.sum()
    if total <= 0:
        return v_counts.copy(), True
    cdf = np.cumsum(resid)
    j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    j = min(j, len(cdf) - 1)
    return np.array(comps[j]), False


def _composition_index(comps: np.ndarray, v: np.ndarray) -> int:
    d = v.size
    if d == 2:
        # rows are ordered by the first count descending
        return int(comps[0, 0] - v[0])
    hits = np.flatnonzero((comps == v).all(axis=1))
    return int(hits[0])


def _sample_sites(pi, size: int, rng: np.random.Generator) -> np.ndarray:
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    cdf = np.cumsum(pi)
    u = rng.random(size) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(pi) - 1)


def _expand(counts: np.ndarray) -> np.ndarray:
    """Canonical (sorted) site vector with the given count vector."""
    return np.repeat(np.arange(counts.size), counts)


def _flat_fill(trace: SltTrace, pi, need_below: int, rng: np.random.Generator):
    """The ``n`` lowest marks of the Poisson process given the chain's head.

    Below the split curve the process consists of the head marks; above it a
    fresh process is drawn, conditioned to put at least ``need_below`` marks
    under the maximum of the split curve (rejection sampling). Returns
    ``(sites, heights)`` sorted by height.
    """
    n, split = trace.n, trace.split
    pi = np.asarray(pi, dtype=float)
    d = pi.size
    head_sites = np.asarray(trace.sites[:split], dtype=np.int64)
    head_heights = np.asarray(trace.heights[:split], dtype=float)
    curve = np.asarray(trace.curve_at_split, dtype=float) if split else np.zeros(d)
    top = curve.max()
    live = np.flatnonzero(pi > 0)
    fresh_sites = np.repeat(live, n)
    while True:
        gaps = rng.standard_exponential((live.size, n)) / pi[live, None]
        fresh = (curve[live, None] + np.cumsum(gaps, axis=1)).ravel()
        if need_below == 0 or np.count_nonzero(fresh < top) >= need_below:
            break
    sites = np.concatenate([head_sites, fresh_sites])
    heights = np.concatenate([head_heights, fresh])
    order = np.argsort(heights, kind="stable")[:n]
    return sites[order], heights[order]


def _top_site(counts: np.ndarray, psi_values: np.ndarray, rng: np.random.Generator) -> int:
    """Site of the topmost mark given the count vector: weights ``c_x / Psi(x)``."""
    w = counts / psi_values
    return int(_sample_sites(w, 1, rng)[0])


def _order_with_top(counts: np.ndarray, top: int) -> np.ndarray:
    rest = counts.copy()
    rest[top] -= 1
    return np.append(_expand(rest), top)


def run_coupling(model: TransitionModel, n: int, F: float, cap: int = DEFAULT_CAP,
                 rng: Optional[np.random.Generator] = None, keep_marks: bool = False,
                 schedule: Optional[RegenSchedule] = None,
                 variant: str = "exact") -> CouplingOutcome:
    """Build ``eta_X`` and ``eta_Y`` on one probability space and compare their fields.

    Parameters
    ----------
    variant : {"exact", "literal"}
        See the module docstring. ``"literal"`` is kept for comparison; its
        ``L_prime`` is biased at finite ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if F <= 0:
        raise ValueError("F must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if rng is None:
        rng = np.random.default_rng()
    exact = variant == "exact"
    run_rng, v_rng, vp_rng, vpp_rng = rng.spawn(4)
    trace, sched = run_permuted(model, n, run_rng, schedule=schedule)
    d = model.size
    pi = model.pi
    sites = np.asarray(trace.sites, dtype=np.int64)
    split = trace.split
    h = n - split
    xi = np.asarray(trace.xi)
    L_x = np.bincount(sites, minlength=d)

    if h == 0:
        # no tail to resample: keep eta_X, build eta_Y below the flat curve
        if exact:
            ys, yh = _flat_fill(trace, pi, 0, vpp_rng)
        else:
            ys, yh = _sample_sites(pi, n, vpp_rng), np.cumsum(xi)
        out = CouplingOutcome(
            L_tilde=L_x, L_prime=np.bincount(ys, minlength=d),
            b_index=0, in_G=False, success=False, h_size=0, degenerate=True,
            branch="degenerate",
        )
        if keep_marks:
            out.eta_x = list(zip(trace.sites, trace.heights))
            out.eta_y = list(zip(ys.tolist(), np.asarray(yh).tolist()))
        return out

    psi = compute_psi(trace)
    b_index, in_G = classify_event(psi, F, n)
    psi_nonneg = bool(psi.values.min() >= 0.0)
    branch = "G" if in_G else ("psi_nonneg" if psi_nonneg else "psi_negative")
    head_counts = np.bincount(sites[:split], minlength=d)
    tail_cum = np.cumsum(xi[split:])
    tilted = psi.values * pi
    met = None
    fallback = False
    L_tilde = L_x
    eta_x = eta_y = None
    Vp = None

    if in_G:
        V = _sample_sites(pi, h, v_rng)
        v_counts = np.bincount(V, minlength=d)
        L_tilde = head_counts + v_counts
        try:
            if exact:
                vp_counts, met = maximal_coupling_top_pi(h, pi, psi.values, v_counts, cap, vp_rng)
                Vp = _order_with_top(vp_counts, _top_site(vp_counts, psi.values, vp_rng))
            else:
                vp_counts, met = maximal_coupling_counts(h, pi, tilted, v_counts, cap, vp_rng)
                Vp = _expand(vp_counts)
        except EnumerationInfeasible:
            fallback = True
            Vp = _sample_sites(tilted, h, vp_rng)
            if exact:
                Vp[-1] = _sample_sites(pi, 1, vp_rng)[0]
        if keep_marks:
            G_split = trace.curve_at_split
            eta_x = list(zip(trace.sites[:split], trace.heights[:split]))
            eta_x += [(int(v), float(G_split[v] + c)) for v, c in zip(V, tail_cum)]
    elif exact and psi_nonneg:
        Vp = _sample_sites(tilted, h, vp_rng)
        Vp[-1] = _sample_sites(pi, 1, vp_rng)[0]

    if Vp is not None:
        L_prime = head_counts + np.bincount(Vp, minlength=d)
        if keep_marks:
            G_split = trace.curve_at_split
            eta_y = list(zip(trace.sites[:split], trace.heights[:split]))
            eta_y += [(int(v), float(G_split[v] + psi.values[v] * c)) for v, c in zip(Vp, tail_cum)]
    elif exact:
        ys, yh = _flat_fill(trace, pi, h, vpp_rng)
        L_prime = np.bincount(ys, minlength=d)
        eta_y = list(zip(ys.tolist(), yh.tolist()))
    else:
        Vpp = _sample_sites(pi, split, vpp_rng)
        Vp = _sample_sites(pi, h, vp_rng)
        L_prime = np.bincount(Vpp, minlength=d) + np.bincount(Vp, minlength=d)
        eta_y = list(zip(np.concatenate([Vpp, Vp]).tolist(), np.cumsum(xi).tolist()))

    out = CouplingOutcome(
        L_tilde=L_tilde, L_prime=L_prime, b_index=b_index, in_G=in_G,
        success=bool(np.array_equal(L_tilde, L_prime)), h_size=h,
        branch=branch, met=met, fallback=fallback, psi=psi,
    )
    if keep_marks:
        out.eta_x = eta_x if eta_x is not None else list(zip(trace.sites, trace.heights))
        out.eta_y = eta_y
    return out


def write_outcomes_csv(fh, rows):
    """Rows are dicts keyed by :data:`OUTCOME_FIELDS`."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(OUTCOME_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in OUTCOME_FIELDS])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v
