import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sltcouple.binproc import EnumerationInfeasible, exact_tv_binomial, multinomial_pmf_table
from sltcouple.coupling import (
    OUTCOME_FIELDS,
    NoRegenerationTail,
    PsiDensity,
    classify_event,
    compute_psi,
    maximal_coupling_counts,
    maximal_coupling_top_pi,
    run_coupling,
    top_pi_pmf,
    write_outcomes_csv,
)
from sltcouple.oracle import iid_localtime_dist
from sltcouple.harness import chi_square_vs_dist
from sltcouple.slt_engine import SltTrace, run_permuted, schedule_from_flags


def _psi(sup_dev):
    return PsiDensity(values=np.array([1 + sup_dev, 1 - sup_dev]), sup_dev=sup_dev, denominator=1.0)


def test_compute_psi_hand_example():
    tr = SltTrace(n=3, xi=[1.5, 0.5, 1.0], sites=[0, 1, 0], heights=[0.0, 0.0, 0.0],
                  curve=np.array([2.8, 3.2]), curve_at_split=np.array([1.8, 2.2]), split=2)
    psi = compute_psi(tr)
    np.testing.assert_allclose(psi.values, [1.2, 0.8], atol=1e-12)
    assert psi.sup_dev == pytest.approx(0.2, abs=1e-12)
    assert psi.denominator == 1.0
    assert psi.normalization([0.5, 0.5]) == pytest.approx(1.0, abs=1e-12)


def test_compute_psi_flat_for_iid_model(flat2):
    for seed in range(20):
        tr, _ = run_permuted(flat2, 15, np.random.default_rng(seed))
        psi = compute_psi(tr)
        assert psi.sup_dev == 0.0 and np.all(psi.values == 1.0)


def test_compute_psi_requires_tail(chain06):
    tr, _ = run_permuted(chain06, 3, np.random.default_rng(0), schedule=schedule_from_flags([1, 0, 0]))
    with pytest.raises(NoRegenerationTail):
        compute_psi(tr)
    plain = SltTrace(n=2, xi=[1.0, 1.0], sites=[0, 0], heights=[0.5, 1.5], curve=np.array([2.0, 2.0]))
    with pytest.raises(ValueError):
        compute_psi(plain)


@pytest.mark.parametrize("n, seed", [(8, 1), (40, 2), (300, 3)])
def test_psi_normalization_on_runs(three_state, n, seed):
    tr, sched = run_permuted(three_state, n, np.random.default_rng(seed))
    if sched.h_size:
        assert abs(compute_psi(tr).normalization(three_state.pi) - 1.0) <= 1e-9


@pytest.mark.parametrize(
    "sup_dev, F, n, b, in_G",
    [
        (0.0, 0.05, 100, 1, True),
        (0.0, 0.6, 100, 1, False),
        (0.2, 0.05, 100, 39, False),
        (0.009, 0.05, 100, 1, True),
    ],
)
def test_classify_event_examples(sup_dev, F, n, b, in_G):
    assert classify_event(_psi(sup_dev), F, n) == (b, in_G)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(1e-3, 2.0), st.integers(1, 10_000))
def test_classify_event_is_smallest_index(sup_dev, F, n):
    b, in_G = classify_event(_psi(sup_dev), F, n)
    scale = F / math.sqrt(n)
    assert b >= 1
    assert sup_dev <= (1 + b) * scale
    if b >= 2:
        assert sup_dev > b * scale
    assert in_G == ((1 + b) * F <= 1.0)


def test_classify_event_rejects_nonpositive_F():
    with pytest.raises(ValueError):
        classify_event(_psi(0.1), 0.0, 10)


def test_max_coupling_identical_laws(rng):
    v = np.array([2, 1])
    out, met = maximal_coupling_counts(3, [0.5, 0.5], [0.5, 0.5], v, 100, rng)
    assert met and out.tolist() == [2, 1]


@pytest.mark.parametrize("m, tv", [(1, 0.1), (2, 0.11)])
def test_max_coupling_meeting_rate(m, tv):
    rng = np.random.default_rng(m)
    base, tilted = np.array([0.5, 0.5]), np.array([0.6, 0.4])
    assert exact_tv_binomial(base, tilted, m) == pytest.approx(tv, abs=1e-14)
    reps = 20_000
    met = 0
    for _ in range(reps):
        v = rng.multinomial(m, base)
        out, ok = maximal_coupling_counts(m, base, tilted, v, 100, rng)
        if ok:
            assert np.array_equal(out, v)
        met += ok
    se = math.sqrt(tv * (1 - tv) / reps)
    assert abs(met / reps - (1 - tv)) < 4 * se


def test_max_coupling_output_marginal():
    rng = np.random.default_rng(5)
    base = np.array([0.2, 0.3, 0.5])
    tilted = base * np.array([1.3, 0.9, 0.94])
    tilted /= tilted.sum()
    draws = [tuple(maximal_coupling_counts(3, base, tilted, rng.multinomial(3, base), 100, rng)[0])
             for _ in range(20_000)]
    comps, pmf = multinomial_pmf_table(3, tilted)
    obs = np.array([draws.count(tuple(c)) for c in comps])
    assert stats.chisquare(obs, pmf * len(draws)).pvalue > 1e-3


def test_max_coupling_checks(rng):
    with pytest.raises(ValueError):
        maximal_coupling_counts(3, [0.5, 0.5], [0.6, 0.4], np.array([1, 1]), 100, rng)
    with pytest.raises(EnumerationInfeasible):
        maximal_coupling_counts(50, [0.3, 0.3, 0.4], [0.4, 0.3, 0.3], np.array([20, 20, 10]), 10, rng)


def test_iid_model_always_couples(flat2):
    for seed in range(100):
        o = run_coupling(flat2, 8, 0.5, rng=np.random.default_rng(seed))
        assert o.b_index == 1 and o.in_G and o.met and o.success


@pytest.mark.parametrize("F", [0.05, 0.5])
def test_outcome_invariants(chain06, F):
    n = 12
    for seed in range(200):
        o = run_coupling(chain06, n, F, rng=np.random.default_rng(seed))
        assert o.L_tilde.sum() == n == o.L_prime.sum()
        if o.success:
            assert np.array_equal(o.L_tilde, o.L_prime)
        if o.degenerate:
            assert o.b_index == 0 and not o.success and o.h_size == 0
            continue
        assert o.b_index >= 1
        assert o.in_G == ((1 + o.b_index) * F <= 1.0)
        if o.in_G and o.met:
            assert o.success


def test_degenerate_schedule(chain06):
    o = run_coupling(chain06, 3, 0.1, rng=np.random.default_rng(0), schedule=schedule_from_flags([1, 0, 0]))
    assert o.degenerate and o.b_index == 0 and not o.success and o.L_prime.sum() == 3


def test_fallback_when_cap_is_tiny(three_state):
    for seed in range(40):
        o = run_coupling(three_state, 30, 0.01, cap=2, rng=np.random.default_rng(seed))
        if o.in_G and o.h_size >= 2 and o.psi.sup_dev > 0:
            assert o.fallback and o.met is None
            assert o.L_prime.sum() == 30
            return
    pytest.fail("no run reached the G branch")


def test_keep_marks_describe_fields(chain06):
    for seed in range(30):
        o = run_coupling(chain06, 20, 0.05, rng=np.random.default_rng(seed), keep_marks=True)
        assert len(o.eta_x) == len(o.eta_y) == 20
        assert np.array_equal(np.bincount([s for s, _ in o.eta_x], minlength=2), o.L_tilde)
        assert np.array_equal(np.bincount([s for s, _ in o.eta_y], minlength=2), o.L_prime)


def test_coupling_is_deterministic(chain06):
    a = run_coupling(chain06, 30, 0.05, rng=np.random.default_rng(9))
    b = run_coupling(chain06, 30, 0.05, rng=np.random.default_rng(9))
    assert np.array_equal(a.L_tilde, b.L_tilde) and np.array_equal(a.L_prime, b.L_prime)
    assert a.b_index == b.b_index


def test_outcome_csv():
    buf = io.StringIO()
    write_outcomes_csv(buf, [dict(rep=0, n=6, eps=0.2, F=0.05, b_index=3, in_G=True,
                                  h_size=2, success=False, fallback=False)])
    head, row = buf.getvalue().splitlines()
    assert head == ",".join(OUTCOME_FIELDS)
    assert row == "0,6,0.2,0.05,3,1,2,0,0"


def test_top_pi_pmf_is_a_convolution():
    pi = np.array([0.2, 0.3, 0.5])
    psi = np.array([1.3, 0.9, 0.94])
    psi /= psi @ pi
    comps, _ = multinomial_pmf_table(4, pi)
    small, f3 = multinomial_pmf_table(3, psi * pi)
    brute = {tuple(c): 0.0 for c in comps}
    for c, w in zip(small, f3):
        for x in range(3):
            e = c.copy()
            e[x] += 1
            brute[tuple(e)] += w * pi[x]
    got = top_pi_pmf(comps, psi, pi)
    np.testing.assert_allclose(got, [brute[tuple(c)] for c in comps], atol=1e-15)
    assert got.sum() == pytest.approx(1.0, abs=1e-12)


def test_max_coupling_top_pi_rate_and_marginal():
    rng = np.random.default_rng(8)
    pi = np.array([0.5, 0.5])
    psi = np.array([1.25, 0.75])
    m, reps = 3, 20_000
    comps, fp = multinomial_pmf_table(m, pi)
    tv = 0.5 * np.abs(top_pi_pmf(comps, psi, pi) - fp).sum()
    draws, met = [], 0
    for _ in range(reps):
        v = rng.multinomial(m, pi)
        out, ok = maximal_coupling_top_pi(m, pi, psi, v, 100, rng)
        if ok:
            assert np.array_equal(out, v)
        met += ok
        draws.append(tuple(out))
    assert abs(met / reps - (1 - tv)) < 4 * math.sqrt(tv * (1 - tv) / reps)
    obs = np.array([draws.count(tuple(c)) for c in comps])
    assert stats.chisquare(obs, top_pi_pmf(comps, psi, pi) * reps).pvalue > 1e-3


def test_variant_is_checked(chain06):
    with pytest.raises(ValueError):
        run_coupling(chain06, 5, 0.1, variant="other")


def test_branches_and_marks(chain06):
    seen = set()
    for seed in range(300):
        o = run_coupling(chain06, 5, 0.05, rng=np.random.default_rng(seed), keep_marks=True)
        seen.add(o.branch)
        assert o.in_G == (o.branch == "G")
        ys = [s for s, _ in o.eta_y]
        assert np.array_equal(np.bincount(ys, minlength=2), o.L_prime)
        if o.branch == "psi_negative":
            assert o.psi.values.min() < 0
            heights = [t for _, t in o.eta_y]
            assert heights == sorted(heights)
    assert {"G", "psi_nonneg", "psi_negative"} <= seen


def test_exact_variant_marginal_small_n(chain06):
    n, reps = 4, 30_000
    rng = np.random.default_rng(17)
    L = np.array([run_coupling(chain06, n, 0.3, rng=r).L_prime for r in rng.spawn(reps)])
    assert chi_square_vs_dist(L, iid_localtime_dist(chain06.pi, n))[1] > 1e-3


@pytest.mark.slow
def test_literal_variant_marginal_is_biased(chain06):
    n, reps = 6, 100_000
    rng = np.random.default_rng(42)
    L = np.array([run_coupling(chain06, n, 0.5, rng=r, variant="literal").L_prime
                  for r in rng.spawn(reps)])
    assert chi_square_vs_dist(L, iid_localtime_dist(chain06.pi, n))[1] < 1e-3
