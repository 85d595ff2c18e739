import json

import numpy as np
import pytest
from scipy import stats

from sltcouple.model import two_state
from sltcouple.oracle import CountDistribution, chain_localtime_dist
from sltcouple.harness import (
    ReplicateReport,
    chi_square_vs_dist,
    derive_rng,
    estimate_epe,
    ks_exponential,
    mean_report,
    measure_rn,
    proportion_report,
    run_replicates,
    simulate_what_blocks,
    tally,
)
from sltcouple.slt_engine import run_permuted


def _draw(rng, k):
    return float(rng.random()) * k


def test_derive_rng_is_keyed():
    a = derive_rng(1, "x", 0).random(4)
    assert np.array_equal(a, derive_rng(1, "x", 0).random(4))
    assert not np.array_equal(a, derive_rng(1, "x", 1).random(4))
    assert not np.array_equal(a, derive_rng(1, "y", 0).random(4))
    assert not np.array_equal(a, derive_rng(2, "x", 0).random(4))


def test_run_replicates_independent_of_threads():
    serial = run_replicates(_draw, 40, 7, "t", (3,), threads=1)
    parallel = run_replicates(_draw, 40, 7, "t", (3,), threads=3)
    assert serial == parallel
    assert serial[5] == _draw(derive_rng(7, "t", 5), 3)
    with pytest.raises(ValueError):
        run_replicates(_draw, 0, 7, "t", (3,))


def test_reports():
    r = proportion_report(30, 100, extra=1)
    assert r.ci95[0] <= r.estimate <= r.ci95[1] and r.stderr >= 0
    ci = stats.binomtest(30, 100).proportion_ci(method="wilson")
    assert r.ci95 == (ci.low, ci.high)
    assert json.loads(r.to_json())["test_stats"] == {"extra": 1}
    assert r.to_json() == proportion_report(30, 100, extra=1).to_json()
    m = mean_report([1.0, 2.0, 3.0])
    assert m.estimate == 2.0 and m.ci95[0] < 2.0 < m.ci95[1]
    assert isinstance(m, ReplicateReport)


def test_ks_calibration():
    rng = np.random.default_rng(0)
    passes = sum(ks_exponential(rng.standard_exponential(100_000))[1] > 1e-3 for _ in range(200))
    assert passes >= 198


def test_ks_rejects_constant_and_small_samples():
    assert ks_exponential(np.ones(1000))[1] < 1e-6
    with pytest.raises(ValueError):
        ks_exponential(np.ones(99))


def test_ks_on_permuted_increments(chain06):
    rng = np.random.default_rng(3)
    xi = []
    while len(xi) < 20_000:
        xi += run_permuted(chain06, 50, rng)[0].xi
    assert ks_exponential(xi)[1] > 1e-3


def _sample(dist, size, rng):
    idx = rng.choice(len(dist.probs), size=size, p=dist.probs / dist.probs.sum())
    return dist.support[idx]


def test_chi_square_calibration(chain06):
    law = chain_localtime_dist(chain06, 6)
    rng = np.random.default_rng(1)
    pvals = [chi_square_vs_dist(_sample(law, 20_000, rng), law)[1] for _ in range(50)]
    assert sum(p > 1e-3 for p in pvals) >= 49
    assert stats.kstest(pvals, "uniform").pvalue > 1e-3


def test_chi_square_power(chain06):
    law = chain_localtime_dist(chain06, 6)
    shifted = law.probs.copy()
    shifted[np.argmax(shifted)] -= 0.1
    shifted[np.argmin(shifted)] += 0.1
    alt = CountDistribution(law.support, shifted)
    obs = _sample(alt, 100_000, np.random.default_rng(2))
    assert chi_square_vs_dist(obs, law)[1] < 1e-6


def test_chi_square_edge_cases():
    single = CountDistribution(np.array([[3, 0]]), np.array([1.0]))
    with pytest.raises(ValueError):
        chi_square_vs_dist({(3, 0): 10}, single)
    two = CountDistribution(np.array([[1, 0], [0, 1]]), np.array([0.5, 0.5]))
    assert chi_square_vs_dist({(2, 0): 1, (1, 0): 5}, two) == (float("inf"), 0.0)
    assert tally(np.array([[1, 0], [1, 0], [0, 1]])) == {(0, 1): 1, (1, 0): 2}


def test_what_blocks_trivial_model(flat2):
    blocks = simulate_what_blocks(flat2, 500, np.random.default_rng(0))
    assert np.all(blocks.values == 0.0) and np.all(blocks.lengths == 1)


def test_what_block_items(chain06):
    blocks = simulate_what_blocks(chain06, 10, np.random.default_rng(0))
    assert len(blocks) == 10
    items = list(blocks)
    assert items[3].length == blocks.lengths[3] and items[3].values.shape == (2,)
    with pytest.raises(ValueError):
        simulate_what_blocks(chain06, 0, np.random.default_rng(0))


def test_what_blocks_statistics():
    model = two_state(0.55)
    m = 1_000_000
    b = simulate_what_blocks(model, m, np.random.default_rng(4))
    eps, q = model.epsilon, model.q
    assert np.all(np.abs(b.values).max(axis=1) <= eps * b.exp_totals * (1 + 1e-12))
    sq = b.values ** 2
    bound = 2 * eps ** 2 / q ** 2
    assert np.all(sq.mean(axis=0) <= bound + 3 * sq.std(axis=0) / np.sqrt(m))
    z = b.values.mean(axis=0) / (b.values.std(axis=0) / np.sqrt(m))
    assert np.all(np.abs(z) < 4.5)
    # block lengths: chi-square against Geometric(q) on {1, 2, ...}
    kmax = 8
    obs = np.bincount(np.minimum(b.lengths, kmax), minlength=kmax + 1)[1:]
    k = np.arange(1, kmax)
    probs = np.append(stats.geom.pmf(k, q), stats.geom.sf(kmax - 1, q))
    keep = probs * m >= 5
    exp_ = np.append(probs[keep], probs[~keep].sum()) * m
    ob = np.append(obs[keep], obs[~keep].sum())
    if exp_[-1] == 0:
        exp_, ob = exp_[:-1], ob[:-1]
    assert stats.chisquare(ob, exp_).pvalue > 1e-3


def test_epe_trivial_and_checks(flat2, chain06):
    res = estimate_epe(flat2, [10, 50], 100, np.random.default_rng(0))
    assert all(r.estimate == 0.0 for r in res.reports) and res.fitted_c4 is None
    with pytest.raises(ValueError):
        estimate_epe(chain06, [10], 50, np.random.default_rng(0))


def test_epe_fitted_c4_dominates(chain06):
    a = estimate_epe(chain06, [40], 200, np.random.default_rng(3), chunk_blocks=1000)
    assert a.reports[0].reps == 200 and a.fitted_c4 > 0
    assert a.reports[0].ci95[1] <= a.fitted_c4 * a.F_unit + 1e-12


def test_rn_trivial(flat2):
    out = measure_rn(flat2, 50, 20, seed=0)
    assert np.all(out["samples"] == 0.0)


def test_rn_pathwise_bound(chain06):
    out = measure_rn(chain06, 200, 50, seed=1)
    assert out["max_pathwise_excess"] <= 1e-9


@pytest.mark.slow
def test_rn_scale_is_sqrt_n():
    model = two_state(0.55)
    med = [measure_rn(model, n, 1000, seed=2)["median_over_sqrt_n"] for n in (100, 1000, 10_000)]
    assert max(med) / min(med) < 3
