import math

import numpy as np
import pytest

from cmjsim import (
    FringeCharacteristic,
    FringePattern,
    GaltonWatson,
    IndicatorCharacteristic,
    NermanCharacteristic,
    analyze,
    make_kernel,
    run_clt,
    run_fringe_census,
    run_lln,
    run_martingale_suite,
    sigma_squared,
)
from cmjsim.harness import (
    anderson_darling_statistic,
    write_json,
    write_replicas_csv,
    write_rows_csv,
)


def gw_extinction_probability(probs, tol=1e-14):
    """Fixed point of the offspring generating function, iterated from 0."""
    q = 0.0
    for _ in range(100000):
        nxt = sum(p * q ** k for k, p in enumerate(probs))
        if abs(nxt - q) < tol:
            return nxt
        q = nxt
    raise RuntimeError("fixed point did not converge")


def gw_extinct_by_generation(probs, n):
    """P(generation n+1 is empty): n+1 iterations of the generating function."""
    q = 0.0
    for _ in range(n + 1):
        q = sum(p * q ** k for k, p in enumerate(probs))
    return q


@pytest.fixture(scope="module")
def gw_setup():
    law = GaltonWatson((0.1, 0.3, 0.6))
    sol = analyze(law)
    kernel = make_kernel(law, sol)
    return law, sol, kernel


def test_lln_deterministic_gw(gw_two):
    sol = analyze(gw_two)
    kernel = make_kernel(gw_two, sol)
    ind = IndicatorCharacteristic()
    rows = run_lln(gw_two, ind, sol, kernel, horizons=[2.0, 4.0], n_replicas=5,
                   master_seed=1)
    for r in rows:
        n = int(r.t)
        assert r.mc_mean == pytest.approx((2 ** (n + 1) - 1) / 2 ** n, rel=1e-12)
        assert r.z_score == 0.0
        assert r.predicted_limit == pytest.approx(2.0)


def test_lln_nerman_char(gw_setup):
    law, sol, kernel = gw_setup
    char = NermanCharacteristic(law, sol.alpha)
    rows = run_lln(law, char, sol, kernel, horizons=[2.0, 4.0], n_replicas=800,
                   master_seed=3)
    for r in rows:
        assert abs(r.z_score) <= 4.0
        assert r.predicted == pytest.approx(1.0, rel=1e-9)
        assert r.predicted_limit == pytest.approx(1.0, rel=1e-9)


def test_lln_poisson_counts(poisson_rrt):
    sol = analyze(poisson_rrt)
    kernel = make_kernel(poisson_rrt, sol)
    rows = run_lln(poisson_rrt, IndicatorCharacteristic(), sol, kernel,
                   horizons=[2.0, 4.0], n_replicas=1000, master_seed=4)
    assert all(abs(r.z_score) <= 4.0 for r in rows)


def test_fringe_census_deterministic(gw_two):
    sol = analyze(gw_two)
    kernel = make_kernel(gw_two, sol)
    leaf = FringeCharacteristic(FringePattern.parse("()"), gw_two)
    rows = run_fringe_census(gw_two, [leaf], sol, kernel, t=6.0, n_replicas=3,
                             master_seed=1)
    row = rows[0]
    # 2^t leaves out of 2^{t+1} - 1 nodes
    assert row.mean_fraction == pytest.approx(2 ** 6 / (2 ** 7 - 1), rel=1e-12)
    assert row.predicted_fraction == pytest.approx(0.5, rel=1e-12)


def test_fringe_census_rrt_leaf(poisson_rrt):
    sol = analyze(poisson_rrt)
    kernel = make_kernel(poisson_rrt, sol)
    leaf = FringeCharacteristic(FringePattern.parse("()"), poisson_rrt)
    rows = run_fringe_census(poisson_rrt, [leaf], sol, kernel, t=6.0,
                             n_replicas=200, master_seed=2)
    assert rows[0].predicted_fraction == pytest.approx(0.5, rel=1e-9)
    assert abs(rows[0].z_score) <= 4.0


def test_martingale_suite_flags(gw_setup):
    law, sol, _ = gw_setup
    suite = run_martingale_suite(law, sol, times=(2.0, 4.0, 6.0),
                                 n_replicas=2000, master_seed=6)
    assert not any(r.flagged for r in suite.rows)
    assert suite.variance_nondecreasing
    kinds = {r.kind for r in suite.rows}
    assert kinds == {"w", "biggins", "complex"}


def test_martingale_suite_poisson_skips_biggins(poisson_rrt):
    sol = analyze(poisson_rrt)
    suite = run_martingale_suite(poisson_rrt, sol, times=(2.0, 3.0),
                                 n_replicas=300, master_seed=6)
    assert any("biggins" in s for s in suite.skipped)
    assert all(r.kind == "w" for r in suite.rows)
    assert not any(r.flagged for r in suite.rows)


def test_survival_fraction_matches_fixed_point(gw_setup):
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=500, seed=2)
    t, t_big = 6.0, 9.0
    report, records = run_clt(law, leaf, sol, sig, t=t, t_big=t_big,
                              n_replicas=2000, master_seed=11)
    # extinct by t_big <=> generation t_big + 1 empty
    q_exact = gw_extinct_by_generation(law.probs, int(t_big))
    frac = 1 - report.n_survived / report.n_replicas
    se = math.sqrt(q_exact * (1 - q_exact) / report.n_replicas)
    assert abs(frac - q_exact) <= 4 * se
    # the infinite-horizon fixed point for this law is 1/6
    assert gw_extinction_probability(law.probs) == pytest.approx(1.0 / 6.0, abs=1e-12)


def test_clt_smoke_and_negative_control(gw_setup):
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=2000, seed=2)
    report, records = run_clt(law, leaf, sol, sig, t=8.0, t_big=12.0,
                              n_replicas=600, master_seed=21)
    assert report.ks_p_value > 1e-4
    assert report.n_survived <= report.n_replicas
    assert all(
        (r.normalized_stat is not None) == r.survived for r in records
    )
    biased, _ = run_clt(law, leaf, sol, sig, t=8.0, t_big=12.0,
                        n_replicas=600, master_seed=21, a_alpha_bias=0.1)
    assert biased.ks_p_value < 1e-10


def test_clt_indicator_bounds_fringe(gw_setup):
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=500, seed=2)
    _, records = run_clt(law, leaf, sol, sig, t=5.0, t_big=8.0,
                         n_replicas=300, master_seed=31)
    for r in records:
        assert r.z_phi_t <= r.z_t


def test_clt_degenerate_regime(gw_two):
    sol = analyze(gw_two)
    kernel = make_kernel(gw_two, sol)
    ind = IndicatorCharacteristic()
    sig = sigma_squared(gw_two, ind, sol, kernel, budget=100, seed=1)
    report, _ = run_clt(gw_two, ind, sol, sig, t=4.0, t_big=6.0,
                        n_replicas=20, master_seed=3)
    assert report.degenerate
    assert report.ks_p_value is None


def test_report_determinism(gw_setup):
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=300, seed=2)

    def run():
        rep, recs = run_clt(law, leaf, sol, sig, t=5.0, t_big=7.0,
                            n_replicas=100, master_seed=5)
        return rep, tuple(recs)

    r1, recs1 = run()
    r2, recs2 = run()
    assert r1 == r2
    assert recs1 == recs2


def test_thread_invariance(gw_setup):
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=200, seed=2)
    rep1, recs1 = run_clt(law, leaf, sol, sig, t=4.0, t_big=6.0,
                          n_replicas=60, master_seed=5, threads=1)
    rep2, recs2 = run_clt(law, leaf, sol, sig, t=4.0, t_big=6.0,
                          n_replicas=60, master_seed=5, threads=2)
    assert rep1 == rep2
    assert recs1 == recs2


def test_w_proxy_gap_stability(gw_setup):
    # doubling the extended-horizon gap moves the KS statistic by less
    # than its resampling noise scale
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=2000, seed=2)
    rep1, _ = run_clt(law, leaf, sol, sig, t=8.0, t_big=12.0,
                      n_replicas=800, master_seed=41)
    rep2, _ = run_clt(law, leaf, sol, sig, t=8.0, t_big=16.0,
                      n_replicas=800, master_seed=42)
    n = min(rep1.n_survived, rep2.n_survived)
    noise = 4 * 0.26 * math.sqrt(2.0 / n)
    assert abs(rep1.ks_statistic - rep2.ks_statistic) <= noise


def test_anderson_darling_calibration():
    rng = np.random.default_rng(8)
    stats = [anderson_darling_statistic(rng.standard_normal(500)) for _ in range(50)]
    # for a true standard normal sample A^2 rarely exceeds 2.5
    assert np.median(stats) < 1.3
    biased = anderson_darling_statistic(rng.standard_normal(500) + 0.5)
    assert biased > 10


def test_writers_roundtrip(tmp_path, gw_setup):
    law, sol, kernel = gw_setup
    leaf = FringeCharacteristic(FringePattern.parse("()"), law)
    sig = sigma_squared(law, leaf, sol, kernel, budget=200, seed=2)
    report, records = run_clt(law, leaf, sol, sig, t=4.0, t_big=6.0,
                              n_replicas=40, master_seed=5)
    write_replicas_csv(records, tmp_path / "replicas.csv")
    write_json(report.to_json(), tmp_path / "report.json")
    lines = (tmp_path / "replicas.csv").read_text().strip().split("\n")
    assert lines[0] == "seed,survived,z_t,z_phi_t,w_main,w_ext,normalized_stat"
    assert len(lines) == 41
    # idempotent: re-writing produces identical bytes
    first = (tmp_path / "replicas.csv").read_bytes()
    write_replicas_csv(records, tmp_path / "replicas.csv")
    assert (tmp_path / "replicas.csv").read_bytes() == first
