import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cmjsim import (
    Fragmentation,
    GaltonWatson,
    PoissonIntensity,
    intensity_data,
    sample_births,
)
from cmjsim.errors import AssumptionViolation, ConfigurationError, DomainError


def test_deterministic_gw_offsets(rng):
    law = GaltonWatson((0.0, 0.0, 0.0, 1.0))  # N = 3
    assert sample_births(law, 5.0, rng) == [1.0, 1.0, 1.0]


def test_deterministic_fragmentation_offsets(frag_half, rng):
    births = sample_births(frag_half, 1.0, rng)
    assert births == pytest.approx([math.log(2), math.log(2)])


def test_poisson_count_is_poisson_chisq(poisson_rrt):
    # counts on [0, t] must follow a Poisson(t) law; chi-square GOF
    rng = np.random.default_rng(777)
    t = 2.0
    n = 100_000
    counts = np.array(
        [len(sample_births(poisson_rrt, t, rng)) for _ in range(n)]
    )
    kmax = 10
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = np.array([stats.poisson.pmf(j, t) for j in range(kmax)])
    probs = np.append(probs, 1.0 - probs.sum())
    chi2 = ((observed - n * probs) ** 2 / (n * probs)).sum()
    p = stats.chi2.sf(chi2, df=kmax)
    assert p > 1e-3


@pytest.mark.parametrize(
    "t", [0.5, 1.0, 2.0]
)
def test_empirical_intensity_matches_mean_measure(t, gw_vector, frag_mixture, poisson_rrt):
    for law in (gw_vector, frag_mixture, poisson_rrt):
        rng = np.random.default_rng(99)
        n = 10_000
        counts = np.array(
            [len(sample_births(law, t, rng)) for _ in range(n)], dtype=float
        )
        target = law.mean_measure(t)
        se = counts.std(ddof=1) / math.sqrt(n)
        if se == 0:
            assert counts.mean() == target
        else:
            assert abs(counts.mean() - target) <= 4 * se


def test_sampling_reproducible(gw_vector):
    a = sample_births(gw_vector, 4.0, np.random.default_rng(5))
    b = sample_births(gw_vector, 4.0, np.random.default_rng(5))
    assert a == b


def test_fragmentation_masses_sum_to_one(frag_mixture, rng):
    for _ in range(50):
        births = sample_births(frag_mixture, 100.0, rng)
        total = sum(math.exp(-x) for x in births)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_laplace_values(gw_two, poisson_binary, frag_half):
    d = intensity_data(gw_two)
    assert d.laplace(math.log(2)) == pytest.approx(1.0, abs=1e-14)
    assert d.laplace(0.3) == pytest.approx(2 * math.exp(-0.3))
    assert intensity_data(poisson_binary).laplace(1.0) == pytest.approx(1.0)
    assert intensity_data(frag_half).laplace(1.0) == pytest.approx(1.0)


def test_lattice_detection(gw_vector, frag_half, frag_mixture, poisson_rrt):
    assert gw_vector.lattice_span == 1.0
    assert frag_half.lattice_span == pytest.approx(math.log(2))
    assert frag_mixture.lattice_span is None
    assert poisson_rrt.lattice_span is None


def test_validation_errors():
    with pytest.raises(ConfigurationError):
        GaltonWatson((0.5, 0.6))  # does not sum to 1
    with pytest.raises(ConfigurationError):
        Fragmentation(((1.0, (0.5, 0.4)),))  # vector sums to 0.9
    with pytest.raises(ConfigurationError):
        PoissonIntensity(0.9, -1)  # a <= 1 with b != 0
    with pytest.raises(ConfigurationError):
        PoissonIntensity(1.0, 2)
    with pytest.raises(AssumptionViolation) as err:
        intensity_data(GaltonWatson((0.1, 0.9)))  # mean 0.9, subcritical
    assert err.value.name == "A.2"


def test_poisson_laplace_domain(poisson_binary):
    data = intensity_data(poisson_binary)
    with pytest.raises(DomainError):
        data.laplace(-1.0)


def test_horizon_truncation(poisson_rrt, rng):
    births = sample_births(poisson_rrt, 3.0, rng)
    assert all(0 <= x <= 3.0 for x in births)
    assert births == sorted(births)


@given(st.floats(min_value=0.0, max_value=6.0))
@settings(max_examples=30, deadline=None)
def test_mean_measure_monotone(t):
    law = PoissonIntensity(1.3, 1)
    assert law.mean_measure(t) <= law.mean_measure(t + 0.5)


def test_negative_horizon_rejected(gw_two, rng):
    with pytest.raises(ConfigurationError):
        sample_births(gw_two, -1.0, rng)
