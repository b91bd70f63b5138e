import cmath
import math

import numpy as np
import pytest

from cmjsim import (
    GaltonWatson,
    analyze,
    check_a7,
    compute_beta,
    intensity_data,
    scan_roots,
    solve_malthusian,
)
from cmjsim.errors import AssumptionViolation, ConfigurationError
from cmjsim.models import IntensityData


def test_gw_two_alpha_beta(gw_two):
    sol = analyze(gw_two)
    assert sol.alpha == pytest.approx(math.log(2), abs=1e-12)
    assert sol.beta == pytest.approx(1.0, abs=1e-12)
    assert sol.lattice_span == 1.0
    assert sol.simple_root_only


def test_poisson_binary_alpha_beta(poisson_binary):
    sol = analyze(poisson_binary)
    assert sol.alpha == pytest.approx(1.0, abs=1e-10)
    assert sol.beta == pytest.approx(0.5, abs=1e-12)
    assert sol.simple_root_only


def test_fragmentation_alpha_beta(frag_half):
    sol = analyze(frag_half)
    assert sol.alpha == pytest.approx(1.0, abs=1e-10)
    # beta = sum of V_i log(1/V_i) over the two halves
    assert sol.beta == pytest.approx(math.log(2), abs=1e-10)
    assert sol.lattice_span == pytest.approx(math.log(2))


def test_alpha_monotone_in_mean():
    alphas = []
    for p2 in (0.55, 0.7, 0.85):
        law = GaltonWatson((0.1, 0.9 - p2, p2))
        alphas.append(analyze(law).alpha)
    assert alphas == sorted(alphas)
    assert alphas[0] < alphas[-1]


def test_no_malthusian_error():
    data = intensity_data(GaltonWatson((0.0, 0.0, 1.0)))
    # strictly increasing fake transform never crosses 1 from above
    bad = IntensityData(
        laplace=lambda z: 0.5 * cmath.exp(-z),
        laplace_deriv=lambda z: -0.5 * cmath.exp(-z),
        mu_mass=2.0,
        mu_atom_at_zero=0.0,
        lattice_span=1.0,
        domain_min=-math.inf,
        law=data.law,
    )
    with pytest.raises(AssumptionViolation) as err:
        solve_malthusian(bad)
    assert err.value.name == "A.3"


def test_root_residuals(gw_two, poisson_binary, frag_half):
    for law in (gw_two, poisson_binary, frag_half):
        sol = analyze(law)
        data = intensity_data(law)
        for z, mult in sol.roots:
            assert mult == 1
            assert abs(data.laplace(z) - 1.0) <= 1e-8


def test_scan_finds_all_periodic_roots():
    # m e^{-z} = 1 solves z = ln m + 2 pi i k; treat as non-lattice to keep
    # the full strip and count the roots below the truncation height
    data = IntensityData(
        laplace=lambda z: 2.0 * cmath.exp(-z),
        laplace_deriv=lambda z: -2.0 * cmath.exp(-z),
        mu_mass=2.0,
        mu_atom_at_zero=0.0,
        lattice_span=None,
        domain_min=-math.inf,
        law=None,
    )
    roots, boundary = scan_roots(data, math.log(2), im_max=13.0)
    assert not boundary
    expected = sorted(
        [math.log(2) + 2j * math.pi * k for k in (-2, -1, 0, 1, 2)],
        key=lambda z: z.imag,
    )
    got = sorted([z for z, _ in roots], key=lambda z: z.imag)
    assert len(got) == len(expected)
    for a, b in zip(got, expected):
        assert abs(a - b) < 1e-8


def test_scan_detects_double_root():
    # (z - 1)^2 + 1 has a double zero of f - 1 at z = 1
    data = IntensityData(
        laplace=lambda z: (z - 1.0) ** 2 + 1.0,
        laplace_deriv=lambda z: 2.0 * (z - 1.0),
        mu_mass=2.0,
        mu_atom_at_zero=0.0,
        lattice_span=None,
        domain_min=-math.inf,
        law=None,
    )
    roots, _ = scan_roots(data, 1.0, im_max=5.0)
    assert len(roots) == 1
    z, mult = roots[0]
    assert mult == 2
    # position accuracy of a double root scales like sqrt(residual)
    assert abs(z - 1.0) < 2e-5
    assert abs((z - 1.0) ** 2) < 1e-8


def test_beta_matches_finite_difference(gw_vector, poisson_rrt, frag_mixture):
    for law in (gw_vector, poisson_rrt, frag_mixture):
        data = intensity_data(law)
        alpha = solve_malthusian(data)
        beta = compute_beta(data, alpha)
        h = 1e-6
        fd = -(data.laplace(alpha + h).real - data.laplace(alpha - h).real) / (2 * h)
        assert beta == pytest.approx(fd, rel=1e-6)


def test_check_a7_analytic_gw(gw_two):
    sol = analyze(gw_two)
    res = check_a7(gw_two, sol.alpha, 0.1)
    # E[(sum e^{-theta X_i})^2] with two children at offset 1
    assert res.ok
    assert res.estimate == pytest.approx(math.exp(-0.2) * 4.0)


def test_check_a7_fragmentation_bounded(frag_half):
    sol = analyze(frag_half)
    res = check_a7(frag_half, sol.alpha, 0.25)
    assert res.ok
    assert res.estimate <= 4.0 + 1e-12


def test_check_a7_poisson_campbell(poisson_rrt):
    sol = analyze(poisson_rrt)
    theta = 0.3
    res = check_a7(poisson_rrt, sol.alpha, theta)
    target = 1.0 / (2 * theta) + (1.0 / theta) ** 2
    assert res.ok
    assert res.estimate == pytest.approx(target)
    # Monte Carlo cross-check of the closed form
    rng = np.random.default_rng(31)
    n = 20_000
    vals = np.empty(n)
    for i in range(n):
        offs, cut = poisson_rrt.sample_offsets(rng, 40.0)
        s = sum(math.exp(-theta * x) for x in offs) + poisson_rrt.tilted_tail(theta, cut)
        vals[i] = s * s
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - target) <= 3 * se


def test_check_a7_domain(gw_two):
    sol = analyze(gw_two)
    with pytest.raises(ConfigurationError):
        check_a7(gw_two, sol.alpha, sol.alpha)  # theta must be below alpha/2


class _NoClosedForm:
    """Wrap a law but hide its analytic second moment to force Monte Carlo."""

    def __init__(self, law):
        self._law = law

    def sample_offsets(self, rng, window):
        return self._law.sample_offsets(rng, window)

    def tilted_tail(self, theta, c):
        return self._law.tilted_tail(theta, c)


def test_check_a7_monte_carlo_fallback(poisson_rrt):
    sol = analyze(poisson_rrt)
    theta = 0.3
    wrapped = _NoClosedForm(poisson_rrt)
    res = check_a7(wrapped, sol.alpha, theta, rng=np.random.default_rng(3),
                   n_samples=8000)
    assert res.method == "monte-carlo"
    assert res.ok
    target = poisson_rrt.xi_hat_second_moment(theta)
    assert abs(res.estimate - target) <= 4 * res.standard_error


def test_report_schema(gw_two):
    report = analyze(gw_two).to_report()
    assert set(report) == {
        "alpha",
        "beta",
        "lattice_span",
        "roots",
        "boundary_roots_present",
    }
    assert report["roots"][0]["multiplicity"] == 1
