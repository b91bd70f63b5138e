"""Catalog of birth point processes driving the branching population.

Three kinds are supported:

* :class:`GaltonWatson` -- a random number of children, all born at
  offset 1 (lattice span 1).
* :class:`Fragmentation` -- children born at offsets ``-log V_i`` for a
  dislocation vector ``(V_1 .. V_b)`` with ``sum(V_i) = 1``; specified
  as a finite mixture of deterministic dislocation vectors so that the
  intensity data stays exactly computable.
* :class:`PoissonIntensity` -- a Poisson point process on ``[0, inf)``
  with intensity ``a * exp(b*x)``, ``b in {-1, 0, 1}``.  ``b = 0`` grows
  random recursive trees, ``b = -1`` with integer ``a = m`` relates to
  m-ary increasing trees (``a = 2``: binary search trees) and ``b = 1``
  to linear preferential attachment; note the literal Poisson process
  puts no cap on the number of children, so the m-ary reading is a
  naming aid only.

Every law value is immutable; sampling draws i.i.d. copies of the point
process from the caller's random stream.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import AssumptionViolation, ConfigurationError, DomainError

_PROB_TOL = 1e-12


def _float_gcd(values: Sequence[float], rel_tol: float = 1e-9) -> Optional[float]:
    """Greatest common (approximate) divisor of positive reals.

    Returns None when the values do not sit on a common grid within
    ``rel_tol`` (relative to the largest value).  Incommensurable inputs
    drive the Euclid recursion down to the noise floor, so any candidate
    divisor close to the tolerance is rejected as spurious.
    """
    vals = [v for v in values if v > 0]
    if not vals:
        return None
    tol = rel_tol * max(vals)
    g = vals[0]
    for v in vals[1:]:
        a, b = max(g, v), min(g, v)
        while b > tol:
            a, b = b, a % b
        g = a
    if g <= 1e4 * tol:
        return None
    for v in vals:
        k = round(v / g)
        if k < 1 or abs(v - k * g) > tol:
            return None
    return g


@dataclass(frozen=True)
class GaltonWatson:
    """Offspring distribution on {0, .., K}; every child is born at offset 1."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if not probs or any(p < 0 for p in probs):
            raise ConfigurationError("offspring probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > _PROB_TOL:
            raise ConfigurationError(
                f"offspring probabilities must sum to 1 +/- {_PROB_TOL}, got {sum(probs)!r}"
            )

    # -- moments -------------------------------------------------------
    @property
    def mean_offspring(self) -> float:
        return float(sum(k * p for k, p in enumerate(self.probs)))

    @property
    def second_moment_offspring(self) -> float:
        return float(sum(k * k * p for k, p in enumerate(self.probs)))

    @property
    def atom_at_zero(self) -> float:
        return 0.0

    @property
    def lattice_span(self) -> Optional[float]:
        return 1.0

    @property
    def max_offset(self) -> float:
        return 1.0

    @property
    def min_offset(self) -> float:
        return 1.0

    @property
    def finite_realization(self) -> bool:
        return True

    def validate(self) -> None:
        if self.mean_offspring <= 1.0:
            raise AssumptionViolation(
                "A.2",
                f"mean offspring {self.mean_offspring:g} <= 1 (subcritical or critical)",
            )

    # -- intensity data ------------------------------------------------
    @property
    def laplace_domain_min(self) -> float:
        return -math.inf

    def laplace(self, z: complex) -> complex:
        return self.mean_offspring * cmath.exp(-z)

    def laplace_deriv(self, z: complex) -> complex:
        return -self.mean_offspring * cmath.exp(-z)

    def mean_measure(self, t: float) -> float:
        """mu([0, t])."""
        return self.mean_offspring if t >= 1.0 else 0.0

    def tilted_tail(self, theta: float, c: float) -> float:
        """Integral of exp(-theta*x) mu(dx) over (c, inf)."""
        return self.mean_offspring * math.exp(-theta) if c < 1.0 else 0.0

    def xi_hat_second_moment(self, theta: float) -> float:
        return math.exp(-2.0 * theta) * self.second_moment_offspring

    def atoms(self) -> tuple[tuple[float, float], ...]:
        """Support atoms of the intensity measure as (offset, mass) pairs."""
        return ((1.0, self.mean_offspring),)

    # -- sampling ------------------------------------------------------
    def sample_offsets(self, rng: np.random.Generator, window: float):
        """One realization of the birth offsets.

        Finite realizations are returned in full regardless of
        ``window``; the returned knowledge cut is +inf.
        """
        n = int(np.searchsorted(self._cum(), rng.random(), side="right"))
        return [1.0] * n, math.inf

    def extend_offsets(self, rng, offsets, old_cut, new_cut):
        raise ConfigurationError("Galton-Watson realizations are always complete")

    def _cum(self):
        cum = getattr(self, "_cum_cache", None)
        if cum is None:
            cum = np.cumsum(np.asarray(self.probs, dtype=float))
            object.__setattr__(self, "_cum_cache", cum)
        return cum


@dataclass(frozen=True)
class Fragmentation:
    """Finite mixture of deterministic dislocation vectors.

    ``components`` maps each vector ``(V_1 .. V_b)`` (``b >= 2``,
    ``sum V_i = 1``, ``0 <= V_i < 1``) to a mixture weight.  A child is
    born at offset ``-log V_i`` for every positive entry.
    """

    components: tuple[tuple[float, tuple[float, ...]], ...]

    def __post_init__(self):
        comps = []
        for weight, vec in self.components:
            comps.append((float(weight), tuple(float(v) for v in vec)))
        object.__setattr__(self, "components", tuple(comps))
        weights = [w for w, _ in self.components]
        if not weights or any(w < 0 for w in weights):
            raise ConfigurationError("mixture weights must be non-negative")
        if abs(sum(weights) - 1.0) > _PROB_TOL:
            raise ConfigurationError(f"mixture weights must sum to 1 +/- {_PROB_TOL}")
        for _, vec in self.components:
            if len(vec) < 2:
                raise ConfigurationError("dislocation vectors need b >= 2 entries")
            if any(v < 0 or v >= 1 for v in vec):
                raise ConfigurationError("dislocation entries must lie in [0, 1)")
            if abs(sum(vec) - 1.0) > _PROB_TOL:
                raise ConfigurationError(
                    f"dislocation vector must sum to 1 +/- {_PROB_TOL}, got {sum(vec)!r}"
                )
        offsets = tuple(
            tuple(sorted(-math.log(v) for v in vec if v > 0.0))
            for _, vec in self.components
        )
        object.__setattr__(self, "_offsets", offsets)

    # -- moments -------------------------------------------------------
    @property
    def mean_offspring(self) -> float:
        return float(sum(w * len(off) for (w, _), off in zip(self.components, self._offsets)))

    @property
    def atom_at_zero(self) -> float:
        return 0.0

    @property
    def lattice_span(self) -> Optional[float]:
        all_offsets = [o for off in self._offsets for o in off]
        return _float_gcd(all_offsets)

    @property
    def max_offset(self) -> float:
        return max(o for off in self._offsets for o in off)

    @property
    def min_offset(self) -> float:
        return min((o for off in self._offsets for o in off), default=0.0)

    @property
    def finite_realization(self) -> bool:
        return True

    def validate(self) -> None:
        if self.mean_offspring <= 1.0:
            raise AssumptionViolation(
                "A.2",
                f"mean number of positive fragments {self.mean_offspring:g} <= 1",
            )

    # -- intensity data ------------------------------------------------
    @property
    def laplace_domain_min(self) -> float:
        return -math.inf

    def laplace(self, z: complex) -> complex:
        total = 0.0 + 0.0j
        for (w, _), off in zip(self.components, self._offsets):
            total += w * sum(cmath.exp(-z * o) for o in off)
        return total

    def laplace_deriv(self, z: complex) -> complex:
        total = 0.0 + 0.0j
        for (w, _), off in zip(self.components, self._offsets):
            total += w * sum(-o * cmath.exp(-z * o) for o in off)
        return total

    def mean_measure(self, t: float) -> float:
        return float(
            sum(
                w * sum(1 for o in off if o <= t)
                for (w, _), off in zip(self.components, self._offsets)
            )
        )

    def tilted_tail(self, theta: float, c: float) -> float:
        return float(
            sum(
                w * sum(math.exp(-theta * o) for o in off if o > c)
                for (w, _), off in zip(self.components, self._offsets)
            )
        )

    def xi_hat_second_moment(self, theta: float) -> float:
        return float(
            sum(
                w * sum(math.exp(-theta * o) for o in off) ** 2
                for (w, _), off in zip(self.components, self._offsets)
            )
        )

    def atoms(self) -> tuple[tuple[float, float], ...]:
        """Support atoms of the intensity measure as (offset, mass) pairs."""
        masses: dict[float, float] = {}
        for (w, _), off in zip(self.components, self._offsets):
            for o in off:
                masses[o] = masses.get(o, 0.0) + w
        return tuple(sorted(masses.items()))

    # -- sampling ------------------------------------------------------
    def sample_offsets(self, rng: np.random.Generator, window: float):
        u = rng.random()
        acc = 0.0
        offsets = self._offsets[-1]
        for (w, _), off in zip(self.components, self._offsets):
            acc += w
            if u <= acc:
                offsets = off
                break
        return list(offsets), math.inf

    def extend_offsets(self, rng, offsets, old_cut, new_cut):
        raise ConfigurationError("fragmentation realizations are always complete")


@dataclass(frozen=True)
class PoissonIntensity:
    """Poisson point process with intensity a*exp(b*x) on [0, inf)."""

    a: float
    b_exp: int

    def __post_init__(self):
        if self.a <= 0:
            raise ConfigurationError("intensity scale a must be positive")
        if self.b_exp not in (-1, 0, 1):
            raise ConfigurationError("exponent b must be one of -1, 0, 1")
        if self.b_exp != 0 and self.a <= 1:
            raise ConfigurationError("a > 1 is required when b is -1 or +1")

    # -- moments -------------------------------------------------------
    @property
    def mean_offspring(self) -> float:
        return self.a if self.b_exp == -1 else math.inf

    @property
    def atom_at_zero(self) -> float:
        return 0.0

    @property
    def lattice_span(self) -> Optional[float]:
        return None

    @property
    def max_offset(self) -> float:
        return math.inf

    @property
    def min_offset(self) -> float:
        return 0.0

    @property
    def finite_realization(self) -> bool:
        return self.b_exp == -1

    def validate(self) -> None:
        if self.mean_offspring <= 1.0:
            raise AssumptionViolation(
                "A.2", f"mean offspring {self.mean_offspring:g} <= 1"
            )

    # -- intensity data ------------------------------------------------
    @property
    def laplace_domain_min(self) -> float:
        return float(self.b_exp)

    def laplace(self, z: complex) -> complex:
        if complex(z).real <= self.b_exp:
            raise DomainError(
                f"Laplace transform of Poisson intensity diverges for Re(z) <= {self.b_exp}"
            )
        return self.a / (complex(z) - self.b_exp)

    def laplace_deriv(self, z: complex) -> complex:
        if complex(z).real <= self.b_exp:
            raise DomainError(
                f"Laplace transform of Poisson intensity diverges for Re(z) <= {self.b_exp}"
            )
        return -self.a / (complex(z) - self.b_exp) ** 2

    def cumulative_intensity(self, t: float) -> float:
        """mu([0, t]) = integral of a*exp(b*x) over [0, t]."""
        if t <= 0:
            return 0.0
        b = self.b_exp
        if b == 0:
            return self.a * t
        return self.a * (math.exp(b * t) - 1.0) / b

    mean_measure = cumulative_intensity

    def tilted_tail(self, theta: float, c: float) -> float:
        if theta <= self.b_exp:
            raise DomainError("tilted tail diverges for theta <= b")
        c = max(c, 0.0)
        return self.a * math.exp((self.b_exp - theta) * c) / (theta - self.b_exp)

    def xi_hat_second_moment(self, theta: float) -> float:
        # Campbell: variance is the second tilted moment of the intensity,
        # the mean is the Laplace transform.
        if 2 * theta <= self.b_exp:
            raise DomainError("second moment diverges for 2*theta <= b")
        var = self.a / (2 * theta - self.b_exp)
        mean = self.a / (theta - self.b_exp)
        return var + mean * mean

    # -- sampling ------------------------------------------------------
    def _inverse_positions(self, u: np.ndarray, window: float) -> np.ndarray:
        b = self.b_exp
        if b == 0:
            return u * window
        if b == -1:
            return -np.log1p(-u * (1.0 - math.exp(-window)))
        return np.log1p(u * math.expm1(window))

    def sample_offsets(self, rng: np.random.Generator, window: float):
        """Births on [0, window]; the remainder of the process stays latent."""
        if self.b_exp == -1:
            # finite total count: materialize the whole realization
            n = rng.poisson(self.a)
            offsets = np.sort(rng.exponential(size=n)) if n else np.empty(0)
            return offsets.tolist(), math.inf
        if window <= 0:
            return [], 0.0
        n = rng.poisson(self.cumulative_intensity(window))
        if n == 0:
            return [], window
        pos = np.sort(self._inverse_positions(rng.random(n), window))
        return pos.tolist(), window

    def extend_offsets(self, rng: np.random.Generator, offsets, old_cut, new_cut):
        """Append the births in (old_cut, new_cut] to an existing realization."""
        if new_cut <= old_cut:
            return offsets, old_cut
        mass = self.cumulative_intensity(new_cut) - self.cumulative_intensity(old_cut)
        n = rng.poisson(mass)
        if n:
            u = rng.random(n)
            if self.b_exp == 0:
                pos = old_cut + u * (new_cut - old_cut)
            elif self.b_exp == 1:
                lo, hi = math.expm1(old_cut), math.expm1(new_cut)
                pos = np.log1p(lo + u * (hi - lo))
            else:  # pragma: no cover - b=-1 is always complete
                raise ConfigurationError("complete realization needs no extension")
            offsets = offsets + sorted(pos.tolist())
        return offsets, new_cut


BirthLaw = Union[GaltonWatson, Fragmentation, PoissonIntensity]


@dataclass(frozen=True)
class IntensityData:
    """Analytic data of the intensity measure mu = E[xi].

    ``laplace`` evaluates the Laplace transform on its convergence
    domain (complex arguments allowed), ``mu_mass`` is the mean total
    number of children, ``mu_atom_at_zero`` the mass of {0} and
    ``lattice_span`` the detected grid span (None for non-lattice laws).
    """

    laplace: Callable[[complex], complex]
    laplace_deriv: Callable[[complex], complex]
    mu_mass: float
    mu_atom_at_zero: float
    lattice_span: Optional[float]
    domain_min: float
    law: BirthLaw = field(repr=False)


def validate_law(law: BirthLaw) -> None:
    """Check A.1 (atom at zero) and A.2 (supercriticality)."""
    if law.atom_at_zero >= 1.0:
        raise AssumptionViolation("A.1", f"mu({{0}}) = {law.atom_at_zero:g} >= 1")
    law.validate()


def intensity_data(law: BirthLaw) -> IntensityData:
    """Analytic intensity data for a validated catalog law."""
    validate_law(law)
    return IntensityData(
        laplace=law.laplace,
        laplace_deriv=law.laplace_deriv,
        mu_mass=law.mean_offspring,
        mu_atom_at_zero=law.atom_at_zero,
        lattice_span=law.lattice_span,
        domain_min=law.laplace_domain_min,
        law=law,
    )


def sample_births(law: BirthLaw, horizon: float, rng: np.random.Generator) -> list[float]:
    """One realization of the birth offsets restricted to [0, horizon].

    Offsets beyond the horizon are never materialized for laws whose
    realizations are infinite; finite realizations are drawn in full and
    truncated.  Repeated calls with the same stream state are identical.
    """
    if horizon < 0:
        raise ConfigurationError("horizon must be non-negative")
    validate_law(law)
    offsets, _ = law.sample_offsets(rng, horizon)
    return [x for x in offsets if x <= horizon]
