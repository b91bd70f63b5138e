"""Numerical renewal theory for the tilted intensity measure.

The tilted measure ``mu_alpha(dx) = exp(-alpha x) mu(dx)`` is a
probability measure; its renewal measure (including the unit atom at
zero) carries all first-moment information about the counted process:

* ``mean_process`` convolves a characteristic's mean function against
  the renewal measure,
* ``key_renewal_limit`` computes the limit constant
  ``a = (1/beta) * integral of E[phi](x) exp(-alpha x)`` over the time
  group (a lattice sum or a Lebesgue integral),
* ``check_e1`` probes the growth of the remainder after subtracting
  ``a * exp(alpha t)`` from the mean process,
* ``sigma_squared`` evaluates the limit variance by Monte Carlo
  integration of the second moment of the centred shifted
  characteristic against ``exp(-alpha s)``.

Three kernel modes cover the catalog exactly: a lattice mass recursion,
the closed-form renewal density of the exponential tilt of a Poisson
intensity, and finite-atom convolution for atomic non-lattice laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .characteristics import (
    Characteristic,
    ProjectionContext,
    TiltedTailShift,
    build_chi_context,
    chi,
    shifted_characteristic,
)
from .errors import CmjError, ConfigurationError, UnsupportedRegime
from .models import BirthLaw, PoissonIntensity
from .spectral import MalthusianSolution

_ATOM_PRUNE = 1e-15


@dataclass
class RenewalKernel:
    """Renewal data of the tilted intensity measure for one law."""

    law: BirthLaw
    alpha: float
    beta: float
    span: Optional[float]
    mode: str = field(init=False)
    _lattice_p: Optional[np.ndarray] = field(init=False, default=None)
    _lattice_nu: Optional[list] = field(init=False, default=None)
    _atoms: Optional[tuple] = field(init=False, default=None)
    _atom_cap: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.span is not None:
            self.mode = "lattice"
            atoms = self.law.atoms()
            kmax = max(round(o / self.span) for o, _ in atoms)
            p = np.zeros(kmax + 1)
            for o, m in atoms:
                k = round(o / self.span)
                if abs(o - k * self.span) > 1e-9 * max(1.0, o):
                    raise ConfigurationError(
                        f"atom at {o:g} is off the lattice with span {self.span:g}"
                    )
                p[k] += math.exp(-self.alpha * o) * m
            if abs(p.sum() - 1.0) > 1e-10:
                raise CmjError(
                    f"tilted masses sum to {p.sum():.12g}, expected 1 +/- 1e-10"
                )
            if p[0] >= 1.0:
                raise ConfigurationError("tilted atom at zero has full mass")
            self._lattice_p = p
            self._lattice_nu = [1.0 / (1.0 - p[0])]
        elif isinstance(self.law, PoissonIntensity):
            self.mode = "poisson"
        elif hasattr(self.law, "atoms"):
            self.mode = "atomic"
        else:
            raise ConfigurationError(
                f"no renewal kernel for {self.law!r}: need a lattice, a Poisson "
                "intensity, or an atomic intensity measure"
            )

    # -- lattice renewal masses -----------------------------------------
    def lattice_masses(self, n: int) -> np.ndarray:
        """Tilted renewal masses nu_alpha(0..n) on the span grid.

        Satisfies nu(k) = delta_k0 + sum_j p(j) nu(k-j); the values
        converge to span/beta by the elementary renewal theorem.
        """
        if self.mode != "lattice":
            raise ConfigurationError("lattice masses need a lattice kernel")
        nu = self._lattice_nu
        p = self._lattice_p
        p0 = p[0]
        while len(nu) <= n:
            k = len(nu)
            acc = 0.0
            for j in range(1, min(k, len(p) - 1) + 1):
                acc += p[j] * nu[k - j]
            nu.append(acc / (1.0 - p0))
        return np.asarray(nu[: n + 1])

    # -- atomic renewal atoms ---------------------------------------------
    def renewal_atoms(self, cap: float):
        """Tilted renewal atoms (x, mass) with x <= cap, pruned below 1e-15.

        The unit atom at zero is included.  Total pruned mass is
        returned alongside for truncation-error reporting.
        """
        if self.mode != "atomic":
            raise ConfigurationError("renewal atoms need an atomic kernel")
        if self._atoms is not None and cap <= self._atom_cap:
            xs, ws, pruned = self._atoms
            keep = xs <= cap
            return xs[keep], ws[keep], pruned
        base = [(o, math.exp(-self.alpha * o) * m) for o, m in self.law.atoms()]
        acc: dict[float, float] = {0.0: 1.0}
        conv: dict[float, float] = {0.0: 1.0}
        pruned = 0.0
        for _ in range(100000):
            nxt: dict[float, float] = {}
            for x, w in conv.items():
                for o, m in base:
                    y = x + o
                    wy = w * m
                    if y > cap or wy < _ATOM_PRUNE:
                        pruned += wy
                        continue
                    nxt[y] = nxt.get(y, 0.0) + wy
            if not nxt:
                break
            for y, wy in nxt.items():
                acc[y] = acc.get(y, 0.0) + wy
            conv = nxt
        xs = np.array(sorted(acc))
        ws = np.array([acc[x] for x in xs])
        self._atoms = (xs, ws, pruned)
        self._atom_cap = cap
        return xs, ws, pruned

    @property
    def c_alpha(self) -> float:
        """Integral of exp(-alpha x) over the non-negative part of the time group."""
        if self.span is not None:
            d = self.span
            return d / (1.0 - math.exp(-self.alpha * d))
        return 1.0 / self.alpha


def make_kernel(law: BirthLaw, solution: MalthusianSolution) -> RenewalKernel:
    return RenewalKernel(
        law=law, alpha=solution.alpha, beta=solution.beta, span=solution.lattice_span
    )


# -- mean process ---------------------------------------------------------


def mean_process(
    kernel: RenewalKernel, mean_fn: Callable[[float], float], t: float
) -> tuple[float, float]:
    """E[Z_t^phi] for a characteristic vanishing on negatives.

    Returns (value, error_bound); the bound is zero for exact lattice
    sums, the quadrature estimate for the Poisson closed form, and the
    pruned-tail bound for atomic convolution.
    """
    if t < 0:
        return 0.0, 0.0
    a = kernel.alpha
    if kernel.mode == "lattice":
        d = kernel.span
        n = int(math.floor(t / d + 1e-9))
        nu = kernel.lattice_masses(n)
        total = 0.0
        for k in range(n + 1):
            total += mean_fn(t - k * d) * math.exp(a * k * d) * nu[k]
        return total, 0.0
    if kernel.mode == "poisson":
        from scipy.integrate import quad

        law = kernel.law
        tilted = lambda y: mean_fn(y) * math.exp(-a * y)
        integral, err = quad(tilted, 0.0, t, epsabs=1e-12, epsrel=1e-10, limit=400)
        value = math.exp(a * t) * (tilted(t) + law.a * integral)
        return value, math.exp(a * t) * law.a * err
    xs, ws, pruned = kernel.renewal_atoms(t)
    total = 0.0
    for x, w in zip(xs, ws):
        if x > t:
            break
        total += mean_fn(t - x) * math.exp(a * x) * w
    return total, pruned * math.exp(a * t)


# -- key renewal limit ------------------------------------------------------


def _simpson_doubling(f: Callable[[float], float], tol: float = 1e-12) -> float:
    """Integral of f over [0, inf) for integrands with exponential decay."""
    total = 0.0
    a, width = 0.0, 1.0
    for _ in range(60):
        seg_prev = None
        n = 8
        while True:
            xs = np.linspace(a, a + width, n + 1)
            ys = np.array([f(x) for x in xs])
            seg = (width / n / 3.0) * (
                ys[0] + ys[-1] + 4 * ys[1:-1:2].sum() + 2 * ys[2:-1:2].sum()
            )
            if seg_prev is not None and abs(seg - seg_prev) <= tol * (1 + abs(total)):
                break
            if n >= 4096:
                break
            seg_prev, n = seg, n * 2
        total += seg
        if abs(seg) <= tol * (1.0 + abs(total)) and width > 8.0:
            break
        a += width
        width *= 2.0
    return total


def key_renewal_limit(
    kernel: RenewalKernel, mean_fn: Callable[[float], float]
) -> float:
    """Limit of exp(-alpha t) m_t: (1/beta) * integral of the tilted mean.

    Lattice laws sum span * E[phi](k*span) * exp(-alpha k span) over the
    grid; non-lattice laws integrate over the half-line with a
    doubling-interval Simpson rule.
    """
    a, beta = kernel.alpha, kernel.beta
    if kernel.span is not None:
        d = kernel.span
        total = 0.0
        k = 0
        while True:
            term = mean_fn(k * d) * math.exp(-a * k * d)
            total += term
            k += 1
            if k > 64 and math.exp(-a * k * d) < 1e-18 * (1.0 + abs(total)):
                break
            if k > 1_000_000:
                raise CmjError("lattice renewal limit did not converge")
        return d * total / beta
    tilted = lambda x: mean_fn(x) * math.exp(-a * x)
    return _simpson_doubling(tilted) / beta


def h_lambda_mean(
    a_alpha: float,
    alpha: float,
    t: float,
    solution: Optional[MalthusianSolution] = None,
) -> float:
    """Mean of the projected growth term: a_alpha * exp(alpha t).

    Valid only in the simple-root regime; extra or boundary roots make
    the growth term polynomial/oscillatory, which is out of scope.
    """
    if solution is not None and not solution.simple_root_only:
        raise UnsupportedRegime(
            "mean growth term requires the critical strip to contain only the "
            "simple real root"
        )
    return a_alpha * math.exp(alpha * t)


# -- growth-remainder diagnostic --------------------------------------------


@dataclass(frozen=True)
class MeanExpansion:
    """Remainder diagnostics for m_t = a * exp(alpha t) + r(t)."""

    a_alpha: float
    remainder_samples: tuple[tuple[float, float], ...]
    decay_exponent_fit: float
    max_scaled_remainder: float
    passed: bool


def check_e1(
    kernel: RenewalKernel,
    mean_fn: Callable[[float], float],
    a_alpha: float,
    alpha: float,
    t_grid,
) -> MeanExpansion:
    """Check |r(t)| <= C exp(alpha t / 2) / (1 + t^2) on a time grid.

    The remainder r(t) = m_t - a_alpha exp(alpha t) is sampled on the
    grid (snapped to the lattice when applicable); the diagnostic fits
    an exponential growth rate to |r(t)| exp(-alpha t / 2) (1 + t^2) and
    passes when the fitted rate stays well below alpha/2, the signature
    of a genuinely mis-set growth coefficient.
    """
    d = kernel.span
    ts = []
    for t in t_grid:
        if d is not None:
            t = round(t / d) * d
        if t >= 0 and (not ts or t > ts[-1]):
            ts.append(float(t))
    if len(ts) < 4:
        raise ConfigurationError("need at least 4 distinct grid times")
    samples = []
    scaled = []
    for t in ts:
        m, _ = mean_process(kernel, mean_fn, t)
        r = m - a_alpha * math.exp(alpha * t)
        samples.append((t, r))
        scaled.append(abs(r) * math.exp(-alpha * t / 2.0) * (1.0 + t * t))
    scaled = np.asarray(scaled)
    floor = 1e-13 * (1.0 + abs(a_alpha))
    if np.all(scaled < floor):
        return MeanExpansion(a_alpha, tuple(samples), -math.inf, float(scaled.max()), True)
    tail = max(4, len(ts) // 2)
    xs = np.asarray(ts[-tail:])
    ys = np.log(np.maximum(scaled[-tail:], 1e-300))
    slope = float(np.polyfit(xs, ys, 1)[0])
    passed = slope < alpha / 16.0
    return MeanExpansion(a_alpha, tuple(samples), slope, float(scaled.max()), passed)


# -- limit variance ---------------------------------------------------------


@dataclass(frozen=True)
class SigmaSquared:
    """Monte Carlo estimate of the limit variance constant."""

    value: float
    standard_error: float
    a_alpha: float
    points: tuple[tuple[float, float, float, float], ...]  # (s, mean, se, weight)
    truncation_error_bound: float


def growth_remainder(
    kernel: RenewalKernel, mean_fn: Callable[[float], float], a_alpha: float
) -> Callable[[float], float]:
    """r(t) = m_t - a_alpha exp(alpha t) for t >= 0 (0 for t < 0 is not included)."""

    alpha = kernel.alpha

    def r(t: float) -> float:
        value, _ = mean_process(kernel, mean_fn, t)
        return value - a_alpha * math.exp(alpha * t)

    return r


def sigma_squared(
    law: BirthLaw,
    char: Characteristic,
    solution: MalthusianSolution,
    kernel: RenewalKernel,
    *,
    budget: int = 4000,
    seed: int = 0,
    s_min: Optional[float] = None,
    step: Optional[float] = None,
    rel_tail_tol: float = 1e-3,
    nested_m: int = 200,
    max_points: int = 600,
) -> SigmaSquared:
    """Limit variance: integral of E[chi(s)^2] exp(-alpha s) over the time group.

    ``chi`` is the centred characteristic of ``char`` shifted by the
    growth remainder convolved with the individual's own birth process.
    Each grid point estimates the second moment over ``budget`` fresh
    root contexts; the grid extends in both directions until the
    geometric tail bound drops below ``rel_tail_tol`` of the
    accumulated value.
    """
    if not solution.simple_root_only:
        raise UnsupportedRegime(
            "limit variance path requires a single simple root in the strip"
        )
    if not char.vanishes_on_negative:
        raise ConfigurationError("the base characteristic must vanish on negatives")
    alpha, beta = solution.alpha, solution.beta
    a_alpha = key_renewal_limit(kernel, char.mean)
    r = growth_remainder(kernel, char.mean, a_alpha)
    g = TiltedTailShift(r, a_alpha, alpha)
    shifted = shifted_characteristic(char, g, law)
    tail_window = math.log(1.0 / max(rel_tail_tol * 1e-2, 1e-12)) / alpha

    if kernel.span is not None:
        d = kernel.span
    else:
        d = step if step is not None else 0.25 / alpha
    if s_min is None:
        s_min = 10.0 / alpha
    k_lo = -int(math.ceil(s_min / d))

    points: list[tuple[float, float, float, float]] = []
    total = 0.0
    var_sum = 0.0
    ratio = math.exp(-alpha * d)

    def eval_point(k: int) -> tuple[float, float, float]:
        s = k * d
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5157, k & 0xFFFFFFFF)))
        ctx = ProjectionContext(law=law, rng=rng, nested_m=nested_m)
        vals = np.empty(budget)
        for i in range(budget):
            view = build_chi_context(law, char.h, s, rng, tail_window=tail_window)
            c = chi(shifted, view, s, ctx)
            vals[i] = c * c
        weight = d * math.exp(-alpha * s)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(budget)) if budget > 1 else 0.0
        return mean, se, weight

    # upward sweep from 0, then downward from -1; both tails decay
    # geometrically with ratio exp(-alpha d)
    contrib_hi = math.inf
    k = 0
    while True:
        mean, se, weight = eval_point(k)
        points.append((k * d, mean, se, weight))
        total += mean * weight
        var_sum += (se * weight) ** 2
        contrib_hi = mean * weight
        k += 1
        if k > 8 and contrib_hi * ratio / (1 - ratio) < rel_tail_tol * max(total, 1e-12):
            break
        if len(points) > max_points:
            raise CmjError("variance grid exceeded the point cap; widen tolerances")
    tail_hi = contrib_hi * ratio / (1 - ratio)
    k = -1
    contrib_lo = math.inf
    while k >= k_lo:
        mean, se, weight = eval_point(k)
        points.append((k * d, mean, se, weight))
        total += mean * weight
        var_sum += (se * weight) ** 2
        contrib_lo = mean * weight
        k -= 1
        if len(points) > max_points:
            raise CmjError("variance grid exceeded the point cap; widen tolerances")
    tail_lo = contrib_lo * ratio / (1 - ratio)

    points.sort(key=lambda p: p[0])
    return SigmaSquared(
        value=max(total, 0.0),
        standard_error=math.sqrt(var_sum),
        a_alpha=a_alpha,
        points=tuple(points),
        truncation_error_bound=tail_hi + tail_lo,
    )


# -- Stone decomposition (exponential tilt closed form) ----------------------


@dataclass(frozen=True)
class StoneDecomposition:
    """Split of the tilted renewal density into smooth and remainder parts.

    For a Poisson intensity the tilted inter-birth law is exponential
    with rate a, whose renewal measure is the unit atom at zero plus the
    constant density a.  The density splits as
    ``a = (a - a exp(-theta x)) + a exp(-theta x)`` with the second part
    decaying at rate theta in (alpha/2, alpha); the atom at zero joins
    the finite remainder part.
    """

    theta: float
    epsilon: float

    def smooth_density(self, x: float, law: PoissonIntensity) -> float:
        return law.a - law.a * math.exp(-self.theta * x)

    def remainder_density(self, x: float, law: PoissonIntensity) -> float:
        return law.a * math.exp(-self.theta * x)

    def remainder_exp_moment(self, law: PoissonIntensity) -> float:
        """Integral of exp(epsilon x) over the remainder part (with the atom)."""
        if self.epsilon >= self.theta:
            raise ConfigurationError("epsilon must be below theta")
        return 1.0 + law.a / (self.theta - self.epsilon)


def poisson_stone_decomposition(
    law: PoissonIntensity, alpha: float, theta: Optional[float] = None
) -> StoneDecomposition:
    if not isinstance(law, PoissonIntensity):
        raise ConfigurationError("closed-form decomposition exists for Poisson only")
    if theta is None:
        theta = 0.75 * alpha
    if not (alpha / 2.0 < theta < alpha):
        raise ConfigurationError("theta must lie in (alpha/2, alpha)")
    epsilon = 0.5 * (alpha / 2.0 + theta)
    return StoneDecomposition(theta=theta, epsilon=epsilon)
