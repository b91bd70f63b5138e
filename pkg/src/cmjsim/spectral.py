"""Malthusian parameter, tilted mean age, and the critical-strip root scan.

The growth exponent ``alpha`` is the positive real root of
``muhat(alpha) = 1`` where ``muhat`` is the Laplace transform of the
intensity measure.  ``beta = -muhat'(alpha)`` is the tilted mean age at
childbearing.  The scan locates every root of ``muhat(z) = 1`` with
``Re(z) >= alpha/2`` (restricted to one period of the imaginary axis in
the lattice case) via argument-principle winding counts over a
rectangle quadtree, refining each hit with a multiplicity-aware Newton
iteration.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AssumptionViolation, CmjError, ConfigurationError
from .models import BirthLaw, IntensityData, validate_law


@dataclass(frozen=True)
class MalthusianSolution:
    """Solved spectral data for one birth law."""

    alpha: float
    beta: float
    lattice_span: Optional[float]
    roots: tuple[tuple[complex, int], ...]
    residual: float
    boundary_roots_present: bool

    @property
    def simple_root_only(self) -> bool:
        """True when the strip contains only the simple real root alpha."""
        if self.boundary_roots_present or len(self.roots) != 1:
            return False
        lam, mult = self.roots[0]
        return mult == 1 and abs(lam - self.alpha) < 1e-8

    def to_report(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "lattice_span": self.lattice_span,
            "roots": [
                {"re": lam.real, "im": lam.imag, "multiplicity": mult}
                for lam, mult in self.roots
            ],
            "boundary_roots_present": self.boundary_roots_present,
        }


def solve_malthusian(data: IntensityData, tol: float = 1e-12) -> float:
    """Positive root of muhat(alpha) = 1 by bracketing plus safeguarded Newton."""
    if tol <= 0:
        raise ConfigurationError("tolerance must be positive")
    f = lambda x: (data.laplace(x) - 1.0).real

    lo = data.domain_min + max(1e-9, abs(data.domain_min) * 1e-9) if math.isfinite(
        data.domain_min
    ) else 1e-9
    if f(lo) <= 0:
        raise AssumptionViolation(
            "A.3", "muhat never exceeds 1 on its domain; no Malthusian parameter"
        )
    hi = lo + 1.0
    for _ in range(200):
        if f(hi) < 0:
            break
        lo = hi
        hi = data.domain_min + 2 * (hi - data.domain_min) if math.isfinite(
            data.domain_min
        ) else 2 * hi
    else:
        raise AssumptionViolation("A.3", "no sign change found; muhat(x) stays above 1")

    x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = f(x)
        if abs(fx) <= tol:
            break
        if fx > 0:
            lo = x
        else:
            hi = x
        dfx = data.laplace_deriv(x).real
        step = x - fx / dfx if dfx != 0 else None
        x = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
    if abs(f(x)) > tol:
        raise CmjError(f"Malthusian solve stalled at residual {abs(f(x)):.3e}")
    return float(x)


def compute_beta(data: IntensityData, alpha: float) -> float:
    """Tilted mean age at childbearing, computed analytically as -muhat'(alpha)."""
    beta = -data.laplace_deriv(alpha).real
    if not (beta > 0 and math.isfinite(beta)):
        raise AssumptionViolation("A.4", f"beta = {beta!r} is not in (0, inf)")
    return float(beta)


class _ContourUnstable(Exception):
    pass


def _boundary_winding(f, corners, min_samples: int = 64, near_zero: float = 1e-12):
    """Winding number of f around 0 along the closed polyline through corners."""
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        n = min_samples
        for _ in range(10):
            ts = np.linspace(0.0, 1.0, n + 1)
            zs = [a + (b - a) * t for t in ts]
            vals = [f(z) for z in zs]
            if any(abs(v) < near_zero for v in vals):
                raise _ContourUnstable("root on or very near the contour")
            args = np.unwrap([cmath.phase(v) for v in vals])
            steps = np.abs(np.diff(args))
            if steps.max() < 0.8:
                total += args[-1] - args[0]
                break
            n *= 2
        else:
            raise _ContourUnstable("argument variation did not stabilize")
    winding = total / (2.0 * math.pi)
    if abs(winding - round(winding)) > 1e-3:
        raise _ContourUnstable(f"non-integer winding {winding!r}")
    return int(round(winding))


def _refine_root(f, df, z0: complex, multiplicity: int, residual_tol: float) -> complex:
    z = z0
    for _ in range(100):
        fz = f(z)
        if abs(fz) <= residual_tol:
            return z
        dfz = df(z)
        if dfz == 0:
            break
        z = z - multiplicity * fz / dfz
    if abs(f(z)) <= residual_tol * 100:
        return z
    raise CmjError(f"root refinement stalled near {z!r}, residual {abs(f(z)):.3e}")


def scan_roots(
    data: IntensityData,
    alpha: float,
    *,
    im_max: float = 50.0,
    box_tol: float = 1e-8,
    residual_tol: float = 1e-10,
    boundary_tol: float = 1e-8,
) -> tuple[tuple[tuple[complex, int], ...], bool]:
    """All roots of muhat(z) = 1 in the closed strip Re(z) >= alpha/2.

    Returns (roots, boundary_roots_present) where roots is a tuple of
    (location, multiplicity) pairs.  In the lattice case the scan covers
    one period Im in (-pi/span, pi/span]; otherwise it is truncated at
    ``im_max`` (roots beyond that height are not found).
    """
    f = lambda z: data.laplace(z) - 1.0
    df = data.laplace_deriv

    # No roots exist to the right of alpha: |muhat(z)| <= muhat(Re z) < 1 there.
    re_hi = alpha + 0.2 * max(1.0, alpha)
    re_lo_target = alpha / 2.0
    span = data.lattice_span
    if span is not None:
        im_hi_target = math.pi / span
        im_lo_target = -math.pi / span
    else:
        im_hi_target = im_max
        im_lo_target = -im_max

    for attempt in range(6):
        # Perturb the contour a little so roots do not sit on it; keep the
        # left edge strictly left of the critical line so boundary roots are
        # interior to the search box.
        eps = (1.0 + 3.0 * attempt) * 1e-4 * max(alpha, 1.0)
        re_lo = re_lo_target - 10 * max(boundary_tol, eps * 1e-2)
        if math.isfinite(data.domain_min):
            re_lo = max(re_lo, data.domain_min + 1e-9)
        shift = (1.0 + 7.0 * attempt) * 1e-4
        if span is not None:
            im_lo = im_lo_target + shift * math.pi / span
            im_hi = im_hi_target + shift * math.pi / span
        else:
            im_lo, im_hi = im_lo_target - shift, im_hi_target + shift
        try:
            found = _scan_box(
                f, df, re_lo, re_hi + eps, im_lo, im_hi, box_tol, residual_tol
            )
            break
        except _ContourUnstable:
            if attempt == 5:
                raise CmjError(
                    "winding computation unstable after repeated contour perturbation"
                )
    merged: list[tuple[complex, int]] = []
    for z, m in found:
        for i, (z2, m2) in enumerate(merged):
            if abs(z - z2) < 1e-5 * max(1.0, abs(z)):
                merged[i] = (z2, max(m, m2))
                break
        else:
            merged.append((z, m))
    roots = [(z, m) for z, m in merged if z.real >= alpha / 2.0 - boundary_tol]
    boundary = any(abs(z.real - alpha / 2.0) <= boundary_tol for z, _ in roots)
    roots.sort(key=lambda zm: (-zm[0].real, zm[0].imag))
    for z, _ in roots:
        if abs(f(z)) > 1e-8:
            raise CmjError(f"reported root {z!r} has residual {abs(f(z)):.3e}")
    return tuple(roots), boundary


_SPLIT_FRACTIONS = (0.5, 0.431, 0.573, 0.369, 0.627)


def _scan_box(f, df, re_lo, re_hi, im_lo, im_hi, box_tol, residual_tol):
    """Roots inside the rectangle by winding counts and long-side bisection.

    Boxes with zero winding are pruned immediately.  Once a box is
    moderately small a multiplicity-aware Newton refinement is attempted
    from the center; the refined root is accepted when a tiny contour
    around it carries the full winding of the box.  Split lines are
    jittered when a root sits too close to a candidate contour.
    """
    corners = [
        complex(re_lo, im_lo),
        complex(re_hi, im_lo),
        complex(re_hi, im_hi),
        complex(re_lo, im_hi),
    ]
    w = _boundary_winding(f, corners)
    if w == 0:
        return []
    width, height = re_hi - re_lo, im_hi - im_lo
    diam = max(width, height)
    if diam <= 0.75:
        center = complex(0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi))
        try:
            root = _refine_root(f, df, center, w, residual_tol)
        except CmjError:
            root = None
        if (
            root is not None
            and re_lo - box_tol <= root.real <= re_hi + box_tol
            and im_lo - box_tol <= root.imag <= im_hi + box_tol
        ):
            r = max(1e-5 * max(1.0, abs(root)), 10 * box_tol)
            verify = [
                root + complex(-r, -r),
                root + complex(r, -r),
                root + complex(r, r),
                root + complex(-r, r),
            ]
            try:
                mult = _boundary_winding(f, verify)
                # a root sitting on a split line shares its winding between
                # sibling boxes; accept the locally verified multiplicity and
                # let the merge step collapse duplicates
                if mult >= w:
                    if mult != w:
                        root = _refine_root(f, df, root, mult, residual_tol)
                    return [(root, mult)]
            except (_ContourUnstable, CmjError):
                pass
    if diam <= box_tol:
        center = complex(0.5 * (re_lo + re_hi), 0.5 * (im_lo + im_hi))
        return [(center, w)]
    for frac in _SPLIT_FRACTIONS:
        try:
            if width >= height:
                mid = re_lo + frac * width
                return _scan_box(
                    f, df, re_lo, mid, im_lo, im_hi, box_tol, residual_tol
                ) + _scan_box(f, df, mid, re_hi, im_lo, im_hi, box_tol, residual_tol)
            mid = im_lo + frac * height
            return _scan_box(
                f, df, re_lo, re_hi, im_lo, mid, box_tol, residual_tol
            ) + _scan_box(f, df, re_lo, re_hi, mid, im_hi, box_tol, residual_tol)
        except _ContourUnstable:
            continue
    raise _ContourUnstable("all split lines pass too close to a root")


@dataclass(frozen=True)
class A7Check:
    """Second moment of the tilted point process mass at tilt theta."""

    ok: bool
    estimate: float
    standard_error: Optional[float]
    method: str


def check_a7(
    law: BirthLaw,
    alpha: float,
    theta: float,
    *,
    rng: Optional[np.random.Generator] = None,
    n_samples: int = 20000,
) -> A7Check:
    """Verify E[(sum_i exp(-theta*X_i))^2] < infinity at some theta in (0, alpha/2).

    Uses the analytic closed form when the law provides one, otherwise a
    Monte Carlo estimate whose stability is probed by sample-size
    doubling.
    """
    if not (0.0 < theta < alpha / 2.0):
        raise ConfigurationError("theta must lie in (0, alpha/2)")
    try:
        value = law.xi_hat_second_moment(theta)
        return A7Check(math.isfinite(value), float(value), None, "analytic")
    except (AttributeError, NotImplementedError):
        pass
    if rng is None:
        rng = np.random.default_rng(0)
    window = max(1.0, 40.0 / theta)

    def batch(n):
        vals = np.empty(n)
        for i in range(n):
            offsets, cut = law.sample_offsets(rng, window)
            s = sum(math.exp(-theta * x) for x in offsets)
            if math.isfinite(cut):
                s += law.tilted_tail(theta, cut)
            vals[i] = s * s
        return vals

    half = batch(n_samples // 2)
    full = np.concatenate([half, batch(n_samples - n_samples // 2)])
    est_half, est_full = float(half.mean()), float(full.mean())
    se = float(full.std(ddof=1) / math.sqrt(len(full)))
    diverging = est_full > est_half * 1.5 + 8 * se
    return A7Check(not diverging, est_full, se, "monte-carlo")


def analyze(
    law: BirthLaw,
    *,
    tol: float = 1e-12,
    im_max: float = 50.0,
) -> MalthusianSolution:
    """Full spectral solve: alpha, beta, lattice span, and the strip roots."""
    from .models import intensity_data

    validate_law(law)
    data = intensity_data(law)
    alpha = solve_malthusian(data, tol)
    beta = compute_beta(data, alpha)
    roots, boundary = scan_roots(data, alpha, im_max=im_max)
    has_alpha = any(abs(z - alpha) < 1e-7 and m == 1 for z, m in roots)
    if not has_alpha:
        raise CmjError("scan did not recover the Malthusian root with multiplicity 1")
    residual = abs(data.laplace(alpha) - 1.0)
    return MalthusianSolution(
        alpha=alpha,
        beta=beta,
        lattice_span=data.lattice_span,
        roots=roots,
        residual=float(residual),
        boundary_roots_present=boundary,
    )
